use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::NetConfig;
use crate::error::{Error, Result};
use crate::sampling::{make_ratio_set, SamplingOperator};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Initial value of the per-stage fallback step size.
pub const FALLBACK_RHO: f64 = 1.0;
/// Initial value of the per-stage fallback noise level.
pub const FALLBACK_SIGMA: f64 = 0.1;

fn he<T: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    fn init(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: he(vec![n_out, n_in], n_in, rng),
            bias: Tensor::zeros(vec![n_out]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ConvLayer<T> {
    fn init(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: he(vec![c_out, c_in, 3, 3], c_in * 9, rng),
            bias: Tensor::zeros(vec![c_out]),
        }
    }
}

/// `conv3×3 → ReLU → conv3×3` plus identity skip.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<T> {
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
}

/// Condition module: `1 → h → h → 2K` with ReLU, ReLU, Softplus.
#[derive(Clone, Debug, PartialEq)]
pub struct CmParams<T> {
    pub layers: [Linear<T>; 3],
}

/// Learnables of one unrolled stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageParams<T> {
    /// `C×2×3×3`: image and noise map to features.
    pub ext: ConvLayer<T>,
    pub rb1: ResBlock<T>,
    pub rb2: ResBlock<T>,
    /// `1×C×3×3`: features back to an image residual.
    pub rec: ConvLayer<T>,
    /// Step size used when the condition module does not provide one.
    pub rho: Tensor<T>,
    /// Noise level used when the condition module does not provide one.
    pub sigma: Tensor<T>,
}

impl<T: Scalar> StageParams<T> {
    fn init(c: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            ext: ConvLayer::init(2, c, rng),
            rb1: ResBlock {
                conv1: ConvLayer::init(c, c, rng),
                conv2: ConvLayer::init(c, c, rng),
            },
            rb2: ResBlock {
                conv1: ConvLayer::init(c, c, rng),
                conv2: ConvLayer::init(c, c, rng),
            },
            rec: ConvLayer::init(c, 1, rng),
            rho: Tensor::scalar(T::lit(FALLBACK_RHO)),
            sigma: Tensor::scalar(T::lit(FALLBACK_SIGMA)),
        }
    }

    fn tensors(&self) -> [&Tensor<T>; 14] {
        [
            &self.ext.weight,
            &self.ext.bias,
            &self.rb1.conv1.weight,
            &self.rb1.conv1.bias,
            &self.rb1.conv2.weight,
            &self.rb1.conv2.bias,
            &self.rb2.conv1.weight,
            &self.rb2.conv1.bias,
            &self.rb2.conv2.weight,
            &self.rb2.conv2.bias,
            &self.rec.weight,
            &self.rec.bias,
            &self.rho,
            &self.sigma,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 14] {
        [
            &mut self.ext.weight,
            &mut self.ext.bias,
            &mut self.rb1.conv1.weight,
            &mut self.rb1.conv1.bias,
            &mut self.rb1.conv2.weight,
            &mut self.rb1.conv2.bias,
            &mut self.rb2.conv1.weight,
            &mut self.rb2.conv1.bias,
            &mut self.rb2.conv2.weight,
            &mut self.rb2.conv2.bias,
            &mut self.rec.weight,
            &mut self.rec.bias,
            &mut self.rho,
            &mut self.sigma,
        ]
    }
}

/// A complete parameter set `Θ` together with the sampling matrices it was
/// trained for.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: NetConfig,
    /// Present iff [`NetConfig::has_cm`].
    pub cm: Option<CmParams<T>>,
    pub stages: Vec<StageParams<T>>,
    /// One operator per configured ratio, same order.
    pub operators: Vec<SamplingOperator<T>>,
}

impl<T: Scalar> Model<T> {
    /// Freshly initialized model: He-normal weights, zero biases, fallback
    /// scalars at their defaults, Gaussian sampling matrices.
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let operators = make_ratio_set(config.block_size, &config.ratios, config.sampling_seed)?;
        Self::with_operators(config, operators)
    }

    /// Like [`Model::new`] but with caller-supplied operators.
    pub fn with_operators(config: NetConfig, operators: Vec<SamplingOperator<T>>) -> Result<Self> {
        config.validate()?;
        if operators.len() != config.ratios.len() {
            return Err(Error::InvalidArgument(format!(
                "{} operators for {} ratios",
                operators.len(),
                config.ratios.len()
            )));
        }
        for (op, &r) in operators.iter().zip(&config.ratios) {
            if op.block_size() != config.block_size || (op.ratio() - r).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "operator (B={}, γ={}) does not match ratio {r} with B={}",
                    op.block_size(),
                    op.ratio(),
                    config.block_size
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let cm = config.has_cm().then(|| {
            let h = config.cm_hidden;
            CmParams {
                layers: [
                    Linear::init(1, h, &mut rng),
                    Linear::init(h, h, &mut rng),
                    Linear::init(h, 2 * config.stages, &mut rng),
                ],
            }
        });
        let stages = (0..config.stages)
            .map(|_| StageParams::init(config.channels, &mut rng))
            .collect();
        Ok(Self {
            config,
            cm,
            stages,
            operators,
        })
    }

    /// Every learnable tensor in the fixed serialization order: condition
    /// module layers, then stages `1..K` as ext, rb1, rb2, rec, fallbacks.
    pub fn parameters(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        if let Some(cm) = &self.cm {
            for l in &cm.layers {
                out.push(&l.weight);
                out.push(&l.bias);
            }
        }
        for s in &self.stages {
            out.extend(s.tensors());
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        if let Some(cm) = &mut self.cm {
            for l in &mut cm.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        for s in &mut self.stages {
            out.extend(s.tensors_mut());
        }
        out
    }

    /// Names matching [`Model::parameters`], for diagnostics.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.cm.is_some() {
            for i in 1..=3 {
                out.push(format!("cm.fc{i}.weight"));
                out.push(format!("cm.fc{i}.bias"));
            }
        }
        for k in 1..=self.stages.len() {
            for n in [
                "ext.weight", "ext.bias", "rb1.conv1.weight", "rb1.conv1.bias", "rb1.conv2.weight",
                "rb1.conv2.bias", "rb2.conv1.weight", "rb2.conv1.bias", "rb2.conv2.weight",
                "rb2.conv2.bias", "rec.weight", "rec.bias", "rho", "sigma",
            ] {
                out.push(format!("stage{k}.{n}"));
            }
        }
        out
    }

    /// Whether each parameter influences the output under the current
    /// ablation flags (fallback scalars are dead when the CM supplies them).
    pub fn parameter_active(&self) -> Vec<bool> {
        let mut out = Vec::new();
        if self.cm.is_some() {
            out.extend([true; 6]);
        }
        for _ in &self.stages {
            out.extend([true; 12]);
            out.push(!self.config.dus_rho);
            out.push(!self.config.dus_sigma);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// The operator trained for `ratio`.
    pub fn operator(&self, ratio: f64) -> Result<&SamplingOperator<T>> {
        self.config
            .ratio_index(ratio)
            .map(|i| &self.operators[i])
            .ok_or_else(|| Error::UnknownRatio {
                ratio,
                trained: self.config.ratios.clone(),
            })
    }
}
