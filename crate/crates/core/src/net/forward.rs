use super::params::Model;
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::kernels::ConvSpec;
use crate::sampling::{BoundOperator, SamplingOperator};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weight and bias leaves of one affine or convolution layer.
#[derive(Clone, Copy, Debug)]
pub struct BoundLayer {
    pub weight: NodeId,
    pub bias: NodeId,
}

#[derive(Clone, Debug)]
pub struct BoundCm {
    pub layers: [BoundLayer; 3],
}

#[derive(Clone, Debug)]
pub struct BoundStage {
    pub ext: BoundLayer,
    pub rb1: [BoundLayer; 2],
    pub rb2: [BoundLayer; 2],
    pub rec: BoundLayer,
    pub rho: NodeId,
    pub sigma: NodeId,
}

/// Model parameters registered as leaves of one graph.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub cm: Option<BoundCm>,
    pub stages: Vec<BoundStage>,
    /// Leaf ids in [`Model::parameters`] order.
    pub order: Vec<NodeId>,
}

/// Per-stage `(ρ_k, σ_k)` emitted by the condition module.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionOutput<T> {
    pub rho: Vec<T>,
    pub sigma: Vec<T>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ReconstructOptions {
    /// Accept a ratio the model was not trained for.
    pub allow_extrapolation: bool,
}

/// Output of a forward pass: the final image and every stage output
/// `[X̂₀, …, X̂_K]`.
#[derive(Clone, Debug)]
pub struct Reconstruction<T> {
    pub image: Tensor<T>,
    pub trace: Vec<Tensor<T>>,
}

impl<T: Scalar> Reconstruction<T> {
    /// Index into `trace` of the first stage output holding NaN or ±∞.
    pub fn first_nonfinite_stage(&self) -> Option<usize> {
        self.trace.iter().position(|t| !t.all_finite())
    }
}

impl<T: Scalar> Model<T> {
    /// Registers every parameter in `g`, as gradient-receiving leaves when
    /// `trainable` and as constants otherwise.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundModel {
        let ids: Vec<NodeId> = self
            .parameters()
            .into_iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        self.bind_ids(&ids)
    }

    /// Structured view of nodes already holding this model's parameters, in
    /// [`Model::parameters`] order.
    ///
    /// # Panics
    /// If `ids` does not have one entry per parameter tensor.
    pub fn bind_ids(&self, ids: &[NodeId]) -> BoundModel {
        assert_eq!(ids.len(), self.parameters().len(), "one node per parameter tensor");
        let mut it = ids.iter().copied();
        let mut layer = || BoundLayer {
            weight: it.next().expect("checked length"),
            bias: it.next().expect("checked length"),
        };
        let cm = self.cm.as_ref().map(|_| BoundCm {
            layers: [layer(), layer(), layer()],
        });
        let stages = (0..self.stages.len())
            .map(|_| {
                let ext = layer();
                let rb1 = [layer(), layer()];
                let rb2 = [layer(), layer()];
                let rec = layer();
                let fallback = layer();
                BoundStage {
                    ext,
                    rb1,
                    rb2,
                    rec,
                    rho: fallback.weight,
                    sigma: fallback.bias,
                }
            })
            .collect();
        BoundModel {
            cm,
            stages,
            order: ids.to_vec(),
        }
    }

    fn check_ratio(&self, ratio: f64, opts: ReconstructOptions) -> Result<()> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!("CS ratio must lie in (0, 1], got {ratio}")));
        }
        if !opts.allow_extrapolation && self.config.ratio_index(ratio).is_none() {
            return Err(Error::UnknownRatio {
                ratio,
                trained: self.config.ratios.clone(),
            });
        }
        Ok(())
    }

    /// Condition-module output for `ratio`. Fails when the configuration has
    /// no condition module.
    pub fn condition(&self, ratio: f64) -> Result<ConditionOutput<T>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let cm = bound
            .cm
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model has no condition module".into()))?;
        let out = condition_forward(&mut g, cm, ratio)?;
        let v = g.value(out)?.data();
        let k = self.config.stages;
        Ok(ConditionOutput {
            rho: v[..k].to_vec(),
            sigma: v[k..].to_vec(),
        })
    }

    /// Inference-only forward pass.
    pub fn reconstruct(
        &self,
        y: &Tensor<T>,
        op: &SamplingOperator<T>,
        ratio: f64,
        opts: ReconstructOptions,
    ) -> Result<Reconstruction<T>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let bop = op.bind(&mut g);
        let yn = g.constant(y.clone());
        let trace = reconstruct_graph(&mut g, self, &bound, &bop, yn, ratio, opts)?;
        let trace: Vec<Tensor<T>> = trace
            .into_iter()
            .map(|id| g.value(id).cloned())
            .collect::<Result<_>>()?;
        Ok(Reconstruction {
            image: trace.last().cloned().expect("trace holds X̂₀"),
            trace,
        })
    }
}

/// Condition module: `γ ↦ softplus(W₃·relu(W₂·relu(W₁γ + b₁) + b₂) + b₃)`,
/// laid out as `[ρ_1..ρ_K, σ_1..σ_K]`.
pub fn condition_forward<T: Scalar>(g: &mut Graph<T>, cm: &BoundCm, ratio: f64) -> Result<NodeId> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("CS ratio must lie in (0, 1], got {ratio}")));
    }
    let mut h = g.constant(Tensor::scalar(T::lit(ratio)));
    for (i, l) in cm.layers.iter().enumerate() {
        h = g.fully_connected(h, l.weight, l.bias)?;
        h = if i < 2 { g.relu(h)? } else { g.softplus(h)? };
    }
    Ok(h)
}

/// `R_k = X̂_{k−1} − ρ_k·𝒜ᵀ(𝒜(X̂_{k−1}) − Y)`.
pub fn dgdm_forward<T: Scalar>(
    g: &mut Graph<T>,
    op: &BoundOperator,
    x_prev: NodeId,
    y: NodeId,
    rho: NodeId,
) -> Result<NodeId> {
    let ax = op.measure(g, x_prev)?;
    let residual = g.sub(ax, y)?;
    let back = op.init_transpose(g, residual)?;
    let step = g.scale_by(back, rho)?;
    g.sub(x_prev, step)
}

fn conv_layer<T: Scalar>(g: &mut Graph<T>, x: NodeId, l: BoundLayer, tile: Option<usize>) -> Result<NodeId> {
    g.conv2d(x, l.weight, Some(l.bias), ConvSpec::same3(tile))
}

fn res_block<T: Scalar>(g: &mut Graph<T>, x: NodeId, rb: &[BoundLayer; 2], tile: Option<usize>) -> Result<NodeId> {
    let h = conv_layer(g, x, rb[0], tile)?;
    let h = g.relu(h)?;
    let h = conv_layer(g, h, rb[1], tile)?;
    g.add(x, h)
}

/// `X̂_k = R_k + rec(RB₂(RB₁(ext([R_k, M^σ_k]))))` where `M^σ_k` is a plane
/// filled with `σ_k`. With `tile: Some(B)` every `B×B` block is processed
/// independently.
pub fn dpmm_forward<T: Scalar>(
    g: &mut Graph<T>,
    stage: &BoundStage,
    r: NodeId,
    sigma: NodeId,
    tile: Option<usize>,
) -> Result<NodeId> {
    let shape = g.value(r)?.shape().to_vec();
    if shape.len() != 3 || shape[0] != 1 {
        return Err(Error::dim("dpmm", format!("expected a 1×H×W image, got {shape:?}")));
    }
    let noise = g.fill(sigma, &shape)?;
    let x = g.concat_channels(r, noise)?;
    let h = conv_layer(g, x, stage.ext, tile)?;
    let h = res_block(g, h, &stage.rb1, tile)?;
    let h = res_block(g, h, &stage.rb2, tile)?;
    let h = conv_layer(g, h, stage.rec, tile)?;
    g.add(r, h)
}

/// Full unrolled forward pass from measurements `y`. Returns the node ids
/// of `[X̂₀, …, X̂_K]`.
pub fn reconstruct_graph<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model<T>,
    bound: &BoundModel,
    op: &BoundOperator,
    y: NodeId,
    ratio: f64,
    opts: ReconstructOptions,
) -> Result<Vec<NodeId>> {
    model.check_ratio(ratio, opts)?;
    let cfg = &model.config;
    let k = cfg.stages;
    let tile = (!cfg.cbs).then_some(cfg.block_size);
    let cond = match &bound.cm {
        Some(cm) => Some(condition_forward(g, cm, ratio)?),
        None => None,
    };
    let mut x = op.init_transpose(g, y)?;
    let mut trace = vec![x];
    for (i, stage) in bound.stages.iter().enumerate() {
        let rho = match cond {
            Some(c) if cfg.dus_rho => g.index(c, i)?,
            _ => stage.rho,
        };
        let sigma = match cond {
            Some(c) if cfg.dus_sigma => g.index(c, k + i)?,
            _ => stage.sigma,
        };
        let r = dgdm_forward(g, op, x, y, rho)?;
        x = dpmm_forward(g, stage, r, sigma, tile)?;
        trace.push(x);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(k: usize) -> Model<f64> {
        Model::new(NetConfig::tiny(k, 4, 8, &[0.25, 0.5])).unwrap()
    }

    fn image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        Tensor::rand_uniform(vec![1, h, w], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn condition_outputs_positive_with_block_layout() {
        let m = tiny(3);
        let c = m.condition(0.25).unwrap();
        assert_eq!((c.rho.len(), c.sigma.len()), (3, 3));
        assert!(c.rho.iter().chain(&c.sigma).all(|&v| v > 0.0));
    }

    #[test]
    fn zero_cm_gives_ln2() {
        let mut m = tiny(2);
        for l in &mut m.cm.as_mut().unwrap().layers {
            l.weight.data_mut().fill(0.0);
        }
        let c = m.condition(0.5).unwrap();
        for v in c.rho.iter().chain(&c.sigma) {
            assert_eq!(*v, std::f64::consts::LN_2);
        }
        assert!(m.condition(0.0).is_err());
    }

    #[test]
    fn zero_stages_return_initialization() {
        let m = tiny(0);
        let op = &m.operators[0];
        let y = op.measure(&image(16, 16, 1)).unwrap();
        let rec = m.reconstruct(&y, op, 0.25, Default::default()).unwrap();
        assert_eq!(rec.trace.len(), 1);
        assert_eq!(rec.image, op.init_transpose(&y).unwrap());
    }

    #[test]
    fn trace_has_k_plus_one_entries() {
        let m = tiny(3);
        let op = &m.operators[1];
        let y = op.measure(&image(16, 24, 2)).unwrap();
        let rec = m.reconstruct(&y, op, 0.5, Default::default()).unwrap();
        assert_eq!(rec.trace.len(), 4);
        assert_eq!(rec.trace[0], op.init_transpose(&y).unwrap());
        assert_eq!(rec.image.shape(), [1, 16, 24]);
        assert!(rec.first_nonfinite_stage().is_none());
    }

    #[test]
    fn unknown_ratio_needs_opt_in() {
        let m = tiny(1);
        let op = SamplingOperator::gaussian(8, 0.3, 0).unwrap();
        let y = op.measure(&image(8, 8, 3)).unwrap();
        assert!(matches!(
            m.reconstruct(&y, &op, 0.3, Default::default()),
            Err(Error::UnknownRatio { .. })
        ));
        let opts = ReconstructOptions { allow_extrapolation: true };
        assert!(m.reconstruct(&y, &op, 0.3, opts).is_ok());
    }

    #[test]
    fn zero_rec_and_zero_rho_keep_initialization() {
        let mut m = Model::<f64>::new(NetConfig {
            dus_rho: false,
            dus_sigma: false,
            ..NetConfig::tiny(3, 4, 8, &[0.5])
        })
        .unwrap();
        for s in &mut m.stages {
            s.rec.weight.data_mut().fill(0.0);
            s.rho.data_mut()[0] = 0.0;
        }
        let op = &m.operators[0];
        let y = op.measure(&image(16, 16, 4)).unwrap();
        let rec = m.reconstruct(&y, op, 0.5, Default::default()).unwrap();
        assert_eq!(rec.image, op.init_transpose(&y).unwrap());
    }

    #[test]
    fn dpmm_zero_rec_is_long_skip_and_zero_propagates() {
        let m = tiny(1);
        let mut g = Graph::new();
        let mut zeroed = m.clone();
        zeroed.stages[0].rec.weight.data_mut().fill(0.0);
        let bound = zeroed.bind(&mut g, false);
        let r = g.constant(image(8, 16, 5));
        let s = g.constant(Tensor::scalar(0.3));
        let out = dpmm_forward(&mut g, &bound.stages[0], r, s, None).unwrap();
        assert_eq!(g.value(out).unwrap(), g.value(r).unwrap());

        let mut g = Graph::new();
        let bound = m.bind(&mut g, false);
        let r = g.constant(Tensor::zeros(vec![1, 8, 8]));
        let s = g.constant(Tensor::scalar(0.0));
        let out = dpmm_forward(&mut g, &bound.stages[0], r, s, None).unwrap();
        assert!(g.value(out).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dgdm_identities() {
        let op = SamplingOperator::<f64>::gaussian(8, 0.5, 6).unwrap();
        let x = image(16, 16, 7);
        let mut g = Graph::new();
        let b = op.bind(&mut g);
        let xn = g.constant(x.clone());
        let y = g.constant(op.measure(&x).unwrap());
        let rho = g.constant(Tensor::scalar(0.8));
        let r = dgdm_forward(&mut g, &b, xn, y, rho).unwrap();
        assert_eq!(g.value(r).unwrap(), &x);
        let other = g.constant(image(16, 16, 8));
        let zero = g.constant(Tensor::scalar(0.0));
        let r = dgdm_forward(&mut g, &b, other, y, zero).unwrap();
        assert_eq!(g.value(r).unwrap(), g.value(other).unwrap());
    }
}
