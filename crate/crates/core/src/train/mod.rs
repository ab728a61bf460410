//! Multi-ratio training: every batch is reconstructed at every configured
//! ratio and the squared errors are averaged over images × ratios.

mod checkpoint;
mod dataset;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use dataset::{list_files, load_dataset, random_patches, Dataset};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::AdamConfig;
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::net::{reconstruct_graph, BoundModel, Model, NetConfig, ReconstructOptions};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// File name of the per-epoch checkpoint inside the checkpoint directory.
pub const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Side of the square training patches; a multiple of the block size.
    pub patch_size: usize,
    pub patches_per_image: usize,
    /// Seeds patch extraction and the per-epoch shuffles.
    pub seed: u64,
    pub dataset_dir: PathBuf,
    /// Where `model.ckpt` is written after every epoch; `None` disables it.
    pub checkpoint_dir: Option<PathBuf>,
    /// Checkpoint to continue from instead of a fresh model.
    pub resume: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            epochs: 1,
            batch_size: 64,
            lr: 1e-4,
            patch_size: 96,
            patches_per_image: 4,
            seed: 0,
            dataset_dir: PathBuf::from("data"),
            checkpoint_dir: Some(PathBuf::from("checkpoints")),
            resume: None,
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "lr",
    "patch_size",
    "patches_per_image",
    "seed",
    "dataset_dir",
    "checkpoint_dir",
    "resume",
    "ratios",
    "stages",
    "channels",
    "cm_hidden",
    "block_size",
    "dus_rho",
    "dus_sigma",
    "cbs",
    "init_seed",
    "sampling_seed",
];

impl TrainConfig {
    /// Builds a configuration from `key=value` text; unspecified keys keep
    /// their defaults, unknown keys are rejected. Relative paths are taken
    /// relative to `base`.
    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        if let Some(k) = kv.unknown_keys(CONFIG_KEYS).first() {
            return Err(Error::InvalidArgument(format!("unknown config key {k:?}")));
        }
        let d = Self::default();
        let path = |key: &str| -> Result<Option<PathBuf>> {
            Ok(kv.get::<String>(key)?.map(|p| base.join(p)))
        };
        let mut ratios = kv.get_list::<f64>("ratios")?.unwrap_or(d.net.ratios.clone());
        NetConfig::normalize_ratios(&mut ratios);
        let seed = kv.get("seed")?.unwrap_or(d.seed);
        let net = NetConfig {
            stages: kv.get("stages")?.unwrap_or(d.net.stages),
            channels: kv.get("channels")?.unwrap_or(d.net.channels),
            cm_hidden: kv.get("cm_hidden")?.unwrap_or(d.net.cm_hidden),
            block_size: kv.get("block_size")?.unwrap_or(d.net.block_size),
            ratios,
            dus_rho: kv.get("dus_rho")?.unwrap_or(d.net.dus_rho),
            dus_sigma: kv.get("dus_sigma")?.unwrap_or(d.net.dus_sigma),
            cbs: kv.get("cbs")?.unwrap_or(d.net.cbs),
            seed: kv.get("init_seed")?.unwrap_or(seed),
            sampling_seed: kv.get("sampling_seed")?.unwrap_or(d.net.sampling_seed),
        };
        let cfg = Self {
            net,
            epochs: kv.get("epochs")?.unwrap_or(d.epochs),
            batch_size: kv.get("batch_size")?.unwrap_or(d.batch_size),
            lr: kv.get("lr")?.unwrap_or(d.lr),
            patch_size: kv.get("patch_size")?.unwrap_or(d.patch_size),
            patches_per_image: kv.get("patches_per_image")?.unwrap_or(d.patches_per_image),
            seed,
            dataset_dir: path("dataset_dir")?.unwrap_or(base.join(d.dataset_dir)),
            checkpoint_dir: path("checkpoint_dir")?.or(d.checkpoint_dir.map(|p| base.join(p))),
            resume: path("resume")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.patch_size == 0 || self.patch_size % self.net.block_size != 0 {
            return Err(Error::InvalidArgument(format!(
                "patch_size {} is not a positive multiple of block_size {}",
                self.patch_size, self.net.block_size
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be finite and nonnegative, got {}", self.lr)));
        }
        if self.patches_per_image == 0 {
            return Err(Error::InvalidArgument("patches_per_image must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_batch<T: Scalar>(model: &Model<T>, batch: &[Tensor<T>]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let b = model.config.block_size;
    for x in batch {
        let (c, h, w) = x.dims3()?;
        if c != 1 || h % b != 0 || w % b != 0 {
            return Err(Error::dim(
                "batch_loss",
                format!("training image {:?} is not a 1×H×W grid of {b}×{b} blocks", x.shape()),
            ));
        }
    }
    Ok(())
}

/// Squared reconstruction error of one (image, ratio) pair, scaled by `weight`.
fn pair_loss<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model<T>,
    bound: &BoundModel,
    x: &Tensor<T>,
    ratio_index: usize,
    weight: f64,
) -> Result<(NodeId, Vec<NodeId>)> {
    let op = &model.operators[ratio_index];
    let bop = op.bind(g);
    let y = g.constant(op.measure(x)?);
    let trace = reconstruct_graph(
        g,
        model,
        bound,
        &bop,
        y,
        model.config.ratios[ratio_index],
        ReconstructOptions::default(),
    )?;
    let target = g.constant(x.clone());
    let diff = g.sub(*trace.last().expect("trace holds X̂₀"), target)?;
    let sq = g.sum_squares(diff)?;
    Ok((g.scale(sq, weight)?, trace))
}

/// `Σ_i Σ_t ‖H(Φ_t x_i, Φ_t, γ_t) − x_i‖² / (N_D·N_γ)` as a single graph
/// over the whole batch and every model ratio.
pub fn batch_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model<T>,
    bound: &BoundModel,
    batch: &[Tensor<T>],
) -> Result<NodeId> {
    check_batch(model, batch)?;
    let weight = 1.0 / (batch.len() * model.operators.len()) as f64;
    let mut total = None;
    for x in batch {
        for t in 0..model.operators.len() {
            let (l, _) = pair_loss(g, model, bound, x, t, weight)?;
            total = Some(match total {
                None => l,
                Some(acc) => g.add(acc, l)?,
            });
        }
    }
    Ok(total.expect("nonempty batch and ratio set"))
}

/// Value of [`batch_loss_graph`].
pub fn batch_loss<T: Scalar>(model: &Model<T>, batch: &[Tensor<T>]) -> Result<T> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let l = batch_loss_graph(&mut g, model, &bound, batch)?;
    g.value(l)?.item()
}

fn locate_nonfinite<T: Scalar>(g: &Graph<T>, trace: &[NodeId]) -> String {
    match trace.iter().position(|&id| g.value(id).map_or(true, |v| !v.all_finite())) {
        Some(0) => "initialization X̂₀".into(),
        Some(k) => format!("output of stage {k}"),
        None => "loss".into(),
    }
}

/// Loss and parameter gradients of [`batch_loss_graph`], computed one
/// (image, ratio) pair at a time to bound memory. Gradients follow
/// [`Model::parameters`] order; parameters that do not influence the loss
/// get zeros.
pub fn batch_gradients<T: Scalar>(model: &Model<T>, batch: &[Tensor<T>]) -> Result<(T, Vec<Tensor<T>>)> {
    check_batch(model, batch)?;
    let n_pairs = batch.len() * model.operators.len();
    let weight = 1.0 / n_pairs as f64;
    let mut grads: Vec<Tensor<T>> = model
        .parameters()
        .iter()
        .map(|p| Tensor::zeros(p.shape().to_vec()))
        .collect();
    let mut loss = T::zero();
    for (i, x) in batch.iter().enumerate() {
        for t in 0..model.operators.len() {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let (l, trace) = pair_loss(&mut g, model, &bound, x, t, weight)?;
            let lv = g.value(l)?.item()?;
            if !lv.is_finite() {
                return Err(Error::NonFinite {
                    epoch: 0,
                    batch: 0,
                    location: format!(
                        "image {i} at ratio {}: {}",
                        model.config.ratios[t],
                        locate_nonfinite(&g, &trace)
                    ),
                });
            }
            loss += lv;
            g.backward(l)?;
            for (acc, &id) in grads.iter_mut().zip(&bound.order) {
                if let Some(gp) = g.grad(id) {
                    acc.axpy(T::one(), gp)?;
                }
            }
        }
    }
    let names = model.parameter_names();
    if let Some(k) = grads.iter().position(|g| !g.all_finite()) {
        return Err(Error::NonFinite {
            epoch: 0,
            batch: 0,
            location: format!("gradient of {}", names[k]),
        });
    }
    Ok((loss, grads))
}

/// Patch order for `epoch` (1-based): a seeded permutation independent of
/// every other epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: u64,
    /// Batch losses averaged with batch-size weights: the mean per-pair error
    /// seen during the epoch.
    pub loss: f64,
    /// Loss of the epoch's first batch, before its update.
    pub first_batch_loss: f64,
    pub seconds: f64,
}

/// Runs one epoch over `patches` and advances the checkpoint's counters.
pub fn train_epoch<T: Scalar>(state: &mut Checkpoint<T>, patches: &[Tensor<T>], batch_size: usize, seed: u64) -> Result<EpochStats> {
    if patches.is_empty() || batch_size == 0 {
        return Err(Error::InvalidArgument("training needs patches and a positive batch size".into()));
    }
    let start = Instant::now();
    let epoch = state.epoch + 1;
    let order = epoch_order(patches.len(), seed, epoch);
    let (mut weighted, mut first) = (0.0, f64::NAN);
    for (b, chunk) in order.chunks(batch_size).enumerate() {
        let batch: Vec<Tensor<T>> = chunk.iter().map(|&i| patches[i].clone()).collect();
        let (loss, grads) = batch_gradients(&state.model, &batch).map_err(|e| match e {
            Error::NonFinite { location, .. } => Error::NonFinite {
                epoch: epoch as usize,
                batch: b + 1,
                location,
            },
            e => e,
        })?;
        let loss = loss.to_f64_lossless();
        if b == 0 {
            first = loss;
        }
        weighted += loss * chunk.len() as f64;
        let mut params = state.model.parameters_mut();
        state.adam.step(&mut params, &grads)?;
    }
    state.epoch = epoch;
    state.running_loss = weighted / patches.len() as f64;
    Ok(EpochStats {
        epoch,
        loss: state.running_loss,
        first_batch_loss: first,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Starting point for `cfg`: the resume checkpoint if one is configured
/// (checked against `cfg.net`), else a freshly initialized model.
pub fn initial_state<T: Scalar>(cfg: &TrainConfig) -> Result<Checkpoint<T>> {
    match &cfg.resume {
        Some(p) => {
            let c = Checkpoint::load(p)?;
            c.ensure_compatible(&cfg.net)?;
            Ok(c)
        }
        None => Ok(Checkpoint::fresh(
            Model::new(cfg.net.clone())?,
            AdamConfig { lr: cfg.lr, ..AdamConfig::default() },
        )),
    }
}

/// Trains `cfg.epochs` further epochs, saving a checkpoint after each when
/// a checkpoint directory is configured. `on_epoch` sees every epoch's
/// statistics as they complete.
pub fn train<T: Scalar>(
    state: &mut Checkpoint<T>,
    patches: &[Tensor<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    state.adam.config.lr = cfg.lr;
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut stats = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let s = train_epoch(state, patches, cfg.batch_size, cfg.seed)?;
        log::info!("epoch {} loss {:.6e} ({:.1}s)", s.epoch, s.loss, s.seconds);
        if let Some(dir) = &cfg.checkpoint_dir {
            state.save(&dir.join(CHECKPOINT_FILE))?;
        }
        on_epoch(&s);
        stats.push(s);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::SamplingOperator;

    fn patches(n: usize, size: usize, seed: u64) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Tensor::rand_uniform(vec![1, size, size], 0.0, 1.0, &mut rng)).collect()
    }

    fn tiny(ratios: &[f64]) -> Model<f64> {
        Model::new(NetConfig::tiny(2, 3, 4, ratios)).unwrap()
    }

    #[test]
    fn exact_reconstruction_has_zero_loss() {
        // γ = 1 with an orthonormal Φ: 𝒜ᵀ𝒜 = I, so X̂₀ is exact and zeroed
        // residual heads keep it.
        let mut m = Model::<f64>::new(NetConfig::tiny(2, 3, 4, &[1.0])).unwrap();
        m.operators[0] = SamplingOperator::gaussian(4, 1.0, 5).unwrap().orthonormalized().unwrap();
        for s in &mut m.stages {
            s.rec.weight.data_mut().fill(0.0);
        }
        let l = batch_loss(&m, &patches(2, 8, 0)).unwrap();
        assert!(l.abs() < 1e-24, "{l}");
    }

    #[test]
    fn constant_offset_gives_closed_form() {
        // Exact X̂₀, then a stage whose residual head is the constant c.
        let c = 0.25;
        let mut m = Model::<f64>::new(NetConfig::tiny(1, 3, 4, &[1.0])).unwrap();
        m.operators[0] = SamplingOperator::gaussian(4, 1.0, 5).unwrap().orthonormalized().unwrap();
        m.stages[0].rec.weight.data_mut().fill(0.0);
        m.stages[0].rec.bias.data_mut()[0] = c;
        let l = batch_loss(&m, &patches(1, 8, 1)).unwrap();
        assert!((l - c * c * 64.0).abs() < 1e-9, "{l}");
    }

    #[test]
    fn loss_is_mean_over_images_and_ratios() {
        let m = tiny(&[0.25, 0.5]);
        let batch = patches(2, 8, 2);
        let both = batch_loss(&m, &batch).unwrap();
        let single = |t: usize| {
            let mut s = m.clone();
            s.config.ratios = vec![m.config.ratios[t]];
            s.operators = vec![m.operators[t].clone()];
            batch_loss(&s, &batch).unwrap()
        };
        let mean = (single(0) + single(1)) / 2.0;
        assert!((both - mean).abs() <= 1e-12 * both.abs().max(1.0));
        assert!(both >= 0.0);
    }

    #[test]
    fn pairwise_gradients_equal_single_graph() {
        let m = tiny(&[0.25, 0.5]);
        let batch = patches(2, 8, 3);
        let (loss, grads) = batch_gradients(&m, &batch).unwrap();
        let mut g = Graph::new();
        let bound = m.bind(&mut g, true);
        let l = batch_loss_graph(&mut g, &m, &bound, &batch).unwrap();
        assert!((g.value(l).unwrap().item().unwrap() - loss).abs() < 1e-12);
        g.backward(l).unwrap();
        for (acc, &id) in grads.iter().zip(&bound.order) {
            let reference = g.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(acc.shape().to_vec()));
            let scale = reference.norm().max(1e-12);
            assert!(acc.max_abs_diff(&reference).unwrap() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn every_active_parameter_receives_gradient() {
        for (rho, sigma) in [(true, true), (false, false), (true, false)] {
            let m = Model::<f64>::new(NetConfig {
                dus_rho: rho,
                dus_sigma: sigma,
                ..NetConfig::tiny(2, 3, 4, &[0.5])
            })
            .unwrap();
            let mut g = Graph::new();
            let bound = m.bind(&mut g, true);
            let l = batch_loss_graph(&mut g, &m, &bound, &patches(1, 8, 4)).unwrap();
            g.backward(l).unwrap();
            let names = m.parameter_names();
            for ((&id, active), name) in bound.order.iter().zip(m.parameter_active()).zip(&names) {
                if active {
                    let gr = g.grad(id).unwrap_or_else(|| panic!("{name} has no gradient"));
                    assert!(gr.sq_norm() > 0.0, "{name} gradient is zero");
                }
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let m = tiny(&[0.5]);
        let mut state = Checkpoint::fresh(m.clone(), AdamConfig { lr: 0.0, ..AdamConfig::default() });
        let cfg = TrainConfig {
            net: m.config.clone(),
            epochs: 1,
            batch_size: 4,
            lr: 0.0,
            patch_size: 8,
            checkpoint_dir: None,
            ..TrainConfig::default()
        };
        let stats = train(&mut state, &patches(3, 8, 5), &cfg, |_| {}).unwrap();
        assert_eq!(stats.len(), 1);
        assert_eq!(state.model.parameters(), m.parameters());
        assert_eq!(state.epoch, 1);
    }

    #[test]
    fn batch_errors() {
        let m = tiny(&[0.5]);
        assert!(batch_loss(&m, &[]).is_err());
        assert!(batch_loss(&m, &[Tensor::zeros(vec![1, 6, 8])]).is_err());
    }

    #[test]
    fn nonfinite_loss_names_the_stage() {
        let mut m = tiny(&[0.5]);
        m.stages[1].rec.bias.data_mut()[0] = f64::INFINITY;
        let mut state = Checkpoint::fresh(m, AdamConfig::default());
        match train_epoch(&mut state, &patches(2, 8, 6), 2, 0) {
            Err(Error::NonFinite { epoch, batch, location }) => {
                assert_eq!((epoch, batch), (1, 1));
                assert!(location.contains("stage 2"), "{location}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn epoch_orders_are_seeded_permutations() {
        let a = epoch_order(10, 3, 1);
        assert_eq!(a, epoch_order(10, 3, 1));
        assert_ne!(a, epoch_order(10, 3, 2));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn config_text() {
        let cfg = TrainConfig::from_text(
            "# tiny\nepochs=2\nratios=0.5,0.1\nstages=3\nchannels=4\nblock_size=8\npatch_size=16\ndataset_dir=imgs\ncbs=false\n",
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.net.ratios, [0.1, 0.5]);
        assert_eq!(cfg.dataset_dir, Path::new("/base/imgs"));
        assert!(!cfg.net.cbs);
        assert!(TrainConfig::from_text("bogus=1\n", Path::new(".")).is_err());
        assert!(TrainConfig::from_text("block_size=8\npatch_size=12\n", Path::new(".")).is_err());
        assert!(TrainConfig::from_text("ratios=0.1,1.5\n", Path::new(".")).is_err());
    }
}
