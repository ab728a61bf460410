//! The unrolled reconstruction network: a condition module mapping the CS
//! ratio to per-stage `(ρ_k, σ_k)`, and `K` stages that each take a gradient
//! step on the data term followed by a learned, noise-map-conditioned
//! proximal step.

mod forward;
mod params;

pub use forward::{
    condition_forward, dgdm_forward, dpmm_forward, reconstruct_graph, BoundCm, BoundLayer,
    BoundModel, BoundStage, ConditionOutput, ReconstructOptions, Reconstruction,
};
pub use params::{CmParams, ConvLayer, Linear, Model, ResBlock, StageParams, FALLBACK_RHO, FALLBACK_SIGMA};

use crate::error::{Error, Result};

/// Architecture, ablation switches and seeds of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    /// Number of unrolled stages `K`.
    pub stages: usize,
    /// Feature channels `C` inside each proximal module.
    pub channels: usize,
    /// Width of both hidden layers of the condition module.
    pub cm_hidden: usize,
    pub block_size: usize,
    /// Ratios served by the model, ascending.
    pub ratios: Vec<f64>,
    /// Step sizes come from the condition module (else per-stage learnables).
    pub dus_rho: bool,
    /// Noise levels come from the condition module (else per-stage learnables).
    pub dus_sigma: bool,
    /// Whole-image reconstruction; when off every block is reconstructed alone.
    pub cbs: bool,
    /// Weight initialization seed.
    pub seed: u64,
    /// Master seed of the sampling matrices (ratio `i` uses `sampling_seed + i`).
    pub sampling_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            stages: 20,
            channels: 32,
            cm_hidden: 64,
            block_size: 32,
            ratios: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            dus_rho: true,
            dus_sigma: true,
            cbs: true,
            seed: 0,
            sampling_seed: 1000,
        }
    }
}

impl NetConfig {
    /// Small configuration for tests and desk-scale experiments.
    pub fn tiny(stages: usize, channels: usize, block_size: usize, ratios: &[f64]) -> Self {
        Self {
            stages,
            channels,
            cm_hidden: 16,
            block_size,
            ratios: ratios.to_vec(),
            ..Self::default()
        }
    }

    /// Checks the invariants. `K = 0` is accepted as a degenerate
    /// initialization-only network.
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.cm_hidden == 0 {
            return Err(Error::InvalidArgument("channels and CM width must be positive".into()));
        }
        if self.block_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "block size must be at least 2, got {}",
                self.block_size
            )));
        }
        if self.ratios.is_empty() {
            return Err(Error::InvalidArgument("model must serve at least one ratio".into()));
        }
        for w in self.ratios.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "ratios must be strictly ascending, got {:?}",
                    self.ratios
                )));
            }
        }
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::InvalidArgument(format!("ratio {r} outside (0, 1]")));
        }
        Ok(())
    }

    /// Whether the condition module exists in this configuration.
    pub fn has_cm(&self) -> bool {
        self.stages > 0 && (self.dus_rho || self.dus_sigma)
    }

    /// Position of `ratio` among the served ratios.
    pub fn ratio_index(&self, ratio: f64) -> Option<usize> {
        self.ratios.iter().position(|r| (r - ratio).abs() <= 1e-9)
    }

    /// Sorts and deduplicates a user-provided ratio list.
    pub fn normalize_ratios(ratios: &mut Vec<f64>) {
        ratios.sort_by(|a, b| a.total_cmp(b));
        ratios.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    }
}
