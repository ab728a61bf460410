use std::path::Path;

use crate::adam::{AdamConfig, AdamState};
use crate::container::{self, Reader};
use crate::error::{Error, Result};
use crate::kv::{self, parse_list, KeyValues};
use crate::net::{Model, NetConfig};
use crate::sampling::SamplingOperator;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"ISTAPP01";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or to reconstruct: parameters,
/// sampling matrices, optimizer state and progress.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub adam: AdamState<T>,
    /// Completed epochs.
    pub epoch: u64,
    /// Mean loss of the last completed epoch (NaN before any training).
    pub running_loss: f64,
}

fn join<V: std::fmt::Debug>(v: impl IntoIterator<Item = V>) -> String {
    v.into_iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

impl<T: Scalar> Checkpoint<T> {
    pub fn fresh(model: Model<T>, adam: AdamConfig) -> Self {
        let adam = AdamState::new(adam, model.parameters());
        Self {
            model,
            adam,
            epoch: 0,
            running_loss: f64::NAN,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.model.config;
        let a = &self.adam.config;
        let header = kv::render([
            ("version", CHECKPOINT_VERSION.to_string()),
            ("stages", c.stages.to_string()),
            ("channels", c.channels.to_string()),
            ("cm_hidden", c.cm_hidden.to_string()),
            ("block_size", c.block_size.to_string()),
            ("ratios", join(&c.ratios)),
            ("dus_rho", c.dus_rho.to_string()),
            ("dus_sigma", c.dus_sigma.to_string()),
            ("cbs", c.cbs.to_string()),
            ("seed", c.seed.to_string()),
            ("sampling_seed", c.sampling_seed.to_string()),
            ("operator_seeds", join(self.model.operators.iter().map(|o| o.seed()))),
            ("operator_orthonormal", join(self.model.operators.iter().map(|o| o.is_orthonormal()))),
            ("epoch", self.epoch.to_string()),
            ("running_loss", format!("{:?}", self.running_loss)),
            ("adam_t", self.adam.t.to_string()),
            ("adam_lr", format!("{:?}", a.lr)),
            ("adam_beta1", format!("{:?}", a.beta1)),
            ("adam_beta2", format!("{:?}", a.beta2)),
            ("adam_eps", format!("{:?}", a.eps)),
        ]);
        let wide = |t: &Tensor<T>| t.data().iter().map(|v| v.to_f64_lossless()).collect::<Vec<f64>>();
        let arrays: Vec<Vec<f64>> = self
            .model
            .parameters()
            .into_iter()
            .chain(self.model.operators.iter().map(|o| o.phi()))
            .chain(&self.adam.m)
            .chain(&self.adam.v)
            .map(wide)
            .collect();
        container::encode(MAGIC, &header, arrays.iter().map(Vec::as_slice))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, header) = Reader::open(bytes, MAGIC, "checkpoint")?;
        let hdr = |e: Error| Error::Format {
            what: "checkpoint",
            offset: 16,
            detail: e.to_string(),
        };
        let kv = KeyValues::parse(header).map_err(hdr)?;
        let version: u32 = kv.require("version").map_err(hdr)?;
        if version != CHECKPOINT_VERSION {
            return Err(hdr(Error::InvalidArgument(format!(
                "format version {version}, this build reads {CHECKPOINT_VERSION}"
            ))));
        }
        let config = NetConfig {
            stages: kv.require("stages").map_err(hdr)?,
            channels: kv.require("channels").map_err(hdr)?,
            cm_hidden: kv.require("cm_hidden").map_err(hdr)?,
            block_size: kv.require("block_size").map_err(hdr)?,
            ratios: kv.get_list("ratios").map_err(hdr)?.unwrap_or_default(),
            dus_rho: kv.require("dus_rho").map_err(hdr)?,
            dus_sigma: kv.require("dus_sigma").map_err(hdr)?,
            cbs: kv.require("cbs").map_err(hdr)?,
            seed: kv.require("seed").map_err(hdr)?,
            sampling_seed: kv.require("sampling_seed").map_err(hdr)?,
        };
        config.validate().map_err(hdr)?;
        let op_seeds: Vec<u64> = parse_list(kv.raw("operator_seeds").unwrap_or(""))
            .map_err(|e| hdr(Error::InvalidArgument(format!("operator_seeds: {e}"))))?;
        let op_ortho: Vec<bool> = parse_list(kv.raw("operator_orthonormal").unwrap_or(""))
            .map_err(|e| hdr(Error::InvalidArgument(format!("operator_orthonormal: {e}"))))?;
        if op_seeds.len() != config.ratios.len() || op_ortho.len() != config.ratios.len() {
            return Err(hdr(Error::InvalidArgument("operator metadata does not match the ratio list".into())));
        }
        let adam_config = AdamConfig {
            lr: kv.require("adam_lr").map_err(hdr)?,
            beta1: kv.require("adam_beta1").map_err(hdr)?,
            beta2: kv.require("adam_beta2").map_err(hdr)?,
            eps: kv.require("adam_eps").map_err(hdr)?,
        };
        let adam_t: u64 = kv.require("adam_t").map_err(hdr)?;
        let epoch: u64 = kv.require("epoch").map_err(hdr)?;
        let running_loss: f64 = kv.require("running_loss").map_err(hdr)?;

        // Shapes follow from the configuration; build a skeleton and fill it.
        let b = config.block_size;
        let placeholder_ops = config
            .ratios
            .iter()
            .map(|&g| {
                let m = crate::sampling::measurement_count(b, g);
                SamplingOperator::from_matrix(b, g, 0, Tensor::zeros(vec![m, b * b]))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(hdr)?;
        let mut model = Model::with_operators(config.clone(), placeholder_ops).map_err(hdr)?;
        let narrow = |v: Vec<f64>| v.into_iter().map(T::lit).collect::<Vec<T>>();
        for p in model.parameters_mut() {
            let v = r.f64s(p.len())?;
            *p = Tensor::new(p.shape().to_vec(), narrow(v))?;
        }
        let mut operators = Vec::with_capacity(config.ratios.len());
        for (i, &g) in config.ratios.iter().enumerate() {
            let m = crate::sampling::measurement_count(b, g);
            let phi = Tensor::new(vec![m, b * b], narrow(r.f64s(m * b * b)?))?;
            let mut op = SamplingOperator::from_matrix(b, g, op_seeds[i], phi)?;
            op.mark_orthonormal(op_ortho[i]);
            operators.push(op);
        }
        model.operators = operators;
        let mut adam = AdamState::new(adam_config, model.parameters());
        adam.t = adam_t;
        for buf in adam.m.iter_mut().chain(adam.v.iter_mut()) {
            let v = r.f64s(buf.len())?;
            *buf = Tensor::new(buf.shape().to_vec(), narrow(v))?;
        }
        r.finish()?;
        Ok(Self {
            model,
            adam,
            epoch,
            running_loss,
        })
    }

    /// Atomic write (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Fails unless the stored architecture matches `expected` (seeds are
    /// not compared).
    pub fn ensure_compatible(&self, expected: &NetConfig) -> Result<()> {
        let c = &self.model.config;
        let checks: [(&str, String, String); 8] = [
            ("stages", c.stages.to_string(), expected.stages.to_string()),
            ("channels", c.channels.to_string(), expected.channels.to_string()),
            ("cm_hidden", c.cm_hidden.to_string(), expected.cm_hidden.to_string()),
            ("block_size", c.block_size.to_string(), expected.block_size.to_string()),
            ("ratios", format!("{:?}", c.ratios), format!("{:?}", expected.ratios)),
            ("dus_rho", c.dus_rho.to_string(), expected.dus_rho.to_string()),
            ("dus_sigma", c.dus_sigma.to_string(), expected.dus_sigma.to_string()),
            ("cbs", c.cbs.to_string(), expected.cbs.to_string()),
        ];
        for (name, have, want) in checks {
            if have != want {
                return Err(Error::Incompatible(format!("{name}: checkpoint has {have}, expected {want}")));
            }
        }
        Ok(())
    }
}
