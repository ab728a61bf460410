//! Measurement files: block-CS measurements of one image plus everything
//! needed to rebuild the operator that produced them.

use std::path::Path;

use crate::container::{self, Reader};
use crate::error::{Error, Result};
use crate::image::pad_to_blocks;
use crate::kv::{self, KeyValues};
use crate::sampling::SamplingOperator;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"ISTAMEAS";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Measurements<T> {
    pub block_size: usize,
    pub ratio: f64,
    /// Seed of the Gaussian `Φ`.
    pub seed: u64,
    /// `Φ` had its rows orthonormalized after generation.
    pub orthonormal: bool,
    /// Size of the image before reflect-padding to whole blocks.
    pub orig_height: usize,
    pub orig_width: usize,
    /// `M×(H/B)×(W/B)`.
    pub data: Tensor<T>,
}

impl<T: Scalar> Measurements<T> {
    /// Pads `img` to whole blocks and measures it with `op`.
    pub fn acquire(img: &Tensor<T>, op: &SamplingOperator<T>) -> Result<Self> {
        let (padded, (h, w)) = pad_to_blocks(img, op.block_size())?;
        Ok(Self {
            block_size: op.block_size(),
            ratio: op.ratio(),
            seed: op.seed(),
            orthonormal: op.is_orthonormal(),
            orig_height: h,
            orig_width: w,
            data: op.measure(&padded)?,
        })
    }

    /// Regenerates the operator from the recorded seed.
    pub fn operator(&self) -> Result<SamplingOperator<T>> {
        let op = SamplingOperator::gaussian(self.block_size, self.ratio, self.seed)?;
        let op = if self.orthonormal { op.orthonormalized()? } else { op };
        self.check_operator(&op)?;
        Ok(op)
    }

    /// Fails unless `op` could have produced these measurements.
    pub fn check_operator(&self, op: &SamplingOperator<T>) -> Result<()> {
        if op.block_size() != self.block_size
            || op.m() != self.data.shape()[0]
            || op.seed() != self.seed
            || op.is_orthonormal() != self.orthonormal
        {
            return Err(Error::Incompatible(format!(
                "measurements were taken with B={}, M={}, seed={}, orthonormal={}; operator has B={}, M={}, seed={}, orthonormal={}",
                self.block_size,
                self.data.shape()[0],
                self.seed,
                self.orthonormal,
                op.block_size(),
                op.m(),
                op.seed(),
                op.is_orthonormal()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (m, h, w) = self.data.dims3().expect("measurements are M×h×w");
        let header = kv::render([
            ("version", VERSION.to_string()),
            ("block", self.block_size.to_string()),
            ("ratio", format!("{:?}", self.ratio)),
            ("m", m.to_string()),
            ("seed", self.seed.to_string()),
            ("h", h.to_string()),
            ("w", w.to_string()),
            ("orig_height", self.orig_height.to_string()),
            ("orig_width", self.orig_width.to_string()),
            ("orthonormal", self.orthonormal.to_string()),
        ]);
        let payload: Vec<f64> = self.data.data().iter().map(|v| v.to_f64_lossless()).collect();
        container::encode(MAGIC, &header, [&payload[..]])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, header) = Reader::open(bytes, MAGIC, "measurement file")?;
        let hdr_err = |e: Error| r.err(16, e.to_string());
        let kv = KeyValues::parse(header).map_err(hdr_err)?;
        let version: u32 = kv.require("version").map_err(hdr_err)?;
        if version != VERSION {
            return Err(r.err(16, format!("unsupported version {version}")));
        }
        let block_size: usize = kv.require("block").map_err(hdr_err)?;
        let m: usize = kv.require("m").map_err(hdr_err)?;
        let h: usize = kv.require("h").map_err(hdr_err)?;
        let w: usize = kv.require("w").map_err(hdr_err)?;
        let ratio = kv.require("ratio").map_err(hdr_err)?;
        let seed = kv.require("seed").map_err(hdr_err)?;
        let orthonormal = kv.require("orthonormal").map_err(hdr_err)?;
        let orig_height: usize = kv.require("orig_height").map_err(hdr_err)?;
        let orig_width: usize = kv.require("orig_width").map_err(hdr_err)?;
        let n = m
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| r.err(16, "payload size overflows"))?;
        let at = r.position();
        let payload = r.f64s(n)?;
        r.finish()?;
        let data = Tensor::new(vec![m, h, w], payload.into_iter().map(T::lit).collect())
            .map_err(|e| Error::Format { what: "measurement file", offset: at as u64, detail: e.to_string() })?;
        if orig_height > h * block_size || orig_width > w * block_size {
            return Err(Error::Format {
                what: "measurement file",
                offset: 16,
                detail: "original size exceeds the measured grid".into(),
            });
        }
        Ok(Self {
            block_size,
            ratio,
            seed,
            orthonormal,
            orig_height,
            orig_width,
            data,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        container::write_atomic(path, &self.to_bytes())
    }
}
