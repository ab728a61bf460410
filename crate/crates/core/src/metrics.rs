//! Reconstruction quality measures on `[0, 1]` intensities.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Peak signal-to-noise ratio with peak 1.0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    /// Exact match (zero error).
    Infinite,
}

impl Psnr {
    /// Finite value, or `None` for an exact match.
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(v),
            Psnr::Infinite => None,
        }
    }

    /// Value usable in averages; exact matches count as `f64::INFINITY`.
    pub fn as_f64(self) -> f64 {
        self.db().unwrap_or(f64::INFINITY)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.2} dB"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

pub fn mse<T: Scalar>(x: &Tensor<T>, reference: &Tensor<T>) -> Result<f64> {
    let d = x.zip_map(reference, "mse", |a, b| a - b)?;
    if d.is_empty() {
        return Err(Error::InvalidArgument("MSE of an empty image".into()));
    }
    Ok(d.data().iter().map(|v| v.to_f64_lossless().powi(2)).sum::<f64>() / d.len() as f64)
}

/// `10·log10(1 / MSE)`.
pub fn psnr<T: Scalar>(x: &Tensor<T>, reference: &Tensor<T>) -> Result<Psnr> {
    let e = mse(x, reference)?;
    Ok(if e == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Db(-10.0 * e.log10())
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArtifactScore {
    /// Mean |difference| across block boundaries minus the same over
    /// interior neighbor pairs.
    pub raw: f64,
    /// `max(raw, 0)`.
    pub score: f64,
}

/// Excess discontinuity at `b×b` block seams relative to the image's
/// ordinary neighbor differences. An image with no seam (a single block)
/// scores its raw value against zero seam difference.
pub fn block_artifact_score<T: Scalar>(img: &Tensor<T>, b: usize) -> Result<ArtifactScore> {
    let (c, h, w) = img.dims3()?;
    if c != 1 || b == 0 || h % b != 0 || w % b != 0 {
        return Err(Error::dim(
            "block_artifact_score",
            format!("{:?} is not a single-channel grid of {b}×{b} blocks", img.shape()),
        ));
    }
    let px = |y: usize, x: usize| img.data()[y * w + x].to_f64_lossless();
    let (mut seam, mut n_seam, mut inner, mut n_inner) = (0.0, 0usize, 0.0, 0usize);
    let mut visit = |d: f64, at_seam: bool| {
        if at_seam {
            seam += d;
            n_seam += 1;
        } else {
            inner += d;
            n_inner += 1;
        }
    };
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                visit((px(y, x + 1) - px(y, x)).abs(), (x + 1) % b == 0);
            }
            if y + 1 < h {
                visit((px(y + 1, x) - px(y, x)).abs(), (y + 1) % b == 0);
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    let raw = mean(seam, n_seam) - mean(inner, n_inner);
    Ok(ArtifactScore { raw, score: raw.max(0.0) })
}
