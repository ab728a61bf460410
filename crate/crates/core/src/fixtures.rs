//! Deterministic synthetic grayscale images: piecewise-smooth scenes of
//! ramps, soft blobs, disks, rectangles and stripes, the kind of content
//! compressive sensing priors are built for.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::write_pgm;
use crate::tensor::Tensor;

/// A `1×h×w` scene with intensities in `[0, 1]`.
pub fn synthetic_image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (h as f64, w as f64);
    let (a, b, c) = (rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(0.3..0.7));
    let mut img: Vec<f64> = (0..h * w)
        .map(|i| c + a * ((i / w) as f64 / hf - 0.5) + b * ((i % w) as f64 / wf - 0.5))
        .collect();
    let blobs = rng.gen_range(2..5);
    for _ in 0..blobs {
        let (cy, cx) = (rng.gen_range(0.0..hf), rng.gen_range(0.0..wf));
        let s = rng.gen_range(0.08..0.25) * hf.min(wf);
        let amp = rng.gen_range(-0.35..0.35);
        for (i, v) in img.iter_mut().enumerate() {
            let (dy, dx) = ((i / w) as f64 - cy, (i % w) as f64 - cx);
            *v += amp * (-(dy * dy + dx * dx) / (2.0 * s * s)).exp();
        }
    }
    let shapes = rng.gen_range(2..6);
    for _ in 0..shapes {
        let level = rng.gen_range(0.0..1.0);
        let (cy, cx) = (rng.gen_range(0.0..hf), rng.gen_range(0.0..wf));
        let size = rng.gen_range(0.1..0.3) * hf.min(wf);
        match rng.gen_range(0..3) {
            0 => {
                for (i, v) in img.iter_mut().enumerate() {
                    let (dy, dx) = ((i / w) as f64 - cy, (i % w) as f64 - cx);
                    if dy * dy + dx * dx <= size * size {
                        *v = level;
                    }
                }
            }
            1 => {
                let aspect = rng.gen_range(0.5..2.0);
                for (i, v) in img.iter_mut().enumerate() {
                    let (dy, dx) = ((i / w) as f64 - cy, (i % w) as f64 - cx);
                    if dy.abs() <= size && dx.abs() <= size * aspect {
                        *v = level;
                    }
                }
            }
            _ => {
                let period = rng.gen_range(4.0..12.0);
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                let (sa, ca) = angle.sin_cos();
                for (i, v) in img.iter_mut().enumerate() {
                    let (dy, dx) = ((i / w) as f64 - cy, (i % w) as f64 - cx);
                    if dy * dy + dx * dx <= size * size {
                        let t = (dy * sa + dx * ca) / period;
                        *v = 0.5 * (*v + level) + 0.2 * (2.0 * std::f64::consts::PI * t).sin();
                    }
                }
            }
        }
    }
    let noise = rng.gen_range(0.0..0.01);
    for v in img.iter_mut() {
        *v = (*v + noise * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0);
    }
    Tensor::new(vec![1, h, w], img).expect("h·w elements")
}

/// Writes `count` scenes named `img_00.pgm`, `img_01.pgm`, … into `dir`,
/// scene `i` seeded with `seed + i`.
pub fn write_fixture_set(dir: &Path, count: usize, h: usize, w: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..count)
        .map(|i| {
            let p = dir.join(format!("img_{i:02}.pgm"));
            write_pgm(&p, &synthetic_image(h, w, seed + i as u64))?;
            Ok(p)
        })
        .collect()
}
