//! Multi-ratio evaluation of a reconstruction method over a set of images.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::image::{crop_back, pad_to_blocks, read_pgm};
use crate::ista::{run_ista, IstaConfig};
use crate::metrics::{block_artifact_score, psnr, ArtifactScore, Psnr};
use crate::net::{Model, ReconstructOptions};
use crate::sampling::{make_ratio_set, SamplingOperator};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::list_files;

/// Default ℓ1 weight of the classical baseline.
pub const DEFAULT_LAMBDA: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    /// Classical ISTA with a pixel ℓ1 prior, `ρ = 0.9/L`, 200 iterations.
    Ista { lambda: f64 },
    /// The trained unrolled network.
    Network,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ista { .. } => "ista",
            Method::Network => "istanetpp",
        }
    }
}

/// Reconstructs a whole (block-aligned) image from its measurements.
pub fn reconstruct_with<T: Scalar>(
    y: &Tensor<T>,
    op: &SamplingOperator<T>,
    method: Method,
    model: Option<&Model<T>>,
    opts: ReconstructOptions,
) -> Result<Tensor<T>> {
    match method {
        Method::Ista { lambda } => Ok(run_ista(y, op, &IstaConfig::for_operator(op, lambda))?.image),
        Method::Network => {
            let model = model.ok_or_else(|| Error::InvalidArgument("the network method needs a checkpoint".into()))?;
            Ok(model.reconstruct(y, op, op.ratio(), opts)?.image)
        }
    }
}

/// Operator a model uses at `ratio`. Untrained ratios get a freshly drawn
/// Gaussian matrix when extrapolation is allowed.
pub fn model_operator<T: Scalar>(model: &Model<T>, ratio: f64, opts: ReconstructOptions) -> Result<SamplingOperator<T>> {
    match model.operator(ratio) {
        Ok(op) => Ok(op.clone()),
        Err(e @ Error::UnknownRatio { .. }) => {
            if !opts.allow_extrapolation {
                return Err(e);
            }
            log::warn!("ratio {ratio} was not trained; results are untested extrapolation");
            let seed = model.config.sampling_seed.wrapping_add((ratio * 1e6).round() as u64);
            SamplingOperator::gaussian(model.config.block_size, ratio, seed)
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug)]
pub struct EvalRow {
    pub image: String,
    pub ratio: f64,
    pub psnr: Psnr,
    /// PSNR of the initialization `𝒜ᵀY`.
    pub init_psnr: Psnr,
    pub artifact: ArtifactScore,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct RatioSummary {
    pub ratio: f64,
    pub images: usize,
    pub mean_psnr: f64,
    pub mean_init_psnr: f64,
    pub mean_artifact: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub method: String,
    pub ratios: Vec<f64>,
    pub rows: Vec<EvalRow>,
    /// `key=value` pairs echoed at the top of the table.
    pub config: Vec<(String, String)>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl EvalReport {
    /// One summary per ratio, in `ratios` order. Exact reconstructions
    /// count as `+∞` dB.
    pub fn summaries(&self) -> Vec<RatioSummary> {
        self.ratios
            .iter()
            .map(|&r| {
                let rows: Vec<&EvalRow> = self.rows.iter().filter(|row| row.ratio == r).collect();
                RatioSummary {
                    ratio: r,
                    images: rows.len(),
                    mean_psnr: mean(rows.iter().map(|x| x.psnr.as_f64())),
                    mean_init_psnr: mean(rows.iter().map(|x| x.init_psnr.as_f64())),
                    mean_artifact: mean(rows.iter().map(|x| x.artifact.score)),
                    seconds: rows.iter().map(|x| x.seconds).sum(),
                }
            })
            .collect()
    }

    /// Mean over ratios of the per-ratio mean PSNR.
    pub fn average_psnr(&self) -> f64 {
        mean(self.summaries().iter().map(|s| s.mean_psnr))
    }

    /// Aligned text: config echo, one row per ratio, then an `Avg` row.
    pub fn table(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.config {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(
            out,
            "{:<8} {:>7} {:>10} {:>12} {:>10} {:>9}",
            "Ratio", "Images", "PSNR(dB)", "X0 PSNR(dB)", "Artifact", "Time(s)"
        );
        let sums = self.summaries();
        for s in &sums {
            let _ = writeln!(
                out,
                "{:<8} {:>7} {:>10.2} {:>12.2} {:>10.5} {:>9.2}",
                format!("{:.0}%", s.ratio * 100.0),
                s.images,
                s.mean_psnr,
                s.mean_init_psnr,
                s.mean_artifact,
                s.seconds
            );
        }
        let _ = writeln!(
            out,
            "{:<8} {:>7} {:>10.2} {:>12.2} {:>10.5} {:>9.2}",
            "Avg",
            sums.iter().map(|s| s.images).sum::<usize>(),
            self.average_psnr(),
            mean(sums.iter().map(|s| s.mean_init_psnr)),
            mean(sums.iter().map(|s| s.mean_artifact)),
            sums.iter().map(|s| s.seconds).sum::<f64>()
        );
        out
    }

    /// One line per (image, ratio), then per-ratio means (`image = MEAN`)
    /// and the overall average (`ratio = all`).
    pub fn csv(&self) -> String {
        let mut out = String::from("image,ratio,method,psnr_db,init_psnr_db,artifact_raw,artifact_score,seconds\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.image,
                r.ratio,
                self.method,
                r.psnr.as_f64(),
                r.init_psnr.as_f64(),
                r.artifact.raw,
                r.artifact.score,
                r.seconds
            );
        }
        for s in self.summaries() {
            let _ = writeln!(
                out,
                "MEAN,{},{},{},{},,{},{}",
                s.ratio, self.method, s.mean_psnr, s.mean_init_psnr, s.mean_artifact, s.seconds
            );
        }
        let _ = writeln!(out, "MEAN,all,{},{},,,,", self.method, self.average_psnr());
        out
    }
}

/// Every decodable graymap in `dir`, keyed by file name, in name order.
/// Undecodable files are logged and skipped; an empty result is an error.
pub fn load_images<T: Scalar>(dir: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let mut out = Vec::new();
    for f in list_files(dir)? {
        match read_pgm(&f) {
            Ok(img) => out.push((f.file_name().unwrap_or_default().to_string_lossy().into_owned(), img)),
            Err(e) => log::warn!("skipping {}: {e}", f.display()),
        }
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!("no readable images in {}", dir.display())));
    }
    Ok(out)
}

/// Evaluates `method` on every image at every ratio. Images are padded to
/// whole blocks for sampling and cropped back before scoring; the artifact
/// score is taken on the padded reconstruction.
///
/// The network method measures with the model's own operators. The
/// classical method uses them too when a model is given, otherwise a
/// Gaussian set drawn from `sampling_seed`.
pub fn evaluate<T: Scalar>(
    images: &[(String, Tensor<T>)],
    ratios: &[f64],
    method: Method,
    model: Option<&Model<T>>,
    block_size: usize,
    sampling_seed: u64,
    opts: ReconstructOptions,
) -> Result<EvalReport> {
    if ratios.is_empty() || images.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one image and one ratio".into()));
    }
    let operators = match model {
        Some(m) => ratios.iter().map(|&r| model_operator(m, r, opts)).collect::<Result<Vec<_>>>()?,
        None => make_ratio_set(block_size, ratios, sampling_seed)?,
    };
    let b = operators[0].block_size();
    let mut rows = Vec::with_capacity(images.len() * ratios.len());
    for (op, &ratio) in operators.iter().zip(ratios) {
        for (name, img) in images {
            let start = Instant::now();
            let (padded, (h, w)) = pad_to_blocks(img, b)?;
            let y = op.measure(&padded)?;
            let rec = reconstruct_with(&y, op, method, model, opts)?;
            let seconds = start.elapsed().as_secs_f64();
            let init = crop_back(&op.init_transpose(&y)?, h, w)?;
            rows.push(EvalRow {
                image: name.clone(),
                ratio,
                psnr: psnr(&crop_back(&rec, h, w)?, img)?,
                init_psnr: psnr(&init, img)?,
                artifact: block_artifact_score(&rec, b)?,
                seconds,
            });
        }
    }
    let mut config = vec![
        ("method".to_string(), method.name().to_string()),
        ("block_size".to_string(), b.to_string()),
    ];
    if let Method::Ista { lambda } = method {
        config.push(("lambda".into(), format!("{lambda:?}")));
    }
    if let Some(m) = model {
        let c = &m.config;
        config.push(("stages".into(), c.stages.to_string()));
        config.push(("channels".into(), c.channels.to_string()));
        config.push(("dus_rho".into(), c.dus_rho.to_string()));
        config.push(("dus_sigma".into(), c.dus_sigma.to_string()));
        config.push(("cbs".into(), c.cbs.to_string()));
    }
    Ok(EvalReport {
        method: method.name().to_string(),
        ratios: ratios.to_vec(),
        rows,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;

    fn images() -> Vec<(String, Tensor<f64>)> {
        (0..2)
            .map(|i| (format!("img{i}"), crate::fixtures::synthetic_image(20, 24, i)))
            .collect()
    }

    #[test]
    fn five_ratios_five_rows_plus_average() {
        let ratios = [0.1, 0.2, 0.3, 0.4, 0.5];
        let m = Model::<f64>::new(NetConfig::tiny(1, 2, 8, &ratios)).unwrap();
        let rep = evaluate(&images(), &ratios, Method::Network, Some(&m), 8, 0, Default::default()).unwrap();
        let table = rep.table();
        let body: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body.len(), 1 + 5 + 1);
        assert!(body[6].starts_with("Avg"));
        assert_eq!(rep.csv().lines().count(), 1 + 10 + 5 + 1);
    }

    #[test]
    fn averages_recompute_from_rows() {
        let rep = evaluate(&images(), &[0.25, 0.5], Method::Ista { lambda: 1e-4 }, None, 4, 3, Default::default()).unwrap();
        for s in rep.summaries() {
            let vals: Vec<f64> = rep.rows.iter().filter(|r| r.ratio == s.ratio).map(|r| r.psnr.as_f64()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((s.mean_psnr - m).abs() <= 1e-9);
        }
    }

    #[test]
    fn untrained_ratio_needs_opt_in() {
        let m = Model::<f64>::new(NetConfig::tiny(1, 2, 8, &[0.5])).unwrap();
        assert!(matches!(
            evaluate(&images(), &[0.3], Method::Network, Some(&m), 8, 0, Default::default()),
            Err(Error::UnknownRatio { .. })
        ));
        let opts = ReconstructOptions { allow_extrapolation: true };
        assert!(evaluate(&images(), &[0.3], Method::Network, Some(&m), 8, 0, opts).is_ok());
    }
}
