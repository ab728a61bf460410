use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use deepcs::eval::{evaluate, load_images, reconstruct_with, Method, DEFAULT_LAMBDA};
use deepcs::gradcheck::run_suite;
use deepcs::image::{crop_back, quantized, read_pgm, write_pgm};
use deepcs::metrics::psnr;
use deepcs::net::ReconstructOptions;
use deepcs::train::{self, initial_state, load_dataset, TrainConfig};
use deepcs::{AdamConfig, Checkpoint64, Error, Measurements, Model64, NetConfig, SamplingOperator64, Tensor64};

#[derive(Debug, Parser)]
#[command(name = "deepcs", version, about = "Block compressive sensing with unrolled ISTA networks")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Measure an image with a Gaussian block operator.
    Sample(SampleArgs),
    /// Rebuild an image from a measurement file.
    Reconstruct(ReconstructArgs),
    /// Train a network from a key=value config file.
    Train(TrainArgs),
    /// Evaluate a method on a directory of images at several ratios.
    Eval(EvalArgs),
    /// Check every backward pass against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate every on/off combination of ablation switches.
    Ablate(AblateArgs),
    /// Write a set of synthetic test images.
    MakeFixtures(FixtureArgs),
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_parser = parse_ratio)]
    ratio: f64,
    #[arg(long, default_value_t = 32)]
    block: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Orthonormalize the rows of Φ.
    #[arg(long)]
    orthonormal: bool,
    /// Use the sampling matrix stored in this checkpoint for `--ratio`
    /// (overrides --block, --seed and --orthonormal).
    #[arg(long)]
    ckpt: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Ista,
    Istanetpp,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    meas: PathBuf,
    /// Trained model (required for istanetpp).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Reference image; prints the PSNR of the written output against it.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// ℓ1 weight of the classical method.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    /// Accept ratios the model was not trained on.
    #[arg(long)]
    allow_extrapolation: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Trained model (required for istanetpp).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Defaults to the model's trained ratios.
    #[arg(long, value_delimiter = ',', value_parser = parse_ratio)]
    ratios: Vec<f64>,
    #[arg(long, value_enum, default_value = "istanetpp")]
    method: MethodArg,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    /// Block size and sampling seed for ista without a checkpoint.
    #[arg(long, default_value_t = 32)]
    block: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    allow_extrapolation: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Flag {
    DusRho,
    DusSigma,
    Cbs,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Switches to toggle; every on/off combination is trained.
    #[arg(long, value_delimiter = ',', value_enum, required = true)]
    flags: Vec<Flag>,
    #[arg(long)]
    dataset: PathBuf,
    /// The last N images (by name) are held out for evaluation.
    #[arg(long, default_value_t = 2)]
    holdout: usize,
    #[arg(long, value_delimiter = ',', value_parser = parse_ratio, default_value = "0.1,0.3,0.5")]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    stages: usize,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 16)]
    block: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    patch_size: usize,
    #[arg(long, default_value_t = 3)]
    patches_per_image: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_ratio(s: &str) -> Result<f64, String> {
    let r: f64 = s.trim().parse().map_err(|_| format!("{s:?} is not a number"))?;
    if r > 0.0 && r <= 1.0 {
        Ok(r)
    } else {
        Err(format!("ratio {r} outside (0, 1]"))
    }
}

/// A command failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    Lib(Error),
    Usage(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Numeric(_) => 4,
            Failure::Lib(e) if e.is_numeric() => 4,
            Failure::Lib(e) if e.is_io() => 3,
            Failure::Lib(_) => 2,
        }
    }

    pub fn message(&self) -> String {
        let m = match self {
            Failure::Lib(e) => e.to_string(),
            Failure::Usage(m) | Failure::Numeric(m) => m.clone(),
        };
        m.replace('\n', " ")
    }
}

type CmdResult = Result<(), Failure>;

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Sample(a) => sample(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Ablate(a) => ablate(a),
        Command::MakeFixtures(a) => make_fixtures(a),
    }
}

fn method(arg: MethodArg, lambda: f64) -> Result<Method, Failure> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Failure::Usage(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    Ok(match arg {
        MethodArg::Ista => Method::Ista { lambda },
        MethodArg::Istanetpp => Method::Network,
    })
}

fn load_model(ckpt: Option<&Path>, m: Method) -> Result<Option<Model64>, Failure> {
    match (ckpt, m) {
        (Some(p), _) => Ok(Some(Checkpoint64::load(p)?.model)),
        (None, Method::Network) => Err(Failure::Usage("--ckpt is required for --method istanetpp".into())),
        (None, _) => Ok(None),
    }
}

fn sample(a: SampleArgs) -> CmdResult {
    let img: Tensor64 = read_pgm(&a.input)?;
    let op = match &a.ckpt {
        Some(p) => Checkpoint64::load(p)?.model.operator(a.ratio)?.clone(),
        None => {
            let op = SamplingOperator64::gaussian(a.block, a.ratio, a.seed)?;
            if a.orthonormal {
                op.orthonormalized()?
            } else {
                op
            }
        }
    };
    let meas = Measurements::acquire(&img, &op)?;
    meas.write(&a.out)?;
    let (m, h, w) = meas.data.dims3()?;
    println!(
        "wrote {}: B={} ratio={} M={} grid={h}x{w} seed={}",
        a.out.display(),
        meas.block_size,
        meas.ratio,
        m,
        meas.seed
    );
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> CmdResult {
    let m = method(a.method, a.lambda)?;
    let model = load_model(a.ckpt.as_deref(), m)?;
    let meas = Measurements::<f64>::read(&a.meas)?;
    let op = meas.operator()?;
    let opts = ReconstructOptions {
        allow_extrapolation: a.allow_extrapolation,
    };
    if let Some(model) = &model {
        if model.config.block_size != meas.block_size && m == Method::Network {
            return Err(Error::Incompatible(format!(
                "measurements use B={}, the model B={}",
                meas.block_size, model.config.block_size
            ))
            .into());
        }
    }
    let rec = reconstruct_with(&meas.data, &op, m, model.as_ref(), opts)?;
    let out = quantized(&crop_back(&rec, meas.orig_height, meas.orig_width)?);
    write_pgm(&a.out, &out)?;
    println!("wrote {}", a.out.display());
    if let Some(r) = &a.reference {
        let reference: Tensor64 = read_pgm(r)?;
        println!("PSNR: {}", psnr(&out, &reference)?);
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let cfg = TrainConfig::from_file(&a.config)?;
    let data = load_dataset::<f64>(&cfg.dataset_dir, cfg.patch_size, cfg.net.block_size, cfg.patches_per_image, cfg.seed)?;
    if !data.skipped.is_empty() {
        eprintln!("warning: skipped {} unreadable files", data.skipped.len());
    }
    let mut state = initial_state::<f64>(&cfg)?;
    println!(
        "training {} parameters on {} patches from {} images, starting at epoch {}",
        state.model.parameter_count(),
        data.patches.len(),
        data.images,
        state.epoch
    );
    train::train(&mut state, &data.patches, &cfg, |s| {
        println!("epoch {:>4}  loss {:.6e}  ({:.1}s)", s.epoch, s.loss, s.seconds);
    })?;
    if let Some(dir) = &cfg.checkpoint_dir {
        println!("checkpoint: {}", dir.join(train::CHECKPOINT_FILE).display());
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> CmdResult {
    let m = method(a.method, a.lambda)?;
    let model = load_model(a.ckpt.as_deref(), m)?;
    let ratios = match (&model, a.ratios.is_empty()) {
        (_, false) => a.ratios.clone(),
        (Some(model), true) => model.config.ratios.clone(),
        (None, true) => return Err(Failure::Usage("--ratios is required without a checkpoint".into())),
    };
    let images = load_images::<f64>(&a.dataset)?;
    let opts = ReconstructOptions {
        allow_extrapolation: a.allow_extrapolation,
    };
    let report = evaluate(&images, &ratios, m, model.as_ref(), a.block, a.seed, opts)?;
    print!("{}", report.table());
    if let Some(p) = &a.out_csv {
        std::fs::write(p, report.csv()).map_err(|e| Failure::Lib(Error::Io { path: p.clone(), source: e }))?;
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let checks = run_suite(a.seed)?;
    let mut failed = 0;
    for c in &checks {
        println!(
            "{:<4} {:<40} probes {:>4}  max rel err {:.3e}  (tol {:.0e})",
            if c.passed() { "ok" } else { "FAIL" },
            c.name,
            c.probes,
            c.max_rel_error,
            c.tolerance
        );
        failed += usize::from(!c.passed());
    }
    println!("{} checks, {} failed", checks.len(), failed);
    if failed > 0 {
        return Err(Failure::Numeric(format!("{failed} gradient checks exceeded their tolerance")));
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> CmdResult {
    let mut flags = a.flags.clone();
    flags.dedup();
    let files = train::list_files(&a.dataset)?;
    let images: Vec<(String, Tensor64)> = files
        .iter()
        .filter_map(|f| match read_pgm(f) {
            Ok(img) => Some((f.file_name().unwrap_or_default().to_string_lossy().into_owned(), img)),
            Err(e) => {
                log::warn!("skipping {}: {e}", f.display());
                None
            }
        })
        .collect();
    if images.len() <= a.holdout || a.holdout == 0 {
        return Err(Error::Dataset(format!(
            "{} readable images; ablation needs more than --holdout={} and at least one held out",
            images.len(),
            a.holdout
        ))
        .into());
    }
    let (train_imgs, test_imgs) = images.split_at(images.len() - a.holdout);
    let tmp = std::env::temp_dir().join(format!("deepcs-ablate-{}", std::process::id()));
    let result = ablate_grid(&a, &flags, train_imgs, test_imgs, &tmp);
    let _ = std::fs::remove_dir_all(&tmp);
    let (table, csv) = result?;
    print!("{table}");
    if let Some(p) = &a.out_csv {
        std::fs::write(p, csv).map_err(|e| Failure::Lib(Error::Io { path: p.clone(), source: e }))?;
    }
    Ok(())
}

fn ablate_grid(
    a: &AblateArgs,
    flags: &[Flag],
    train_imgs: &[(String, Tensor64)],
    test_imgs: &[(String, Tensor64)],
    tmp: &Path,
) -> Result<(String, String), Failure> {
    // The training split goes through the normal dataset loader.
    std::fs::create_dir_all(tmp).map_err(|e| Failure::Lib(Error::Io { path: tmp.into(), source: e }))?;
    for (name, img) in train_imgs {
        write_pgm(&tmp.join(name), img)?;
    }
    let data = load_dataset::<f64>(tmp, a.patch_size, a.block, a.patches_per_image, a.seed)?;
    let mut ratios = a.ratios.clone();
    NetConfig::normalize_ratios(&mut ratios);

    let mut table = String::new();
    let mut csv = String::from("dus_rho,dus_sigma,cbs,final_loss,mean_psnr_db,mean_artifact");
    for r in &ratios {
        let _ = write!(csv, ",psnr_{r}");
    }
    csv.push('\n');
    let _ = write!(table, "{:<8} {:<10} {:<5} {:>11} {:>9} {:>10}", "dus_rho", "dus_sigma", "cbs", "final loss", "PSNR(dB)", "Artifact");
    for r in &ratios {
        let _ = write!(table, " {:>8}", format!("{:.0}%", r * 100.0));
    }
    table.push('\n');

    for mask in 0..(1u32 << flags.len()) {
        let on = |f: Flag| flags.iter().position(|&x| x == f).map_or(true, |i| mask & (1 << i) != 0);
        let net = NetConfig {
            dus_rho: on(Flag::DusRho),
            dus_sigma: on(Flag::DusSigma),
            cbs: on(Flag::Cbs),
            seed: a.seed,
            ..NetConfig::tiny(a.stages, a.channels, a.block, &ratios)
        };
        let cfg = TrainConfig {
            net: net.clone(),
            epochs: a.epochs,
            batch_size: a.batch_size,
            lr: a.lr,
            patch_size: a.patch_size,
            patches_per_image: a.patches_per_image,
            seed: a.seed,
            dataset_dir: tmp.to_path_buf(),
            checkpoint_dir: None,
            resume: None,
        };
        cfg.validate()?;
        let mut state = Checkpoint64::fresh(Model64::new(net.clone())?, AdamConfig { lr: a.lr, ..AdamConfig::default() });
        let stats = train::train(&mut state, &data.patches, &cfg, |_| {})?;
        let loss = stats.last().map_or(f64::NAN, |s| s.loss);
        let report = evaluate(test_imgs, &ratios, Method::Network, Some(&state.model), a.block, 0, Default::default())?;
        let sums = report.summaries();
        let artifact = sums.iter().map(|s| s.mean_artifact).sum::<f64>() / sums.len() as f64;
        let _ = write!(
            table,
            "{:<8} {:<10} {:<5} {:>11.4e} {:>9.2} {:>10.5}",
            net.dus_rho,
            net.dus_sigma,
            net.cbs,
            loss,
            report.average_psnr(),
            artifact
        );
        let _ = write!(csv, "{},{},{},{},{},{}", net.dus_rho, net.dus_sigma, net.cbs, loss, report.average_psnr(), artifact);
        for s in &sums {
            let _ = write!(table, " {:>8.2}", s.mean_psnr);
            let _ = write!(csv, ",{}", s.mean_psnr);
        }
        table.push('\n');
        csv.push('\n');
    }
    Ok((table, csv))
}

fn make_fixtures(a: FixtureArgs) -> CmdResult {
    if a.count == 0 || a.height == 0 || a.width == 0 {
        return Err(Failure::Usage("count, height and width must be positive".into()));
    }
    let files = deepcs::fixtures::write_fixture_set(&a.out, a.count, a.height, a.width, a.seed)?;
    println!("wrote {} images to {}", files.len(), a.out.display());
    Ok(())
}

