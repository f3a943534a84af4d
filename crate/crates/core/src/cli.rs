//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ct_sim::{make_phantom, Dataset, DatasetConfig, NoiseConfig, NoiseMode};
use crate::error::{LtvError, Result};
use crate::model::LtvModel;
use crate::objective::{psnr, ssim_value};
use crate::solver::classical_tv;
use crate::tensor::io::{read_pgm, write_ltvt, write_pgm16};
use crate::tensor::Tensor;
use crate::trainer::eval::{MetricsRow, MetricsTable};
use crate::trainer::{ablate, evaluate, train_observed, AblationSpec, EvalConfig, TrainConfig};

pub const CONFIG_ECHO: &str = "config.txt";
pub const VERSION_FILE: &str = "VERSION";

#[derive(Parser, Debug)]
#[command(name = "ltv", version, about = "Learnable total variation denoising", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run directory for every output file.
    #[arg(long = "out-dir", visible_alias = "out", default_value = "ltv-run")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sinogram,
    Image,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Val,
    Train,
    All,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Dataset directory written by `simulate`.
    #[arg(long)]
    pub data: PathBuf,
    /// key=value config file; `#` starts a comment.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable); wins over the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write random phantoms as 16-bit PGM.
    PhantomGen {
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 6)]
        primitives: usize,
        #[arg(long)]
        textured: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a paired clean/noisy dataset.
    Simulate {
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long = "n-train", default_value_t = 32)]
        n_train: usize,
        #[arg(long = "n-val", default_value_t = 8)]
        n_val: usize,
        #[arg(long, default_value_t = 6)]
        primitives: usize,
        #[arg(long, default_value_t = 180)]
        angles: usize,
        #[arg(long, default_value_t = 0.10)]
        dose: f64,
        #[arg(long, default_value_t = 2700.0)]
        n0: f64,
        #[arg(long, value_enum, default_value_t = ModeArg::Sinogram)]
        mode: ModeArg,
        #[arg(long = "gaussian-sigma", default_value_t = 0.08)]
        gaussian_sigma: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Train an LTV model.
    Train {
        #[command(flatten)]
        args: TrainArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Denoise one image with a checkpoint or a scalar λ.
    Denoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, conflicts_with = "lambda", required_unless_present = "lambda")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Solver iterations in scalar-λ mode.
        #[arg(long, default_value_t = 100)]
        iterations: usize,
        /// Clean image; enables the error map and metrics.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Require an absolute-error map (needs --reference).
        #[arg(long = "error-map")]
        error_map: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Compare noisy input, classical TV over a λ grid and an LTV checkpoint.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Val)]
        split: SplitArg,
        #[arg(long = "tv-iterations", default_value_t = 100)]
        tv_iterations: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Retrain with regularizers removed and compare.
    Ablate {
        #[command(flatten)]
        args: TrainArgs,
        /// Arm with w_tv_lambda = 0.
        #[arg(long = "tv-lambda")]
        tv_lambda: bool,
        /// Arm with w_ent = 0.
        #[arg(long)]
        ent: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Scalar-λ TV with textbook step sizes.
    ClassicalTv {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the built-in invariant checks.
    Selftest {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<LtvError> for CliError {
    fn from(e: LtvError) -> Self {
        match e {
            LtvError::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parse `argv` (program name first), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    let _ = e.print();
                    1
                }
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// Parse a key=value config text. Blank lines and `#` comments are ignored.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| LtvError::Config(format!("line {}: expected key=value, got '{line}'", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Config file first, then `--set` pairs, then dedicated flags.
pub fn build_train_config(args: &TrainArgs, seed: u64) -> Result<TrainConfig> {
    let mut cfg = TrainConfig { seed, ..TrainConfig::default() };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| LtvError::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (k, v) in parse_config_text(&text)? {
            if k == "seed" {
                return Err(LtvError::Config("set the seed with --seed".into()));
            }
            cfg.set(&k, &v)?;
        }
    }
    for pair in &args.set {
        let (k, v) = pair.split_once('=').ok_or_else(|| LtvError::Config(format!("--set expects KEY=VALUE, got '{pair}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    cfg.seed = seed;
    cfg.validate().map_err(|e| LtvError::Config(e.to_string()))?;
    Ok(cfg)
}

/// Attach the offending path to a load failure.
fn with_path<T>(path: &Path, r: Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        LtvError::Config(m) => CliError::Usage(m),
        e => CliError::Runtime(format!("{}: {e}", path.display())),
    })
}

fn prepare_run_dir(dir: &Path, echo: &str) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_ECHO), echo)?;
    fs::write(dir.join(VERSION_FILE), format!("ltv {}\n", env!("CARGO_PKG_VERSION")))?;
    Ok(())
}

/// Fail unless every listed file exists in the run directory.
pub fn check_manifest(dir: &Path, required: &[&str]) -> Result<()> {
    let missing: Vec<&str> = required.iter().copied().filter(|f| !dir.join(f).exists()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(LtvError::Format(format!("run directory {} is missing {}", dir.display(), missing.join(", "))))
    }
}

fn echo_pairs(pairs: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::PhantomGen { size, count, primitives, textured, common } => {
            let echo = echo_pairs(&[
                ("command", "phantom-gen".into()),
                ("size", size.to_string()),
                ("count", count.to_string()),
                ("primitives", primitives.to_string()),
                ("textured", textured.to_string()),
                ("seed", common.seed.to_string()),
            ]);
            prepare_run_dir(&common.out_dir, &echo)?;
            let mut desc = String::new();
            for i in 0..count {
                let ph = make_phantom(size, size, primitives, common.seed ^ i as u64, textured)?;
                write_pgm16(&common.out_dir.join(format!("{i:04}.pgm")), &ph.image)?;
                for p in &ph.primitives {
                    let _ = writeln!(
                        desc,
                        "{i:04} {:?} center=({},{}) axes=({},{}) angle={} intensity={} texture={}",
                        p.shape, p.center.0, p.center.1, p.axes.0, p.axes.1, p.angle, p.intensity, p.texture
                    );
                }
            }
            fs::write(common.out_dir.join("phantoms.txt"), desc)?;
            check_manifest(&common.out_dir, &[CONFIG_ECHO, VERSION_FILE, "phantoms.txt"])?;
        }
        Command::Simulate { size, n_train, n_val, primitives, angles, dose, n0, mode, gaussian_sigma, common } => {
            let noise = NoiseConfig {
                n0,
                dose_fraction: dose,
                mode: match mode {
                    ModeArg::Sinogram => NoiseMode::Sinogram,
                    ModeArg::Image => NoiseMode::Image,
                },
                gaussian_sigma,
                seed: common.seed,
                mu: None,
            };
            noise.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let cfg = DatasetConfig { height: size, width: size, n_train, n_val, n_primitives: primitives, angles, noise, seed: common.seed };
            prepare_run_dir(&common.out_dir, &crate::ct_sim::dataset::meta_text(&cfg))?;
            let ds = Dataset::generate(&cfg)?;
            ds.save(&common.out_dir)?;
            check_manifest(&common.out_dir, &[CONFIG_ECHO, VERSION_FILE, "meta.txt", "clean", "noisy"])?;
            println!("wrote {} images to {}", cfg.total(), common.out_dir.display());
        }
        Command::Train { args, common } => {
            let cfg = build_train_config(&args, common.seed)?;
            let ds = with_path(&args.data, Dataset::load(&args.data))?;
            prepare_run_dir(&common.out_dir, &cfg.echo())?;
            let out = train_observed(&ds, &cfg, Some(&common.out_dir), |r| {
                println!(
                    "epoch {:3}  loss {:.5}  val psnr {:.3} ssim {:.4}  lambda_max {:.3}  lambda mean {:.4} std {:.4} r {:.3}",
                    r.epoch, r.train.total, r.val_psnr, r.val_ssim, r.lambda_max, r.lambda.mean, r.lambda.std, r.lambda.r
                );
            })?;
            check_manifest(&common.out_dir, &[CONFIG_ECHO, VERSION_FILE, crate::trainer::RUNLOG_FILE])?;
            println!("best epoch {} (val psnr {:.3})", out.best_epoch, out.best_psnr);
        }
        Command::Denoise { input, checkpoint, lambda, iterations, reference, error_map, common } => {
            if error_map && reference.is_none() {
                return Err(CliError::Usage("--error-map needs --reference".into()));
            }
            let echo = echo_pairs(&[
                ("command", "denoise".into()),
                ("input", input.display().to_string()),
                ("checkpoint", checkpoint.as_ref().map_or("none".into(), |p| p.display().to_string())),
                ("lambda", lambda.map_or("none".into(), |l| l.to_string())),
                ("iterations", iterations.to_string()),
                ("reference", reference.as_ref().map_or("none".into(), |p| p.display().to_string())),
                ("seed", common.seed.to_string()),
            ]);
            let y = with_path(&input, read_pgm(&input))?;
            let (x, lam) = match (&checkpoint, lambda) {
                (Some(dir), _) => with_path(dir, LtvModel::load(dir))?.denoise(&y)?,
                (None, Some(l)) => (classical_tv(&y, l, iterations)?, Tensor::full(y.shape(), l)),
                (None, None) => return Err(CliError::Usage("give --checkpoint or --lambda".into())),
            };
            prepare_run_dir(&common.out_dir, &echo)?;
            let dir = &common.out_dir;
            write_pgm16(&dir.join("denoised.pgm"), &x)?;
            write_lambda_map(dir, &lam)?;
            let mut required = vec![CONFIG_ECHO, VERSION_FILE, "denoised.pgm", "lambda.pgm", "lambda_range.txt"];
            if let Some(r) = &reference {
                let clean = with_path(r, read_pgm(r))?;
                if clean.shape() != y.shape() {
                    return Err(LtvError::shape("denoise", format!("reference {:?} vs input {:?}", clean.shape(), y.shape())).into());
                }
                pair_metrics(&y, &x, &clean, if checkpoint.is_some() { "ltv" } else { "tv" })?.write_csv(&dir.join("metrics.csv"))?;
                required.push("metrics.csv");
                if error_map {
                    write_pgm16(&dir.join("error.pgm"), &x.sub(&clean)?.map(f64::abs))?;
                    required.push("error.pgm");
                }
            }
            check_manifest(dir, &required)?;
        }
        Command::Eval { data, checkpoint, split, tv_iterations, common } => {
            let ds = with_path(&data, Dataset::load(&data))?;
            let model = match &checkpoint {
                Some(c) => Some(with_path(c, LtvModel::load(c))?),
                None => None,
            };
            let samples: Vec<_> = match split {
                SplitArg::Val => ds.val.clone(),
                SplitArg::Train => ds.train.clone(),
                SplitArg::All => ds.samples().cloned().collect(),
            };
            let cfg = EvalConfig { tv_iterations, ..EvalConfig::default() };
            let echo = echo_pairs(&[
                ("command", "eval".into()),
                ("data", data.display().to_string()),
                ("checkpoint", checkpoint.as_ref().map_or("none".into(), |p| p.display().to_string())),
                ("split", format!("{split:?}").to_lowercase()),
                ("tv_iterations", tv_iterations.to_string()),
                ("lambda_grid", cfg.lambda_grid.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")),
                ("seed", common.seed.to_string()),
            ]);
            prepare_run_dir(&common.out_dir, &echo)?;
            let ev = evaluate(model.as_ref(), &samples, &cfg)?;
            ev.table().write_csv(&common.out_dir.join("metrics.csv"))?;
            let mut required = vec![CONFIG_ECHO, VERSION_FILE, "metrics.csv", "best_lambda.txt"];
            if ev.textured.iter().any(|&t| t) {
                ev.textured_table().write_csv(&common.out_dir.join("metrics_textured.csv"))?;
                required.push("metrics_textured.csv");
            }
            fs::write(common.out_dir.join("best_lambda.txt"), format!("{}\n", ev.best_lambda))?;
            check_manifest(&common.out_dir, &required)?;
            print!("{}", ev.table().to_csv());
        }
        Command::Ablate { args, tv_lambda, ent, common } => {
            let cfg = build_train_config(&args, common.seed)?;
            let (tv_lambda, ent) = if tv_lambda || ent { (tv_lambda, ent) } else { (true, true) };
            let ds = with_path(&args.data, Dataset::load(&args.data))?;
            prepare_run_dir(&common.out_dir, &cfg.echo())?;
            let report = ablate(&ds, &cfg, &AblationSpec::standard(tv_lambda, ent), Some(&common.out_dir))?;
            fs::write(common.out_dir.join("ablation.csv"), report.to_csv())?;
            check_manifest(&common.out_dir, &[CONFIG_ECHO, VERSION_FILE, "ablation.csv"])?;
            print!("{}", report.to_csv());
        }
        Command::ClassicalTv { input, lambda, iterations, reference, common } => {
            let echo = echo_pairs(&[
                ("command", "classical-tv".into()),
                ("input", input.display().to_string()),
                ("lambda", lambda.to_string()),
                ("iterations", iterations.to_string()),
                ("seed", common.seed.to_string()),
            ]);
            let y = with_path(&input, read_pgm(&input))?;
            let x = classical_tv(&y, lambda, iterations)?;
            prepare_run_dir(&common.out_dir, &echo)?;
            write_pgm16(&common.out_dir.join("denoised.pgm"), &x)?;
            let mut required = vec![CONFIG_ECHO, VERSION_FILE, "denoised.pgm"];
            if let Some(r) = reference {
                pair_metrics(&y, &x, &with_path(&r, read_pgm(&r))?, "tv")?.write_csv(&common.out_dir.join("metrics.csv"))?;
                required.push("metrics.csv");
            }
            check_manifest(&common.out_dir, &required)?;
        }
        Command::Selftest { common } => {
            prepare_run_dir(&common.out_dir, &echo_pairs(&[("command", "selftest".into()), ("seed", common.seed.to_string())]))?;
            let report = crate::selftest::run(common.seed);
            fs::write(common.out_dir.join("selftest.txt"), report.to_string())?;
            check_manifest(&common.out_dir, &[CONFIG_ECHO, VERSION_FILE, "selftest.txt"])?;
            print!("{report}");
            if !report.passed() {
                return Err(CliError::Runtime("selftest failed".into()));
            }
        }
    }
    Ok(())
}

/// λ normalized to `[0, 1]` as PGM, exact range in a sidecar and the raw
/// tensor as LTVT.
fn write_lambda_map(dir: &Path, lam: &Tensor) -> Result<()> {
    let (lo, hi) = (lam.min(), lam.max());
    let norm = if hi > lo { lam.map(|v| (v - lo) / (hi - lo)) } else { Tensor::zeros(lam.shape()) };
    write_pgm16(&dir.join("lambda.pgm"), &norm)?;
    fs::write(dir.join("lambda_range.txt"), format!("min={lo}\nmax={hi}\n"))?;
    write_ltvt(&dir.join("lambda.ltvt"), lam)
}

fn pair_metrics(noisy: &Tensor, out: &Tensor, clean: &Tensor, name: &str) -> Result<MetricsTable> {
    let row = |method: &str, x: &Tensor| -> Result<MetricsRow> {
        Ok(MetricsRow { method: method.into(), psnr_mean: psnr(x, clean)?, psnr_std: 0.0, ssim_mean: ssim_value(x, clean)?, ssim_std: 0.0 })
    };
    Ok(MetricsTable { rows: vec![row("noisy", noisy)?, row(name, out)?] })
}

/// Read a λ-range sidecar back.
pub fn read_lambda_range(path: &Path) -> Result<(f64, f64)> {
    let text = fs::read_to_string(path)?;
    let mut lo = None;
    let mut hi = None;
    for (k, v) in parse_config_text(&text)? {
        let v: f64 = v.parse().map_err(|_| LtvError::Format(format!("bad {k} in λ range")))?;
        match k.as_str() {
            "min" => lo = Some(v),
            "max" => hi = Some(v),
            _ => return Err(LtvError::Format(format!("unknown key '{k}' in λ range"))),
        }
    }
    match (lo, hi) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(LtvError::Format("λ range needs min and max".into())),
    }
}
