//! End-to-end training: per-item tapes, ordered gradient averaging,
//! global-norm clipping, two-group Adam, plateau decay and per-epoch
//! validation, checkpointing and logging.

pub mod eval;
pub mod optim;
pub mod stats;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use eval::{ablate, evaluate, AblationReport, AblationSpec, EvalConfig, Evaluation, MetricsRow, MetricsTable};
pub use optim::{clip_global_norm, plateau_decay, Adam, AdamConfig, LearningRates, Plateau, PlateauConfig};
pub use stats::{lambda_stats, LambdaStats};

use crate::ct_sim::{Dataset, Sample};
use crate::error::{LtvError, Result};
use crate::lambda_model::{PredictorConfig, RampSchedule};
use crate::model::LtvModel;
use crate::objective::{psnr, ssim_value, loss_breakdown, total_loss, LossReport, LossWeights};
use crate::solver::SolverParams;
use crate::tensor::{Tape, Tensor};

pub const RUNLOG_FILE: &str = "runlog.csv";
pub const LOSSES_FILE: &str = "losses.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const BEST_MARKER: &str = "BEST";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_lambda: f64,
    pub lr_solver: f64,
    pub clip_norm: f64,
    pub plateau: PlateauConfig,
    pub adam: AdamConfig,
    pub seed: u64,
    pub solver: SolverParams,
    pub predictor: PredictorConfig,
    pub ramp: RampSchedule,
    pub weights: LossWeights,
    /// Process batch items on the rayon pool. Results do not depend on it.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr_lambda: 2e-4,
            lr_solver: 1e-5,
            clip_norm: 1.0,
            plateau: PlateauConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
            solver: SolverParams::default(),
            predictor: PredictorConfig::default(),
            ramp: RampSchedule::default(),
            weights: LossWeights::default(),
            parallel: true,
        }
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+),* $(,)?) => {
        impl TrainConfig {
            /// Every settable key, in echo order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            /// Set one key from its text value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$($field).+ = value
                            .trim()
                            .parse()
                            .map_err(|_| LtvError::Config(format!("bad value for {key}: '{value}'")))?;
                    })*
                    _ => return Err(LtvError::Config(format!("unknown key '{key}'"))),
                }
                Ok(())
            }

            /// `key=value` lines for every key.
            pub fn echo(&self) -> String {
                let mut s = String::new();
                $(let _ = writeln!(s, "{}={}", $key, self.$($field).+);)*
                s
            }
        }
    };
}

config_keys! {
    "epochs" => epochs,
    "batch_size" => batch_size,
    "lr_lambda" => lr_lambda,
    "lr_solver" => lr_solver,
    "clip_norm" => clip_norm,
    "plateau_factor" => plateau.factor,
    "plateau_patience" => plateau.patience,
    "plateau_threshold" => plateau.threshold,
    "plateau_cooldown" => plateau.cooldown,
    "adam_beta1" => adam.beta1,
    "adam_beta2" => adam.beta2,
    "adam_eps" => adam.eps,
    "seed" => seed,
    "iterations" => solver.iterations,
    "sigma_data" => solver.sigma_data,
    "tau_raw" => solver.tau_raw,
    "sigma_raw" => solver.sigma_raw,
    "theta_raw" => solver.theta_raw,
    "depth" => predictor.depth,
    "channels" => predictor.channels,
    "kernel" => predictor.kernel,
    "half_res" => predictor.half_res,
    "lambda_min" => ramp.lambda_min,
    "lambda_max_start" => ramp.lambda_max_start,
    "lambda_max_end" => ramp.lambda_max_end,
    "ramp_epochs" => ramp.ramp_epochs,
    "epsilon_clip" => ramp.epsilon_clip,
    "w_ssim" => weights.w_ssim,
    "w_perc" => weights.w_perc,
    "w_tv_lambda" => weights.w_tv_lambda,
    "w_spatial" => weights.w_spatial,
    "w_align" => weights.w_align,
    "w_edge" => weights.w_edge,
    "w_proj" => weights.w_proj,
    "w_var" => weights.w_var,
    "w_ent" => weights.w_ent,
    "k_lo" => weights.k_lo,
    "k_hi" => weights.k_hi,
    "parallel" => parallel,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(LtvError::InvalidArgument("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lr_lambda > 0.0 && self.lr_solver > 0.0) {
            return Err(LtvError::InvalidArgument("learning rates must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(LtvError::InvalidArgument("clip_norm must be positive".into()));
        }
        if !(self.plateau.factor > 0.0 && self.plateau.factor <= 1.0) {
            return Err(LtvError::InvalidArgument("plateau factor must lie in (0, 1]".into()));
        }
        self.solver.validate()?;
        self.ramp.validate()?;
        self.weights.validate()
    }

    pub fn initial_rates(&self) -> LearningRates {
        LearningRates { predictor: self.lr_lambda, solver: self.lr_solver }
    }
}

/// One row per completed epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda_max: f64,
    pub rates: LearningRates,
    pub train: LossReport,
    pub val_psnr: f64,
    pub val_ssim: f64,
    pub lambda: LambdaStats,
    pub tau: f64,
    pub sigma: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<EpochRecord>,
}

impl RunLog {
    pub fn csv_header() -> String {
        let train: Vec<String> = LossReport::CSV_COMPONENTS.iter().map(|c| format!("train_{c}")).collect();
        format!(
            "epoch,lambda_max,lr_lambda,lr_solver,{},val_psnr,val_ssim,lambda_mean,lambda_median,lambda_std,lambda_r,lambda_degenerate,tau,sigma,theta",
            train.join(",")
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = Self::csv_header();
        s.push('\n');
        for r in &self.rows {
            let train: Vec<String> = r.train.components().iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.lambda_max,
                r.rates.predictor,
                r.rates.solver,
                train.join(","),
                r.val_psnr,
                r.val_ssim,
                r.lambda.mean,
                r.lambda.median,
                r.lambda.std,
                r.lambda.r,
                r.lambda.degenerate as u8,
                r.tau,
                r.sigma,
                r.theta
            );
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights after the last epoch.
    pub model: LtvModel,
    pub log: RunLog,
    pub best_epoch: usize,
    pub best_psnr: f64,
}

/// Validation summary of a model on a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct Validation {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub lambda: LambdaStats,
}

impl Validation {
    pub fn psnr_mean(&self) -> f64 {
        self.psnr.iter().sum::<f64>() / self.psnr.len() as f64
    }

    pub fn ssim_mean(&self) -> f64 {
        self.ssim.iter().sum::<f64>() / self.ssim.len() as f64
    }
}

pub fn validate(model: &LtvModel, samples: &[Sample]) -> Result<Validation> {
    if samples.is_empty() {
        return Err(LtvError::InvalidArgument("empty validation set".into()));
    }
    let outs: Vec<(Tensor, Tensor)> = samples.par_iter().map(|s| model.denoise(&s.noisy)).collect::<Result<_>>()?;
    let mut psnrs = Vec::with_capacity(samples.len());
    let mut ssims = Vec::with_capacity(samples.len());
    for (s, (x, _)) in samples.iter().zip(&outs) {
        psnrs.push(psnr(x, &s.clean)?);
        ssims.push(ssim_value(x, &s.clean)?);
    }
    let (xs, lams): (Vec<Tensor>, Vec<Tensor>) = outs.into_iter().unzip();
    Ok(Validation { psnr: psnrs, ssim: ssims, lambda: lambda_stats(&lams, &xs)? })
}

fn is_numeric_failure(e: &LtvError) -> bool {
    match e {
        LtvError::NonFinite { .. } | LtvError::DivisionByZero { .. } => true,
        LtvError::SolverDiverged { source, .. } => is_numeric_failure(source),
        _ => false,
    }
}

/// Loss gradient for one sample, in parameter-store order.
fn item_gradient(
    model: &LtvModel,
    sample: &Sample,
    epoch: f64,
    weights: &LossWeights,
    batch: usize,
) -> Result<(Vec<Tensor>, LossReport)> {
    let abort = |e: LtvError| {
        if is_numeric_failure(&e) {
            LtvError::NonFiniteLoss { batch, breakdown: format!("sample {}: {e}", sample.index) }
        } else {
            e
        }
    };
    let tape = Tape::new();
    let f = model.forward(&tape, &sample.noisy, epoch, true).map_err(abort)?;
    let clean = tape.constant(sample.clean.clone());
    let (loss, report) = total_loss(&f.x_hat, &clean, &f.lambda, weights, None).map_err(|e| {
        if !is_numeric_failure(&e) {
            return e;
        }
        let lam = &f.lambda;
        let parts = loss_breakdown(f.x_hat.value(), &sample.clean, lam.values.value(), lam.lambda_min, lam.lambda_max, weights);
        LtvError::NonFiniteLoss { batch, breakdown: format!("sample {}: {e}; {parts}", sample.index) }
    })?;
    if report.components().iter().any(|v| !v.is_finite()) {
        return Err(LtvError::NonFiniteLoss { batch, breakdown: format!("sample {}: {report}", sample.index) });
    }
    let grads = tape.backward(&loss).map_err(abort)?;
    Ok((f.weights.iter().map(|w| grads.get_or_zeros(w)).collect(), report))
}

/// Mean gradient and loss reports over a batch. Items may run in parallel;
/// the sum is always taken in batch order.
pub fn batch_gradient(
    model: &LtvModel,
    batch_items: &[&Sample],
    epoch: f64,
    weights: &LossWeights,
    batch: usize,
    parallel: bool,
) -> Result<(Vec<Tensor>, Vec<LossReport>)> {
    let per_item: Vec<(Vec<Tensor>, LossReport)> = if parallel {
        batch_items.par_iter().map(|s| item_gradient(model, s, epoch, weights, batch)).collect::<Result<_>>()?
    } else {
        batch_items.iter().map(|s| item_gradient(model, s, epoch, weights, batch)).collect::<Result<_>>()?
    };
    let mut iter = per_item.into_iter();
    let (mut acc, first) = iter.next().ok_or_else(|| LtvError::InvalidArgument("empty batch".into()))?;
    let mut reports = vec![first];
    for (g, r) in iter {
        for (a, gi) in acc.iter_mut().zip(&g) {
            a.data_mut().iter_mut().zip(gi.data()).for_each(|(x, y)| *x += y);
        }
        reports.push(r);
    }
    let inv = 1.0 / reports.len() as f64;
    for a in &mut acc {
        a.data_mut().iter_mut().for_each(|x| *x *= inv);
    }
    Ok((acc, reports))
}

fn epoch_dir(root: &Path, epoch: usize) -> PathBuf {
    root.join(CHECKPOINT_DIR).join(format!("epoch_{epoch:03}"))
}

/// Train on `dataset.train`, validating on `dataset.val` after every epoch.
/// With `out_dir`, writes checkpoints, the best marker, the run log and the
/// per-step loss log there.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    train_observed(dataset, cfg, out_dir, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_observed(
    dataset: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.train.is_empty() || dataset.val.is_empty() {
        return Err(LtvError::InvalidArgument("training needs non-empty train and validation splits".into()));
    }
    let mut model = LtvModel::new(cfg.predictor.clone(), cfg.ramp.clone(), &cfg.solver, cfg.seed)?;
    let mut adam = Adam::new(&model.params, cfg.adam);
    let mut rates = cfg.initial_rates();
    let mut plateau = Plateau::new(cfg.plateau);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut log = RunLog::default();
    let mut losses = LossReport::csv_header();
    losses.push('\n');
    let (mut best_epoch, mut best_psnr) = (0, f64::NEG_INFINITY);
    let mut batch_index = 0;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
    }

    for epoch in 0..cfg.epochs {
        let t = epoch as f64;
        order.shuffle(&mut shuffle_rng);
        let mut epoch_reports = Vec::new();
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&Sample> = chunk.iter().map(|&i| &dataset.train[i]).collect();
            let (mut grads, reports) = batch_gradient(&model, &items, t, &cfg.weights, batch_index, cfg.parallel)?;
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.update(&mut model.params, &grads, &rates)?;
            let mean = LossReport::mean_of(&reports);
            losses.push_str(&mean.csv_row(epoch, step));
            losses.push('\n');
            epoch_reports.extend(reports);
            batch_index += 1;
        }
        model.lambda_epoch = t;
        let val = validate(&model, &dataset.val)?;
        let (tau, sigma, theta) = model.solver_params()?.constrained()?;
        let record = EpochRecord {
            epoch,
            lambda_max: cfg.ramp.lambda_max(t),
            rates,
            train: LossReport::mean_of(&epoch_reports),
            val_psnr: val.psnr_mean(),
            val_ssim: val.ssim_mean(),
            lambda: val.lambda,
            tau,
            sigma,
            theta,
        };
        if record.val_psnr > best_psnr {
            best_psnr = record.val_psnr;
            best_epoch = epoch;
        }
        plateau.observe(record.val_psnr, &mut rates);
        on_epoch(&record);
        log.rows.push(record);
        if let Some(dir) = out_dir {
            model.save(&epoch_dir(dir, epoch))?;
            fs::write(
                dir.join(CHECKPOINT_DIR).join(BEST_MARKER),
                format!("epoch_{best_epoch:03}\nval_psnr={best_psnr}\n"),
            )?;
            fs::write(dir.join(RUNLOG_FILE), log.to_csv())?;
            fs::write(dir.join(LOSSES_FILE), &losses)?;
        }
    }
    Ok(TrainOutcome { model, log, best_epoch, best_psnr })
}

/// Path of the checkpoint named by the best marker under a training run.
pub fn best_checkpoint(run_dir: &Path) -> Result<PathBuf> {
    let marker = fs::read_to_string(run_dir.join(CHECKPOINT_DIR).join(BEST_MARKER))?;
    let name = marker.lines().next().unwrap_or("").trim();
    if name.is_empty() {
        return Err(LtvError::Format("empty best-checkpoint marker".into()));
    }
    Ok(run_dir.join(CHECKPOINT_DIR).join(name))
}
