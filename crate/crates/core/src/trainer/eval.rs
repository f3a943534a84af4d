//! Method comparison tables and the regularizer ablation harness.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::{train, validate, LambdaStats, TrainConfig};
use crate::ct_sim::{Dataset, Sample};
use crate::error::{LtvError, Result};
use crate::model::LtvModel;
use crate::objective::{psnr, ssim_value};
use crate::solver::classical_tv;

pub const TABLE_HEADER: &str = "method,psnr_mean,psnr_std,ssim_mean,ssim_std";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn row(&self, method: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{TABLE_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.method, r.psnr_mean, r.psnr_std, r.ssim_mean, r.ssim_std);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(TABLE_HEADER) {
            return Err(LtvError::Format("metrics CSV header mismatch".into()));
        }
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| LtvError::Format(format!("bad metrics row '{line}'")))
            };
            if f.len() != 5 {
                return Err(LtvError::Format(format!("bad metrics row '{line}'")));
            }
            rows.push(MetricsRow { method: f[0].to_string(), psnr_mean: num(1)?, psnr_std: num(2)?, ssim_mean: num(3)?, ssim_std: num(4)? });
        }
        Ok(MetricsTable { rows })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub lambda_grid: Vec<f64>,
    pub tv_iterations: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        // Ten log-spaced values from 0.01 to 1.
        let lambda_grid = (0..10).map(|k| 0.01 * 100f64.powf(k as f64 / 9.0)).collect();
        EvalConfig { lambda_grid, tv_iterations: 100 }
    }
}

/// Per-sample scores of one method.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodScores {
    pub method: String,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

impl MethodScores {
    fn row(&self, mask: &[bool]) -> MetricsRow {
        let pick = |v: &[f64]| -> Vec<f64> { v.iter().zip(mask).filter(|(_, &m)| m).map(|(x, _)| *x).collect() };
        let (psnr_mean, psnr_std) = mean_std(&pick(&self.psnr));
        let (ssim_mean, ssim_std) = mean_std(&pick(&self.ssim));
        MetricsRow { method: self.method.clone(), psnr_mean, psnr_std, ssim_mean, ssim_std }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// `noisy`, one `tv_lambda=…` row per grid value, `tv_best`, then `ltv`
    /// when a model was given.
    pub scores: Vec<MethodScores>,
    /// Grid λ with the highest mean PSNR over all samples.
    pub best_lambda: f64,
    pub textured: Vec<bool>,
    pub ltv_lambda: Option<LambdaStats>,
}

impl Evaluation {
    pub fn table(&self) -> MetricsTable {
        self.table_where(&vec![true; self.textured.len()])
    }

    /// Table restricted to textured phantoms. `tv_best` keeps the λ chosen
    /// on the full set.
    pub fn textured_table(&self) -> MetricsTable {
        self.table_where(&self.textured)
    }

    pub fn table_where(&self, mask: &[bool]) -> MetricsTable {
        MetricsTable { rows: self.scores.iter().map(|s| s.row(mask)).collect() }
    }
}

pub fn grid_method_name(lambda: f64) -> String {
    format!("tv_lambda={lambda:.4}")
}

fn scores_for(samples: &[Sample], f: impl Fn(&Sample) -> Result<crate::tensor::Tensor> + Sync) -> Result<(Vec<f64>, Vec<f64>)> {
    let pairs: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| {
            let x = f(s)?;
            Ok((psnr(&x, &s.clean)?, ssim_value(&x, &s.clean)?))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

/// Score the noisy input, classical TV over the λ grid and, if given, the
/// frozen LTV model on `samples`.
pub fn evaluate(model: Option<&LtvModel>, samples: &[Sample], cfg: &EvalConfig) -> Result<Evaluation> {
    if samples.is_empty() || cfg.lambda_grid.is_empty() {
        return Err(LtvError::InvalidArgument("evaluation needs samples and a non-empty λ grid".into()));
    }
    let mut scores = Vec::new();
    let (p, s) = scores_for(samples, |x| Ok(x.noisy.clone()))?;
    scores.push(MethodScores { method: "noisy".into(), psnr: p, ssim: s });
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (k, &lam) in cfg.lambda_grid.iter().enumerate() {
        let (p, s) = scores_for(samples, |x| classical_tv(&x.noisy, lam, cfg.tv_iterations))?;
        let m = mean_std(&p).0;
        if m > best.0 {
            best = (m, k);
        }
        scores.push(MethodScores { method: grid_method_name(lam), psnr: p, ssim: s });
    }
    let best_lambda = cfg.lambda_grid[best.1];
    let mut tv_best = scores[1 + best.1].clone();
    tv_best.method = "tv_best".into();
    scores.push(tv_best);
    let mut ltv_lambda = None;
    if let Some(m) = model {
        let v = validate(m, samples)?;
        ltv_lambda = Some(v.lambda);
        scores.push(MethodScores { method: "ltv".into(), psnr: v.psnr, ssim: v.ssim });
    }
    Ok(Evaluation { scores, best_lambda, textured: samples.iter().map(|s| s.textured).collect(), ltv_lambda })
}

/// One training arm of an ablation study.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationSpec {
    pub name: String,
    pub zero_tv_lambda: bool,
    pub zero_ent: bool,
}

impl AblationSpec {
    pub fn new(name: &str, zero_tv_lambda: bool, zero_ent: bool) -> Self {
        AblationSpec { name: name.into(), zero_tv_lambda, zero_ent }
    }

    /// Baseline, a null arm identical to it, and the requested removals.
    pub fn standard(tv_lambda: bool, ent: bool) -> Vec<AblationSpec> {
        let mut arms = vec![AblationSpec::new("baseline", false, false), AblationSpec::new("null", false, false)];
        if tv_lambda {
            arms.push(AblationSpec::new("no_tv_lambda", true, false));
        }
        if ent {
            arms.push(AblationSpec::new("no_ent", false, true));
        }
        if tv_lambda && ent {
            arms.push(AblationSpec::new("no_tv_lambda_no_ent", true, true));
        }
        arms
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        if self.zero_tv_lambda {
            cfg.weights.w_tv_lambda = 0.0;
        }
        if self.zero_ent {
            cfg.weights.w_ent = 0.0;
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub arm: String,
    pub w_tv_lambda: f64,
    pub w_ent: f64,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    pub lambda_std: f64,
    pub d_psnr: f64,
    pub d_ssim: f64,
    pub d_lambda_std: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

pub const ABLATION_HEADER: &str = "arm,w_tv_lambda,w_ent,psnr_mean,ssim_mean,lambda_std,d_psnr,d_ssim,d_lambda_std";

impl AblationReport {
    pub fn row(&self, arm: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.arm == arm)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{ABLATION_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.arm, r.w_tv_lambda, r.w_ent, r.psnr_mean, r.ssim_mean, r.lambda_std, r.d_psnr, r.d_ssim, r.d_lambda_std
            );
        }
        s
    }
}

/// Retrain once per arm under the same seed and compare LTV validation
/// metrics against the first arm. With `out_dir`, each arm trains into its
/// own subdirectory and echoes its config there.
pub fn ablate(dataset: &Dataset, base: &TrainConfig, arms: &[AblationSpec], out_dir: Option<&Path>) -> Result<AblationReport> {
    if arms.is_empty() {
        return Err(LtvError::InvalidArgument("no ablation arms".into()));
    }
    let mut rows: Vec<AblationRow> = Vec::new();
    for arm in arms {
        let cfg = arm.apply(base);
        let dir = out_dir.map(|d| d.join(&arm.name));
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
            fs::write(d.join("config.txt"), cfg.echo())?;
        }
        let outcome = train(dataset, &cfg, dir.as_deref())?;
        let v = validate(&outcome.model, &dataset.val)?;
        let (psnr_mean, ssim_mean, lambda_std) = (v.psnr_mean(), v.ssim_mean(), v.lambda.std);
        let (d_psnr, d_ssim, d_lambda_std) = match rows.first() {
            Some(b) => (psnr_mean - b.psnr_mean, ssim_mean - b.ssim_mean, lambda_std - b.lambda_std),
            None => (0.0, 0.0, 0.0),
        };
        rows.push(AblationRow {
            arm: arm.name.clone(),
            w_tv_lambda: cfg.weights.w_tv_lambda,
            w_ent: cfg.weights.w_ent,
            psnr_mean,
            ssim_mean,
            lambda_std,
            d_psnr,
            d_ssim,
            d_lambda_std,
        });
    }
    Ok(AblationReport { rows })
}
