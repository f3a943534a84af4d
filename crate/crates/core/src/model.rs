//! The full LTV pipeline: predictor weights and solver scalars in one
//! parameter store, with a plain-text config next to the tensors on disk.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{LtvError, Result};
use crate::lambda_model::{map_lambda, ConvPredictor, LambdaMap, LogitPredictor, PredictorConfig, RampSchedule};
use crate::params::{ParamGroup, ParamStore};
use crate::solver::{constrain, unrolled_solve, SolverParams};
use crate::tensor::{Tape, Tensor, Var};

pub const MODEL_CONFIG: &str = "model.txt";
pub const TAU_RAW: &str = "solver.tau_raw";
pub const SIGMA_RAW: &str = "solver.sigma_raw";
pub const THETA_RAW: &str = "solver.theta_raw";

#[derive(Clone, Debug, PartialEq)]
pub struct LtvModel {
    pub predictor: ConvPredictor,
    pub ramp: RampSchedule,
    pub sigma_data: f64,
    pub iterations: usize,
    /// Epoch whose `λ_max(t)` is used at inference.
    pub lambda_epoch: f64,
    pub params: ParamStore,
}

/// Everything a training step needs from one forward pass.
pub struct ForwardPass<'t> {
    /// Bound parameters, in store order.
    pub weights: Vec<Var<'t>>,
    pub lambda: LambdaMap<'t>,
    pub x_hat: Var<'t>,
}

impl LtvModel {
    pub fn new(predictor: PredictorConfig, ramp: RampSchedule, solver: &SolverParams, seed: u64) -> Result<Self> {
        ramp.validate()?;
        solver.validate()?;
        let predictor = ConvPredictor::new(predictor)?;
        let mut params = ParamStore::new();
        for (name, value) in predictor.init_weights(seed) {
            params.push(name, value, ParamGroup::Predictor);
        }
        params.push(TAU_RAW, Tensor::scalar(solver.tau_raw), ParamGroup::Solver);
        params.push(SIGMA_RAW, Tensor::scalar(solver.sigma_raw), ParamGroup::Solver);
        params.push(THETA_RAW, Tensor::scalar(solver.theta_raw), ParamGroup::Solver);
        Ok(LtvModel { predictor, ramp, sigma_data: solver.sigma_data, iterations: solver.iterations, lambda_epoch: 0.0, params })
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        self.params
            .get(name)
            .map(|t| t.item())
            .ok_or_else(|| LtvError::Format(format!("checkpoint has no '{name}'")))
    }

    pub fn solver_params(&self) -> Result<SolverParams> {
        Ok(SolverParams {
            tau_raw: self.scalar(TAU_RAW)?,
            sigma_raw: self.scalar(SIGMA_RAW)?,
            theta_raw: self.scalar(THETA_RAW)?,
            sigma_data: self.sigma_data,
            iterations: self.iterations,
        })
    }

    /// Predict λ for `y` at ramp position `epoch` and run the unrolled solver.
    pub fn forward<'t>(&self, tape: &'t Tape, y: &Tensor, epoch: f64, trainable: bool) -> Result<ForwardPass<'t>> {
        let weights = self.params.bind(tape, trainable);
        let n_pred = weights.len() - 3;
        let yv = tape.constant(y.clone());
        let z = self.predictor.logits(&yv, &weights[..n_pred])?;
        let lambda = map_lambda(&z, epoch, &self.ramp)?;
        let steps = constrain(&weights[n_pred], &weights[n_pred + 1], &weights[n_pred + 2])?;
        let x_hat = unrolled_solve(&yv, &lambda.values, &steps, 1.0 / self.sigma_data, self.iterations)?;
        Ok(ForwardPass { weights, lambda, x_hat })
    }

    /// Denoised image and λ-map.
    pub fn denoise(&self, y: &Tensor) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let f = self.forward(&tape, y, self.lambda_epoch, false)?;
        Ok((f.x_hat.value().clone(), f.lambda.values.value().clone()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.params.save(dir)?;
        let p = &self.predictor.config;
        let r = &self.ramp;
        let mut s = String::new();
        let _ = writeln!(s, "depth={}", p.depth);
        let _ = writeln!(s, "channels={}", p.channels);
        let _ = writeln!(s, "kernel={}", p.kernel);
        let _ = writeln!(s, "half_res={}", p.half_res);
        let _ = writeln!(s, "lambda_min={}", r.lambda_min);
        let _ = writeln!(s, "lambda_max_start={}", r.lambda_max_start);
        let _ = writeln!(s, "lambda_max_end={}", r.lambda_max_end);
        let _ = writeln!(s, "ramp_epochs={}", r.ramp_epochs);
        let _ = writeln!(s, "epsilon_clip={}", r.epsilon_clip);
        let _ = writeln!(s, "sigma_data={}", self.sigma_data);
        let _ = writeln!(s, "iterations={}", self.iterations);
        let _ = writeln!(s, "lambda_epoch={}", self.lambda_epoch);
        fs::write(dir.join(MODEL_CONFIG), s)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MODEL_CONFIG))?;
        let mut pred = PredictorConfig::default();
        let mut ramp = RampSchedule::default();
        let mut sigma_data = 1.0;
        let mut iterations = 20;
        let mut lambda_epoch = 0.0;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| LtvError::Format(format!("{MODEL_CONFIG}: bad line '{line}'")))?;
            let bad = || LtvError::Format(format!("{MODEL_CONFIG}: bad value for {k}: '{v}'"));
            match k {
                "depth" => pred.depth = v.parse().map_err(|_| bad())?,
                "channels" => pred.channels = v.parse().map_err(|_| bad())?,
                "kernel" => pred.kernel = v.parse().map_err(|_| bad())?,
                "half_res" => pred.half_res = v.parse().map_err(|_| bad())?,
                "lambda_min" => ramp.lambda_min = v.parse().map_err(|_| bad())?,
                "lambda_max_start" => ramp.lambda_max_start = v.parse().map_err(|_| bad())?,
                "lambda_max_end" => ramp.lambda_max_end = v.parse().map_err(|_| bad())?,
                "ramp_epochs" => ramp.ramp_epochs = v.parse().map_err(|_| bad())?,
                "epsilon_clip" => ramp.epsilon_clip = v.parse().map_err(|_| bad())?,
                "sigma_data" => sigma_data = v.parse().map_err(|_| bad())?,
                "iterations" => iterations = v.parse().map_err(|_| bad())?,
                "lambda_epoch" => lambda_epoch = v.parse().map_err(|_| bad())?,
                _ => return Err(LtvError::Format(format!("{MODEL_CONFIG}: unknown key '{k}'"))),
            }
        }
        ramp.validate()?;
        let predictor = ConvPredictor::new(pred)?;
        let params = ParamStore::load(dir)?;
        let expected = predictor.init_weights(0);
        let n_pred = params.len().saturating_sub(3);
        let matches = n_pred == expected.len()
            && expected.iter().enumerate().all(|(i, (name, t))| {
                let p = params.param(i);
                p.name == *name && p.value.shape() == t.shape() && p.group == ParamGroup::Predictor
            });
        if !matches {
            return Err(LtvError::Format("checkpoint tensors do not match the predictor config".into()));
        }
        let model = LtvModel { predictor, ramp, sigma_data, iterations, lambda_epoch, params };
        model.solver_params()?.validate()?;
        Ok(model)
    }
}
