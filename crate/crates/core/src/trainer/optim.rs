//! Adam with per-group learning rates, global-norm clipping and
//! plateau-triggered decay.

use crate::error::{LtvError, Result};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Tensor;

/// Learning rate per parameter group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub predictor: f64,
    pub solver: f64,
}

impl LearningRates {
    pub fn for_group(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Predictor => self.predictor,
            ParamGroup::Solver => self.solver,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        LearningRates { predictor: self.predictor * factor, solver: self.solver * factor }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Adam { config, m: zeros.clone(), v: zeros, step: 0 }
    }

    /// One bias-corrected Adam update of every parameter.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor], lrs: &LearningRates) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(LtvError::InvalidArgument(format!(
                "{} gradients for {} parameters ({} moment slots)",
                grads.len(),
                params.len(),
                self.m.len()
            )));
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = &grads[i];
            if g.shape() != p.value.shape() {
                return Err(LtvError::shape("adam", format!("{}: gradient {:?} vs {:?}", p.name, g.shape(), p.value.shape())));
            }
            let lr = lrs.for_group(p.group);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}

/// Scale all gradients by `clip_norm / ‖g‖` when the global norm exceeds
/// `clip_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], clip_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > clip_norm {
        let s = clip_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    /// Minimum absolute gain that counts as an improvement.
    pub threshold: f64,
    pub cooldown: usize,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig { factor: 0.5, patience: 3, threshold: 1e-4, cooldown: 1 }
    }
}

/// Reduce-on-plateau for a metric that should increase.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub config: PlateauConfig,
    pub best: f64,
    pub bad_epochs: usize,
    pub cooldown_left: usize,
}

impl Plateau {
    pub fn new(config: PlateauConfig) -> Self {
        Plateau { config, best: f64::NEG_INFINITY, bad_epochs: 0, cooldown_left: 0 }
    }

    /// Feed one epoch's metric; returns true when the rates were decayed.
    pub fn observe(&mut self, metric: f64, lrs: &mut LearningRates) -> bool {
        if metric > self.best + self.config.threshold {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.cooldown_left > 0 {
            self.cooldown_left -= 1;
            self.bad_epochs = 0;
        }
        if self.bad_epochs >= self.config.patience {
            *lrs = lrs.scaled(self.config.factor);
            self.cooldown_left = self.config.cooldown;
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}

/// Rates after replaying a whole metric history from `initial`.
pub fn plateau_decay(history: &[f64], config: PlateauConfig, initial: LearningRates) -> LearningRates {
    let mut lrs = initial;
    let mut p = Plateau::new(config);
    for &m in history {
        p.observe(m, &mut lrs);
    }
    lrs
}
