//! Spatially adaptive λ-map: a convolutional logit predictor followed by the
//! clipped affine rescaling into `[λ_min, λ_max(t)]`, where `λ_max(t)` follows
//! a half-cosine ramp over the first training epochs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LtvError, Result};
use crate::tensor::{Tensor, Var};

/// Upper-bound ramp for the λ-map.
#[derive(Clone, Debug, PartialEq)]
pub struct RampSchedule {
    pub lambda_min: f64,
    pub lambda_max_start: f64,
    pub lambda_max_end: f64,
    pub ramp_epochs: f64,
    /// Clip margin applied to the normalized logits.
    pub epsilon_clip: f64,
}

impl Default for RampSchedule {
    fn default() -> Self {
        RampSchedule {
            lambda_min: 1e-3,
            lambda_max_start: 0.40,
            lambda_max_end: 1.50,
            ramp_epochs: 15.0,
            epsilon_clip: 1e-3,
        }
    }
}

impl RampSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_min > 0.0
            && self.lambda_max_start > self.lambda_min
            && self.lambda_max_end >= self.lambda_max_start
            && self.ramp_epochs >= 0.0
            && self.epsilon_clip > 0.0
            && self.epsilon_clip < 0.5;
        if ok {
            Ok(())
        } else {
            Err(LtvError::InvalidArgument(format!("inconsistent ramp schedule {self:?}")))
        }
    }

    /// `λ_max(t)`: half-cosine easing from start to end over `ramp_epochs`.
    pub fn lambda_max(&self, epoch: f64) -> f64 {
        let t = epoch.max(0.0);
        if t >= self.ramp_epochs {
            return self.lambda_max_end;
        }
        let ease = (1.0 - (PI * t / self.ramp_epochs).cos()) / 2.0;
        self.lambda_max_start + (self.lambda_max_end - self.lambda_max_start) * ease
    }
}

/// A λ-map together with the bounds it was produced under.
#[derive(Clone, Debug)]
pub struct LambdaMap<'t> {
    pub values: Var<'t>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// `s = clip((z + 1) / 2, ε, 1 − ε)`, `λ = λ_min + s (λ_max(t) − λ_min)`.
pub fn map_lambda<'t>(z: &Var<'t>, epoch: f64, sched: &RampSchedule) -> Result<LambdaMap<'t>> {
    let lambda_max = sched.lambda_max(epoch);
    let eps = sched.epsilon_clip;
    let s = z.affine(0.5, 0.5)?.clamp(eps, 1.0 - eps)?;
    let values = s.affine(lambda_max - sched.lambda_min, sched.lambda_min)?;
    Ok(LambdaMap { values, lambda_min: sched.lambda_min, lambda_max })
}

/// Interface for anything that maps a noisy image to a logit map in `[-1, 1]`.
pub trait LogitPredictor {
    /// Named initial weights, in the order `logits` expects them.
    fn init_weights(&self, seed: u64) -> Vec<(String, Tensor)>;

    fn logits<'t>(&self, y: &Var<'t>, weights: &[Var<'t>]) -> Result<Var<'t>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorConfig {
    pub depth: usize,
    pub channels: usize,
    pub kernel: usize,
    /// Adds a half-resolution branch fused with a learned weight.
    pub half_res: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig { depth: 4, channels: 16, kernel: 3, half_res: false }
    }
}

/// Plain stack of same-padded convolutions with `tanh` in between and a
/// `tanh` head.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvPredictor {
    pub config: PredictorConfig,
}

impl ConvPredictor {
    pub fn new(config: PredictorConfig) -> Result<Self> {
        if config.depth == 0 || config.channels == 0 {
            return Err(LtvError::InvalidArgument("predictor needs depth ≥ 1 and channels ≥ 1".into()));
        }
        if config.kernel % 2 == 0 {
            return Err(LtvError::InvalidArgument(format!("kernel size {} must be odd", config.kernel)));
        }
        Ok(ConvPredictor { config })
    }

    fn layer_channels(&self, layer: usize) -> (usize, usize) {
        let c = self.config.channels;
        let cin = if layer == 0 { 1 } else { c };
        let cout = if layer + 1 == self.config.depth { 1 } else { c };
        (cin, cout)
    }

    fn expected_count(&self) -> usize {
        let per_branch = 2 * self.config.depth;
        if self.config.half_res {
            2 * per_branch + 1
        } else {
            per_branch
        }
    }

    fn branch<'t>(&self, input: &Var<'t>, weights: &[Var<'t>]) -> Result<Var<'t>> {
        let (h, w) = input.value().dims2()?;
        let mut a = input.reshape(&[1, h, w])?;
        for layer in 0..self.config.depth {
            a = a.conv2d(&weights[2 * layer], &weights[2 * layer + 1])?;
            if layer + 1 < self.config.depth {
                a = a.tanh()?;
            }
        }
        a.reshape(&[h, w])
    }
}

impl LogitPredictor for ConvPredictor {
    fn init_weights(&self, seed: u64) -> Vec<(String, Tensor)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.config.kernel;
        let mut out = Vec::new();
        let branches: &[&str] = if self.config.half_res { &["full", "half"] } else { &["full"] };
        for branch in branches {
            for layer in 0..self.config.depth {
                let (cin, cout) = self.layer_channels(layer);
                let bound = 1.0 / ((cin * k * k) as f64).sqrt();
                let bound = if layer + 1 == self.config.depth { 0.1 * bound } else { bound };
                let n = cout * cin * k * k;
                let w = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                out.push((format!("pred.{branch}.conv{layer}.weight"), Tensor::from_parts(vec![cout, cin, k, k], w)));
                out.push((format!("pred.{branch}.conv{layer}.bias"), Tensor::zeros(&[cout])));
            }
        }
        if self.config.half_res {
            out.push(("pred.fuse_raw".into(), Tensor::scalar(0.0)));
        }
        out
    }

    fn logits<'t>(&self, y: &Var<'t>, weights: &[Var<'t>]) -> Result<Var<'t>> {
        if weights.len() != self.expected_count() {
            return Err(LtvError::shape(
                "predict_logits",
                format!("expected {} weight tensors, got {}", self.expected_count(), weights.len()),
            ));
        }
        let k = self.config.kernel;
        let branches = if self.config.half_res { 2 } else { 1 };
        for (idx, pair) in weights.chunks_exact(2).take(branches * self.config.depth).enumerate() {
            let layer = idx % self.config.depth;
            let (cin, cout) = self.layer_channels(layer);
            if pair[0].shape() != [cout, cin, k, k] || pair[1].shape() != [cout] {
                return Err(LtvError::shape(
                    "predict_logits",
                    format!("layer {layer}: weight {:?}, bias {:?}", pair[0].shape(), pair[1].shape()),
                ));
            }
        }
        if self.config.half_res && weights[2 * self.config.depth * 2].value().len() != 1 {
            return Err(LtvError::shape("predict_logits", "fusion weight must be a scalar"));
        }
        let per_branch = 2 * self.config.depth;
        let full = self.branch(y, &weights[..per_branch])?;
        let fused = if self.config.half_res {
            let half = self.branch(&y.avg_pool2()?, &weights[per_branch..2 * per_branch])?.upsample2()?;
            let mix = weights[2 * per_branch].sigmoid()?;
            full.add(&mix.mul(&half.sub(&full)?)?)?
        } else {
            full
        };
        fused.tanh()
    }
}
