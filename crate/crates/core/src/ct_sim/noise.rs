//! Reduced-dose noise: Beer-Lambert photon counting with Poisson statistics
//! in the projection domain, or a mixed Poisson-Gaussian image-domain model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::gamma::ln_gamma;

use super::radon::Sinogram;
use crate::error::{LtvError, Result};
use crate::tensor::Tensor;

/// Target attenuation, in mean free paths, of the most attenuating ray.
pub const MAX_ATTENUATION: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    Sinogram,
    Image,
}

impl NoiseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseMode::Sinogram => "sinogram",
            NoiseMode::Image => "image",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sinogram" => Ok(NoiseMode::Sinogram),
            "image" => Ok(NoiseMode::Image),
            _ => Err(LtvError::Config(format!("unknown noise mode '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    /// Unattenuated photons per ray at full dose.
    pub n0: f64,
    pub dose_fraction: f64,
    pub mode: NoiseMode,
    pub gaussian_sigma: f64,
    pub seed: u64,
    /// Attenuation scale; `None` picks it so the largest line integral
    /// reaches [`MAX_ATTENUATION`].
    pub mu: Option<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            n0: 2700.0,
            dose_fraction: 0.10,
            mode: NoiseMode::Sinogram,
            gaussian_sigma: 0.08,
            seed: 0,
            mu: None,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dose_fraction > 0.0 && self.dose_fraction <= 1.0) {
            return Err(LtvError::InvalidArgument(format!("dose fraction {} not in (0, 1]", self.dose_fraction)));
        }
        if !(self.n0 * self.dose_fraction >= 1.0) {
            return Err(LtvError::InvalidArgument("fewer than one photon per ray at this dose".into()));
        }
        if self.gaussian_sigma < 0.0 {
            return Err(LtvError::InvalidArgument("negative gaussian_sigma".into()));
        }
        Ok(())
    }

    /// Expected photons per unattenuated ray at the configured dose.
    pub fn photons(&self) -> f64 {
        self.n0 * self.dose_fraction
    }
}

/// Poisson sampler: sequential inversion below mean 30, Hörmann's PTRS
/// transformed rejection above. Depends only on the uniform stream.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    if mean < 30.0 {
        let mut p = (-mean).exp();
        let mut cdf = p;
        let u: f64 = rng.random();
        let mut k = 0u64;
        while u > cdf {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
            if p == 0.0 {
                break;
            }
        }
        return k;
    }
    let slam = mean.sqrt();
    let loglam = mean.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -mean + k * loglam - ln_gamma(k + 1.0);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// Replace each line integral `s` by `-ln(c / N) / μ` with
/// `c ~ Poisson(N e^{-μ s})`, `N = n0 · dose_fraction`, zero counts clamped to 1.
pub fn apply_dose_noise(sino: &Sinogram, cfg: &NoiseConfig) -> Result<Sinogram> {
    cfg.validate()?;
    let mu = attenuation_scale(sino, cfg);
    let photons = cfg.photons();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data = sino
        .values
        .data()
        .iter()
        .map(|&s| {
            let expected = photons * (-mu * s).exp();
            let counts = sample_poisson(&mut rng, expected).max(1) as f64;
            -(counts / photons).ln() / mu
        })
        .collect();
    let noisy = Tensor::from_parts(sino.values.shape().to_vec(), data);
    Ok(Sinogram { values: noisy, geometry: sino.geometry.clone() })
}

/// The μ used by [`apply_dose_noise`] for this sinogram.
pub fn attenuation_scale(sino: &Sinogram, cfg: &NoiseConfig) -> f64 {
    cfg.mu.unwrap_or_else(|| {
        let peak = sino.values.max();
        if peak > 0.0 {
            MAX_ATTENUATION / peak
        } else {
            1.0
        }
    })
}

/// Delta-method variance of a noisy line integral: `e^{μs} / (N μ²)`.
pub fn predicted_variance(s: f64, mu: f64, photons: f64) -> f64 {
    (mu * s).exp() / (photons * mu * mu)
}

/// `Poisson(x · N) / N + Normal(0, σ)`, clamped to `[0, 1]`.
pub fn image_domain_noise(image: &Tensor, cfg: &NoiseConfig) -> Result<Tensor> {
    cfg.validate()?;
    let photons = cfg.photons();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gauss = Normal::new(0.0, cfg.gaussian_sigma.max(0.0))
        .map_err(|e| LtvError::InvalidArgument(format!("gaussian_sigma: {e}")))?;
    let data = image.data().iter().map(|&v| {
        let shot = if photons.is_finite() {
            sample_poisson(&mut rng, v.max(0.0) * photons) as f64 / photons
        } else {
            v
        };
        let g = if cfg.gaussian_sigma > 0.0 { gauss.sample(&mut rng) } else { 0.0 };
        (shot + g).clamp(0.0, 1.0)
    });
    Ok(Tensor::from_parts(image.shape().to_vec(), data.collect()))
}
