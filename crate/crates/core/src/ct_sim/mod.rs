//! Paired (clean, noisy) data generation: phantoms, parallel-beam
//! projection, reduced-dose noise and filtered back-projection.

pub mod dataset;
pub mod noise;
pub mod phantom;
pub mod radon;

pub use dataset::{Dataset, DatasetConfig, Sample};
pub use noise::{apply_dose_noise, image_domain_noise, sample_poisson, NoiseConfig, NoiseMode};
pub use phantom::{make_phantom, Phantom, Primitive, Shape};
pub use radon::{fbp, fbp_unclamped, radon, radon_adjoint, Geometry, Sinogram};

use crate::error::Result;
use crate::tensor::Tensor;

/// Default number of projection angles.
pub const DEFAULT_ANGLES: usize = 180;

/// Noisy counterpart of `clean`. In sinogram mode: project with `angles`
/// views and the minimal covering detector count, add dose noise, FBP.
pub fn simulate(clean: &Tensor, cfg: &NoiseConfig, angles: usize) -> Result<Tensor> {
    match cfg.mode {
        NoiseMode::Image => image_domain_noise(clean, cfg),
        NoiseMode::Sinogram => {
            let (h, w) = clean.dims2()?;
            let sino = radon(clean, angles, Geometry::min_detectors(h, w))?;
            fbp(&apply_dose_noise(&sino, cfg)?)
        }
    }
}
