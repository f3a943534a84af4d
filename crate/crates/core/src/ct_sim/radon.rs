//! Parallel-beam projection, its exact adjoint, and filtered back-projection.
//!
//! Angles are uniform over `[0, π)`. Detector bins have unit (pixel)
//! spacing and are centred on the image centre. A ray at angle `φ` and
//! offset `t` is sampled at unit steps along its length with bilinear
//! interpolation of the image.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{LtvError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub angles: Vec<f64>,
    pub detectors: usize,
    pub spacing: f64,
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    pub fn new(height: usize, width: usize, n_angles: usize, detectors: usize) -> Result<Self> {
        if n_angles == 0 {
            return Err(LtvError::InvalidArgument("need at least one projection angle".into()));
        }
        let diag = ((height * height + width * width) as f64).sqrt();
        if (detectors as f64) < diag.ceil() {
            return Err(LtvError::InvalidArgument(format!(
                "{detectors} detector bins do not cover the {diag:.1}-pixel diagonal"
            )));
        }
        let angles = (0..n_angles).map(|a| PI * a as f64 / n_angles as f64).collect();
        Ok(Geometry { angles, detectors, spacing: 1.0, height, width })
    }

    /// Smallest detector count covering the image diagonal.
    pub fn min_detectors(height: usize, width: usize) -> usize {
        ((height * height + width * width) as f64).sqrt().ceil() as usize
    }

    fn detector_offset(&self, k: usize) -> f64 {
        (k as f64 - (self.detectors as f64 - 1.0) / 2.0) * self.spacing
    }

    fn ray_samples(&self) -> Vec<f64> {
        let half = (((self.height.pow(2) + self.width.pow(2)) as f64).sqrt() / 2.0).ceil() + 1.0;
        let n = 2 * half as usize + 1;
        (0..n).map(|k| k as f64 - half).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    /// A×D line integrals.
    pub values: Tensor,
    pub geometry: Geometry,
}

/// Bilinear stencil: up to four `(flat index, weight)` pairs for a point
/// given in (row, col) pixel coordinates.
fn bilinear(h: usize, w: usize, row: f64, col: f64) -> [(usize, f64); 4] {
    let mut out = [(0, 0.0); 4];
    let (r0, c0) = (row.floor(), col.floor());
    let (fr, fc) = (row - r0, col - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);
    let corners = [
        (r0, c0, (1.0 - fr) * (1.0 - fc)),
        (r0, c0 + 1, (1.0 - fr) * fc),
        (r0 + 1, c0, fr * (1.0 - fc)),
        (r0 + 1, c0 + 1, fr * fc),
    ];
    for (slot, (r, c, wt)) in out.iter_mut().zip(corners) {
        if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
            *slot = (r as usize * w + c as usize, wt);
        }
    }
    out
}

/// Visit every (sinogram index, image index, weight) triple of the system matrix.
fn for_each_weight(geo: &Geometry, mut f: impl FnMut(usize, usize, f64)) {
    let (h, w) = (geo.height, geo.width);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let samples = geo.ray_samples();
    for (a, &phi) in geo.angles.iter().enumerate() {
        let (s, c) = phi.sin_cos();
        for k in 0..geo.detectors {
            let t = geo.detector_offset(k);
            let row_idx = a * geo.detectors + k;
            for &u in &samples {
                let x = t * c - u * s;
                let y = t * s + u * c;
                let (row, col) = (y + cy, x + cx);
                if row <= -1.0 || col <= -1.0 || row >= h as f64 || col >= w as f64 {
                    continue;
                }
                for (idx, wt) in bilinear(h, w, row, col) {
                    if wt != 0.0 {
                        f(row_idx, idx, wt);
                    }
                }
            }
        }
    }
}

/// Line integrals of an H×W image at `n_angles` angles and `detectors` bins.
pub fn radon(image: &Tensor, n_angles: usize, detectors: usize) -> Result<Sinogram> {
    let (h, w) = image.dims2()?;
    let geometry = Geometry::new(h, w, n_angles, detectors)?;
    let mut out = vec![0.0; n_angles * detectors];
    let src = image.data();
    for_each_weight(&geometry, |r, i, wt| out[r] += wt * src[i]);
    Ok(Sinogram { values: Tensor::from_parts(vec![n_angles, detectors], out), geometry })
}

/// Exact transpose of [`radon`] for the same geometry.
pub fn radon_adjoint(sino: &Sinogram) -> Result<Tensor> {
    let geo = &sino.geometry;
    check_sinogram(sino)?;
    let mut out = vec![0.0; geo.height * geo.width];
    let s = sino.values.data();
    for_each_weight(geo, |r, i, wt| out[i] += wt * s[r]);
    Ok(Tensor::from_parts(vec![geo.height, geo.width], out))
}

fn check_sinogram(sino: &Sinogram) -> Result<()> {
    let geo = &sino.geometry;
    if sino.values.shape() != [geo.angles.len(), geo.detectors] {
        return Err(LtvError::shape(
            "sinogram",
            format!("values {:?} do not match geometry {}×{}", sino.values.shape(), geo.angles.len(), geo.detectors),
        ));
    }
    Ok(())
}

/// Ram-Lak filtering of each projection row (frequency domain, zero-padded).
pub fn ramp_filter(sino: &Sinogram) -> Result<Tensor> {
    check_sinogram(sino)?;
    let geo = &sino.geometry;
    let d = geo.detectors;
    let padded = (2 * d).next_power_of_two();
    let tau = geo.spacing;
    // Band-limited spatial kernel, wrapped circularly, transformed once.
    let mut kernel: Vec<Complex<f64>> = (0..padded)
        .map(|k| {
            let n = if k <= padded / 2 { k as isize } else { k as isize - padded as isize };
            let v = if n == 0 {
                1.0 / (4.0 * tau * tau)
            } else if n % 2 != 0 {
                -1.0 / (PI * PI * (n * n) as f64 * tau * tau)
            } else {
                0.0
            };
            Complex::new(v, 0.0)
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(padded);
    let inv = planner.plan_fft_inverse(padded);
    fwd.process(&mut kernel);
    let response: Vec<f64> = kernel.iter().map(|c| c.re).collect();

    let mut out = vec![0.0; sino.values.len()];
    let mut buf = vec![Complex::new(0.0, 0.0); padded];
    for (a, row) in sino.values.data().chunks_exact(d).enumerate() {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, &v) in buf.iter_mut().zip(row) {
            b.re = v;
        }
        fwd.process(&mut buf);
        for (b, &r) in buf.iter_mut().zip(&response) {
            *b *= r;
        }
        inv.process(&mut buf);
        let scale = tau / padded as f64;
        for (o, b) in out[a * d..(a + 1) * d].iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
    }
    Ok(Tensor::from_parts(vec![geo.angles.len(), d], out))
}

/// Filtered back-projection without the final clamp (linear in the sinogram).
pub fn fbp_unclamped(sino: &Sinogram) -> Result<Tensor> {
    let filtered = ramp_filter(sino)?;
    let geo = &sino.geometry;
    let (h, w, d) = (geo.height, geo.width, geo.detectors);
    let trig: Vec<(f64, f64)> = geo.angles.iter().map(|a| a.sin_cos()).collect();
    let center = (d as f64 - 1.0) / 2.0;
    let scale = PI / geo.angles.len() as f64;
    let q = filtered.data();
    let img = Tensor::from_fn2(h, w, |i, j| {
        let x = j as f64 - (w as f64 - 1.0) / 2.0;
        let y = i as f64 - (h as f64 - 1.0) / 2.0;
        let mut acc = 0.0;
        for (a, &(s, c)) in trig.iter().enumerate() {
            let pos = (x * c + y * s) / geo.spacing + center;
            let k0 = pos.floor();
            let f = pos - k0;
            let k0 = k0 as isize;
            let row = &q[a * d..(a + 1) * d];
            if k0 >= 0 && (k0 as usize) < d {
                acc += (1.0 - f) * row[k0 as usize];
            }
            if k0 + 1 >= 0 && ((k0 + 1) as usize) < d {
                acc += f * row[(k0 + 1) as usize];
            }
        }
        acc * scale
    });
    Ok(img)
}

/// Filtered back-projection clamped to `[0, 1]`.
pub fn fbp(sino: &Sinogram) -> Result<Tensor> {
    Ok(fbp_unclamped(sino)?.clamp(0.0, 1.0))
}
