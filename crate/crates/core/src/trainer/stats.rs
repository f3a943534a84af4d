//! λ-map summary statistics.

use crate::error::{LtvError, Result};
use crate::tensor::{grad2d, pixel_l2_norm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaStats {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    /// Pearson correlation between λ and |∇x̂|, pooled over all pixels.
    pub r: f64,
    /// True when either side has zero variance and `r` is reported as 0.
    pub degenerate: bool,
}

pub fn pearson(a: &[f64], b: &[f64]) -> (f64, bool) {
    if is_constant(a) || is_constant(b) {
        return (0.0, true);
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return (0.0, true);
    }
    ((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0), false)
}

/// Statistics over a batch of λ-maps and their reconstructions.
pub fn lambda_stats(lambdas: &[Tensor], x_hats: &[Tensor]) -> Result<LambdaStats> {
    if lambdas.is_empty() || lambdas.len() != x_hats.len() {
        return Err(LtvError::InvalidArgument(format!("{} λ-maps for {} reconstructions", lambdas.len(), x_hats.len())));
    }
    let mut lam = Vec::new();
    let mut mag = Vec::new();
    for (l, x) in lambdas.iter().zip(x_hats) {
        if l.shape() != x.shape() {
            return Err(LtvError::shape("lambda_stats", format!("{:?} vs {:?}", l.shape(), x.shape())));
        }
        lam.extend_from_slice(l.data());
        mag.extend_from_slice(pixel_l2_norm(&grad2d(x)?)?.data());
    }
    Ok(summarize(&lam, &mag))
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

pub(crate) fn summarize(lam: &[f64], mag: &[f64]) -> LambdaStats {
    let n = lam.len() as f64;
    let mean = lam.iter().sum::<f64>() / n;
    let std = if is_constant(lam) { 0.0 } else { (lam.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt() };
    let mut sorted = lam.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 { (sorted[mid - 1] + sorted[mid]) / 2.0 } else { sorted[mid] };
    let (r, degenerate) = pearson(lam, mag);
    LambdaStats { mean, median, std, r, degenerate }
}
