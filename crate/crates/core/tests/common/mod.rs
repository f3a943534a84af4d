//! Helpers shared by the integration tests.
#![allow(dead_code)]

use ltv::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Tape gradient of `f` at `x` against central differences on every entry.
///
/// Returns `max_i |g_i - fd_i| / max(max_i |fd_i|, 1e-12)`.
pub fn gradcheck(x: &Tensor, f: impl for<'t> Fn(&Var<'t>) -> Result<Var<'t>>) -> f64 {
    let value = |t: &Tensor| -> f64 {
        let tape = Tape::new();
        let v = tape.constant(t.clone());
        f(&v).unwrap().item()
    };
    let tape = Tape::new();
    let xv = tape.param(x.clone());
    let loss = f(&xv).unwrap();
    let analytic = tape.backward(&loss).unwrap().get_or_zeros(&xv);
    let mut fd = vec![0.0; x.len()];
    for (i, slot) in fd.iter_mut().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= FD_STEP;
        *slot = (value(&plus) - value(&minus)) / (2.0 * FD_STEP);
    }
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    analytic.data().iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

/// Forward differences with a zero last row/column; `[2, H, W]`.
pub fn oracle_grad(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut g = vec![0.0; 2 * h * w];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            if i + 1 < h {
                g[k] = x[k + w] - x[k];
            }
            if j + 1 < w {
                g[h * w + k] = x[k + 1] - x[k];
            }
        }
    }
    g
}

/// Transpose of [`oracle_grad`].
pub fn oracle_grad_t(p: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            if i + 1 < h {
                out[k + w] += p[k];
                out[k] -= p[k];
            }
            if j + 1 < w {
                out[k + 1] += p[h * w + k];
                out[k] -= p[h * w + k];
            }
        }
    }
    out
}

/// Minimizer of `½‖x − y‖² + λ Σ H_ε(|∇x|)` (Huber `H_ε`) by Nesterov's
/// method for strongly convex objectives with step `1/L`.
pub fn huber_tv_oracle(y: &Tensor, lambda: f64, eps: f64, steps: usize) -> Tensor {
    let (h, w) = (y.shape()[0], y.shape()[1]);
    let n = h * w;
    let l = 1.0 + lambda * 8.0 / eps;
    let kappa_root = l.sqrt();
    let beta = (kappa_root - 1.0) / (kappa_root + 1.0);
    let yd = y.data();
    let mut x = yd.to_vec();
    let mut x_prev = x.clone();
    let mut z = x.clone();
    for _ in 0..steps {
        let g = oracle_grad(&z, h, w);
        let mut psi = vec![0.0; 2 * n];
        for k in 0..n {
            let m = (g[k] * g[k] + g[n + k] * g[n + k]).sqrt().max(eps);
            psi[k] = g[k] / m;
            psi[n + k] = g[n + k] / m;
        }
        let tv_grad = oracle_grad_t(&psi, h, w);
        for k in 0..n {
            let grad = (z[k] - yd[k]) + lambda * tv_grad[k];
            x_prev[k] = x[k];
            x[k] = z[k] - grad / l;
        }
        for k in 0..n {
            z[k] = x[k] + beta * (x[k] - x_prev[k]);
        }
    }
    Tensor::new(vec![h, w], x).unwrap()
}

pub fn rms(a: &Tensor, b: &Tensor) -> f64 {
    let n = a.len() as f64;
    (a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n).sqrt()
}
