//! Quick invariant checks runnable from the command line.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{ParamGroup, ParamStore};
use crate::solver::{classical_tv, unrolled_solve_observed, StepSizes};
use crate::tensor::io::{decode_ltvt, decode_pgm, encode_ltvt, encode_pgm16};
use crate::tensor::{div2d, grad2d, pixel_l2_norm, Tape, Tensor};
use crate::trainer::{Adam, AdamConfig, LearningRates};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    Tensor::from_fn2(h, w, |_, _| rng.random::<f64>())
}

pub fn run(seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_image(&mut rng, 12, 9);
    let p = Tensor::new(vec![2, 12, 9], (0..216).map(|_| rng.random::<f64>() - 0.5).collect()).expect("shape");
    let checks: Vec<(&'static str, Result<(bool, String)>)> = vec![
        ("adjoint", adjoint(&x, &p)),
        ("lambda_zero_identity", lambda_zero(&x)),
        ("dual_feasibility", dual_feasible(&x)),
        ("pgm_round_trip", pgm_round_trip(&x)),
        ("ltvt_round_trip", ltvt_round_trip(&p)),
        ("adam_first_step", adam_first_step()),
        ("tape_gradient", tape_gradient(&x)),
    ];
    let checks = checks
        .into_iter()
        .map(|(name, r)| match r {
            Ok((passed, detail)) => Check { name, passed, detail },
            Err(e) => Check { name, passed: false, detail: e.to_string() },
        })
        .collect();
    Report { checks }
}

fn adjoint(x: &Tensor, p: &Tensor) -> Result<(bool, String)> {
    let lhs = grad2d(x)?.dot(p);
    let rhs = -x.dot(&div2d(p)?);
    let rel = (lhs - rhs).abs() / lhs.abs().max(1e-12);
    Ok((rel < 1e-12, format!("<grad x,p> = {lhs:.12}, -<x,div p> = {rhs:.12}")))
}

fn lambda_zero(y: &Tensor) -> Result<(bool, String)> {
    let x = classical_tv(y, 0.0, 25)?;
    Ok((x == *y, "25 iterations at λ = 0".into()))
}

fn dual_feasible(y: &Tensor) -> Result<(bool, String)> {
    let tape = Tape::new();
    let yv = tape.constant(y.clone());
    let lam = tape.constant(Tensor::from_fn2(12, 9, |i, j| 0.05 + 0.01 * ((i + j) % 5) as f64));
    let mut worst = f64::NEG_INFINITY;
    unrolled_solve_observed(&yv, &lam, &StepSizes::classical(&tape), 1.0, 30, |_, s| {
        let norms = pixel_l2_norm(s.p.value()).expect("dual shape");
        for (n, l) in norms.data().iter().zip(lam.value().data()) {
            worst = worst.max(n - l);
        }
    })?;
    Ok((worst <= 1e-12, format!("max(|p| - λ) = {worst:.3e}")))
}

fn pgm_round_trip(x: &Tensor) -> Result<(bool, String)> {
    let q = x.map(|v| (v * 65535.0).round() / 65535.0);
    let back = decode_pgm(&encode_pgm16(&q)?)?;
    Ok((back == q, "16-bit quantized image".into()))
}

fn ltvt_round_trip(p: &Tensor) -> Result<(bool, String)> {
    let back = decode_ltvt(&encode_ltvt(p)?)?;
    Ok((back == *p, format!("shape {:?}", p.shape())))
}

fn adam_first_step() -> Result<(bool, String)> {
    let mut s = ParamStore::new();
    s.push("x", Tensor::scalar(1.0), ParamGroup::Predictor);
    let mut adam = Adam::new(&s, AdamConfig::default());
    adam.update(&mut s, &[Tensor::scalar(-4.0)], &LearningRates { predictor: 0.1, solver: 0.0 })?;
    let got = s.get("x").map_or(f64::NAN, Tensor::item);
    let want = 1.0 + 0.1 * 4.0 / (4.0 + 1e-8);
    Ok(((got - want).abs() < 1e-15, format!("x = {got}")))
}

/// Central differences on Σ w·|∇x|_ε against the tape gradient.
fn tape_gradient(x: &Tensor) -> Result<(bool, String)> {
    let f = |x: &Tensor| -> Result<(f64, Tensor)> {
        let tape = Tape::new();
        let xv = tape.param(x.clone());
        let loss = xv.grad2d()?.pixel_norm_smooth(1e-3)?.mul(&xv.square()?)?.sum()?;
        let g = tape.backward(&loss)?;
        Ok((loss.item(), g.get_or_zeros(&xv)))
    };
    let (_, grad) = f(x)?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for idx in [0, 7, 20, 53, 107] {
        let mut plus = x.clone();
        plus.data_mut()[idx] += h;
        let mut minus = x.clone();
        minus.data_mut()[idx] -= h;
        let fd = (f(&plus)?.0 - f(&minus)?.0) / (2.0 * h);
        let a = grad.data()[idx];
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-8));
    }
    Ok((worst < 1e-5, format!("max relative error {worst:.2e}")))
}
