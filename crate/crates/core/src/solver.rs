//! Unrolled primal-dual total variation denoiser with a per-pixel
//! regularization radius.
//!
//! Each iteration runs
//!
//! ```text
//! p  <- Proj_{|.| <= lambda}(p + sigma * grad(x_bar))
//! x' <- (x + tau * div(p) + tau * w * y) / (1 + tau * w)
//! x_bar <- x' + theta * (x' - x)
//! ```
//!
//! starting from `x = x_bar = y`, `p = 0`. The primal update is evaluated in
//! the algebraically equivalent form `x + tau * (div(p) + w * (y - x)) / (1 + tau * w)`
//! so that `x = y, p = 0` is a fixed point in floating point as well.

use crate::error::{LtvError, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const STEP_MIN: f64 = 1e-4;
pub const STEP_MAX: f64 = 0.5;

/// Step sizes of the textbook baseline.
pub const CLASSICAL_TAU: f64 = 0.25;
pub const CLASSICAL_SIGMA: f64 = 0.25;
pub const CLASSICAL_THETA: f64 = 1.0;

/// Raw learnable solver scalars plus the fixed fidelity scale.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverParams {
    pub tau_raw: f64,
    pub sigma_raw: f64,
    pub theta_raw: f64,
    /// Data noise scale; the fidelity weight is `1 / sigma_data`.
    pub sigma_data: f64,
    pub iterations: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        // τ = σ_d = 0.25 and θ = 0.9 after the constraint maps.
        SolverParams {
            tau_raw: inverse_softplus(CLASSICAL_TAU),
            sigma_raw: inverse_softplus(CLASSICAL_SIGMA),
            theta_raw: inverse_softplus(9.0),
            sigma_data: 1.0,
            iterations: 20,
        }
    }
}

impl SolverParams {
    pub fn w_data(&self) -> f64 {
        1.0 / self.sigma_data
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(LtvError::InvalidArgument("solver needs at least one iteration".into()));
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return Err(LtvError::InvalidArgument(format!("sigma_data must be positive, got {}", self.sigma_data)));
        }
        Ok(())
    }

    /// Constrained `(τ, σ_d, θ)` as plain numbers.
    pub fn constrained(&self) -> Result<(f64, f64, f64)> {
        let tape = Tape::new();
        let s = constrain(&tape.scalar(self.tau_raw), &tape.scalar(self.sigma_raw), &tape.scalar(self.theta_raw))?;
        Ok((s.tau.item(), s.sigma.item(), s.theta.item()))
    }
}

pub fn inverse_softplus(y: f64) -> f64 {
    // ln(e^y - 1), written to stay accurate for large y.
    y + (-(-y).exp()).ln_1p()
}

/// Constrained step sizes as tape values.
#[derive(Clone, Debug)]
pub struct StepSizes<'t> {
    pub tau: Var<'t>,
    pub sigma: Var<'t>,
    pub theta: Var<'t>,
}

impl<'t> StepSizes<'t> {
    /// Fixed (non-learned) step sizes.
    pub fn fixed(tape: &'t Tape, tau: f64, sigma: f64, theta: f64) -> Self {
        StepSizes { tau: tape.scalar(tau), sigma: tape.scalar(sigma), theta: tape.scalar(theta) }
    }

    pub fn classical(tape: &'t Tape) -> Self {
        Self::fixed(tape, CLASSICAL_TAU, CLASSICAL_SIGMA, CLASSICAL_THETA)
    }
}

/// `τ = clamp(softplus(τ_raw), 1e-4, 0.5)`, likewise for `σ_d`, and
/// `θ = clamp(sp / (1 + sp), 0, 1)` with `sp = softplus(θ_raw)`.
pub fn constrain<'t>(tau_raw: &Var<'t>, sigma_raw: &Var<'t>, theta_raw: &Var<'t>) -> Result<StepSizes<'t>> {
    let tau = tau_raw.softplus()?.clamp(STEP_MIN, STEP_MAX)?;
    let sigma = sigma_raw.softplus()?.clamp(STEP_MIN, STEP_MAX)?;
    let sp = theta_raw.softplus()?;
    let theta = sp.div(&sp.offset(1.0)?)?.clamp(0.0, 1.0)?;
    Ok(StepSizes { tau, sigma, theta })
}

/// Iterates of the primal-dual loop.
#[derive(Clone, Debug)]
pub struct SolverState<'t> {
    pub x: Var<'t>,
    pub x_bar: Var<'t>,
    pub p: Var<'t>,
}

/// Dual ascent followed by the per-pixel projection onto the λ-ball.
pub fn dual_step<'t>(p: &Var<'t>, x_bar: &Var<'t>, lambda: &Var<'t>, sigma: &Var<'t>) -> Result<Var<'t>> {
    let q = p.add(&sigma.mul(&x_bar.grad2d()?)?)?;
    q.project_l2_ball(lambda)
}

/// Proximal step of the quadratic fidelity term.
pub fn primal_step<'t>(x: &Var<'t>, p: &Var<'t>, y: &Var<'t>, tau: &Var<'t>, w_data: f64) -> Result<Var<'t>> {
    if !(w_data > 0.0) {
        return Err(LtvError::InvalidArgument(format!("w_data must be positive, got {w_data}")));
    }
    let drive = p.div2d()?.add(&y.sub(x)?.scale(w_data)?)?;
    let step = tau.mul(&drive)?.div(&tau.affine(w_data, 1.0)?)?;
    x.add(&step)
}

/// Over-relaxation `x' + θ (x' - x)`.
pub fn relax_step<'t>(x_new: &Var<'t>, x: &Var<'t>, theta: &Var<'t>) -> Result<Var<'t>> {
    x_new.add(&theta.mul(&x_new.sub(x)?)?)
}

/// Run exactly `iterations` unrolled updates and return the final primal iterate.
pub fn unrolled_solve<'t>(
    y: &Var<'t>,
    lambda: &Var<'t>,
    steps: &StepSizes<'t>,
    w_data: f64,
    iterations: usize,
) -> Result<Var<'t>> {
    unrolled_solve_observed(y, lambda, steps, w_data, iterations, |_, _| {})
}

/// [`unrolled_solve`] with a callback after every completed iteration.
pub fn unrolled_solve_observed<'t>(
    y: &Var<'t>,
    lambda: &Var<'t>,
    steps: &StepSizes<'t>,
    w_data: f64,
    iterations: usize,
    mut observe: impl FnMut(usize, &SolverState<'t>),
) -> Result<Var<'t>> {
    let (h, w) = y.value().dims2()?;
    if lambda.shape() != [h, w] {
        return Err(LtvError::shape("unrolled_solve", format!("λ {:?} vs y {:?}", lambda.shape(), y.shape())));
    }
    if !y.value().is_finite() {
        return Err(LtvError::InvalidArgument("non-finite input image".into()));
    }
    if lambda.value().data().iter().any(|&l| !(l >= 0.0)) {
        return Err(LtvError::InvalidArgument("λ-map must be nonnegative".into()));
    }
    let tape = y.tape();
    let mut state = SolverState { x: y.clone(), x_bar: y.clone(), p: tape.constant(Tensor::zeros(&[2, h, w])) };
    for k in 0..iterations {
        let wrap = |e: LtvError| LtvError::SolverDiverged { iteration: k, source: Box::new(e) };
        let p = dual_step(&state.p, &state.x_bar, lambda, &steps.sigma).map_err(wrap)?;
        let x_new = primal_step(&state.x, &p, y, &steps.tau, w_data).map_err(wrap)?;
        let x_bar = relax_step(&x_new, &state.x, &steps.theta).map_err(wrap)?;
        state = SolverState { x: x_new, x_bar, p };
        observe(k, &state);
    }
    Ok(state.x)
}

/// Scalar-λ baseline with the textbook step sizes and no recording.
pub fn classical_tv(y: &Tensor, lambda: f64, iterations: usize) -> Result<Tensor> {
    if !(lambda >= 0.0) {
        return Err(LtvError::InvalidArgument(format!("λ must be nonnegative, got {lambda}")));
    }
    let tape = Tape::new();
    let yv = tape.constant(y.clone());
    let lam = tape.constant(Tensor::full(y.shape(), lambda));
    let x = unrolled_solve(&yv, &lam, &StepSizes::classical(&tape), 1.0, iterations)?;
    Ok(x.value().clone())
}

/// Isotropic total variation `Σ |∇x|` of an image.
pub fn total_variation(x: &Tensor) -> Result<f64> {
    Ok(crate::tensor::pixel_l2_norm(&crate::tensor::grad2d(x)?)?.sum())
}
