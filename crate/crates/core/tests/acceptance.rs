//! Acceptance criteria 1-10. Each test prints one PASS/FAIL line.

mod common;

use std::fs;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use common::{gradcheck, huber_tv_oracle, rms, rng, uniform};
use ltv::ct_sim::noise::predicted_variance;
use ltv::ct_sim::{apply_dose_noise, fbp, make_phantom, radon, Dataset, DatasetConfig, Geometry, NoiseConfig, Sinogram};
use ltv::lambda_model::LambdaMap;
use ltv::model::LtvModel;
use ltv::objective::{
    align_loss, edge_loss, ent_loss, grad_magnitude, mse, proj_band_loss, psnr, spatial_l1, ssim_loss, total_loss,
    tv_of_lambda, var_loss, LossWeights,
};
use ltv::solver::{classical_tv, constrain, unrolled_solve, unrolled_solve_observed, StepSizes};
use ltv::tensor::{div2d, grad2d, pixel_l2_norm};
use ltv::trainer::{ablate, best_checkpoint, evaluate, train, AblationSpec, EvalConfig, Evaluation, TrainConfig};
use ltv::{Result, Tape, Tensor, Var};
use rand::Rng;

// Pinned tolerances and budgets.
const ADJOINT_TOL: f64 = 1e-10;
const SMOOTH_TOL: f64 = 1e-6;
const NONSMOOTH_TOL: f64 = 1e-4;
const E2E_TOL: f64 = 1e-4;
const ORACLE_RMS: f64 = 1e-3;
const HUBER_EPS: f64 = 1e-6;
const ORACLE_STEPS: usize = 100_000;
const LONG_RUN: usize = 2000;
const FEASIBILITY_TOL: f64 = 1e-12;
const GAIN_OVER_NOISY_DB: f64 = 3.0;
const TV_MARGIN_DB: f64 = 0.2;
const SSIM_MARGIN: f64 = 0.01;
const VARIANCE_TOL: f64 = 0.10;
const FBP_MIN_PSNR: f64 = 25.0;

/// Desk benchmark configuration. Batch size 1 is the declared desk-scale
/// override; everything else is at its default.
fn desk_config() -> TrainConfig {
    TrainConfig { batch_size: 1, epochs: 30, seed: 0, ..TrainConfig::default() }
}

fn report(n: u32, name: &str, pass: bool, detail: String) {
    println!("[acceptance] criterion {n:2} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

#[test]
fn criterion_01_adjoint() {
    let t0 = Instant::now();
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = uniform(&mut r, &[16, 16], -1.0, 1.0);
        let p = uniform(&mut r, &[2, 16, 16], -1.0, 1.0);
        let lhs = grad2d(&x).unwrap().dot(&p);
        let rhs = -x.dot(&div2d(&p).unwrap());
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst <= ADJOINT_TOL && secs < 1.0;
    report(1, "operator adjoint", pass, format!("max rel err {worst:.2e} <= {ADJOINT_TOL:e}, {secs:.3} s < 1 s"));
    assert!(pass);
}

/// Fixed inputs shared by the gradient-check cases.
struct Fx {
    pos: Tensor,
    other: Tensor,
    signed: Tensor,
    field: Tensor,
    radius: Tensor,
    w8: Tensor,
    w2: Tensor,
    w4: Tensor,
    w6: Tensor,
    wk: Tensor,
    wh: Tensor,
    kernel: Tensor,
    bias: Tensor,
    img3: Tensor,
    centers: Vec<f64>,
    x_hat: Tensor,
    x_star: Tensor,
    lam: Tensor,
}

impl Fx {
    fn new() -> Self {
        let mut r = rng(2);
        let pos = uniform(&mut r, &[8, 8], 0.5, 1.5);
        Fx {
            img3: pos.reshape(&[1, 8, 8]).unwrap(),
            pos,
            other: uniform(&mut r, &[8, 8], 0.5, 1.5),
            signed: uniform(&mut r, &[8, 8], -1.0, 1.0),
            field: uniform(&mut r, &[2, 8, 8], -1.0, 1.0),
            radius: uniform(&mut r, &[8, 8], 0.2, 1.2),
            w8: uniform(&mut r, &[8, 8], -1.0, 1.0),
            w2: uniform(&mut r, &[2, 8, 8], -1.0, 1.0),
            w4: uniform(&mut r, &[4, 4], -1.0, 1.0),
            w6: uniform(&mut r, &[6, 6], -1.0, 1.0),
            wk: uniform(&mut r, &[2, 8, 8], -1.0, 1.0),
            wh: uniform(&mut r, &[8], -1.0, 1.0),
            kernel: uniform(&mut r, &[2, 1, 3, 3], -0.5, 0.5),
            bias: uniform(&mut r, &[2], -0.5, 0.5),
            centers: (0..8).map(|b| 0.5 + 0.125 * b as f64).collect(),
            x_hat: uniform(&mut r, &[8, 8], 0.0, 1.0),
            x_star: uniform(&mut r, &[8, 8], 0.0, 1.0),
            lam: uniform(&mut r, &[8, 8], 0.05, 0.35),
        }
    }
}

type OpFn = for<'t> fn(&Fx, &Var<'t>) -> Result<Var<'t>>;
/// Loss term of `(x̂, λ, x*)`.
type LossFn = for<'t> fn(&Var<'t>, &Var<'t>, &Var<'t>) -> Result<Var<'t>>;

fn weighted<'t>(v: Var<'t>, w: &Tensor) -> Result<Var<'t>> {
    let wv = v.tape().constant(w.clone());
    v.mul(&wv)?.sum()
}

fn k<'t>(v: &Var<'t>, t: &Tensor) -> Var<'t> {
    v.tape().constant(t.clone())
}

/// Registered ops: name, tolerance, input selector, reduced output.
fn op_cases() -> Vec<(&'static str, f64, fn(&Fx) -> Tensor, OpFn)> {
    vec![
        ("add(x, b)", SMOOTH_TOL, |f| f.pos.clone(), |f, v| weighted(v.add(&k(v, &f.other))?, &f.w8)),
        ("add(a, x)", SMOOTH_TOL, |f| f.pos.clone(), |f, v| weighted(k(v, &f.other).add(v)?, &f.w8)),
        ("sub(x, b)", SMOOTH_TOL, |f| f.pos.clone(), |f, v| weighted(v.sub(&k(v, &f.other))?, &f.w8)),
        ("sub(a, x)", SMOOTH_TOL, |f| f.pos.clone(), |f, v| weighted(k(v, &f.other).sub(v)?, &f.w8)),
        ("mul(x, b)", SMOOTH_TOL, |f| f.pos.clone(), |f, v| weighted(v.mul(&k(v, &f.other))?, &f.w8)),
        ("mul(x, x)", SMOOTH_TOL, |f| f.pos.clone(), |f, v| weighted(v.mul(v)?, &f.w8)),
        ("div(x, b)", SMOOTH_TOL, |f| f.pos.clone(), |f, v| weighted(v.div(&k(v, &f.other))?, &f.w8)),
        ("div(a, x)", SMOOTH_TOL, |f| f.pos.clone(), |f, v| weighted(k(v, &f.other).div(v)?, &f.w8)),
        ("mul(scalar, t)", SMOOTH_TOL, |_| Tensor::scalar(0.7), |f, v| weighted(v.mul(&k(v, &f.other))?, &f.w8)),
        ("affine", SMOOTH_TOL, |f| f.pos.clone(), |f, v| weighted(v.affine(-1.7, 0.3)?, &f.w8)),
        ("scale", SMOOTH_TOL, |f| f.pos.clone(), |f, v| weighted(v.scale(2.5)?, &f.w8)),
        ("offset", SMOOTH_TOL, |f| f.pos.clone(), |f, v| weighted(v.offset(0.4)?, &f.w8)),
        ("neg", SMOOTH_TOL, |f| f.pos.clone(), |f, v| weighted(v.neg()?, &f.w8)),
        ("tanh", SMOOTH_TOL, |f| f.signed.clone(), |f, v| weighted(v.tanh()?, &f.w8)),
        ("softplus", SMOOTH_TOL, |f| f.signed.clone(), |f, v| weighted(v.softplus()?, &f.w8)),
        ("sigmoid", SMOOTH_TOL, |f| f.signed.clone(), |f, v| weighted(v.sigmoid()?, &f.w8)),
        ("sqrt", SMOOTH_TOL, |f| f.pos.clone(), |f, v| weighted(v.sqrt()?, &f.w8)),
        ("exp", SMOOTH_TOL, |f| f.signed.clone(), |f, v| weighted(v.exp()?, &f.w8)),
        ("log", SMOOTH_TOL, |f| f.pos.clone(), |f, v| weighted(v.log()?, &f.w8)),
        ("square", SMOOTH_TOL, |f| f.signed.clone(), |f, v| weighted(v.square()?, &f.w8)),
        ("grad2d", SMOOTH_TOL, |f| f.signed.clone(), |f, v| weighted(v.grad2d()?, &f.w2)),
        ("div2d", SMOOTH_TOL, |f| f.field.clone(), |f, v| weighted(v.div2d()?, &f.w8)),
        ("pixel_norm_smooth", SMOOTH_TOL, |f| f.field.clone(), |f, v| weighted(v.pixel_norm_smooth(0.1)?, &f.w8)),
        ("conv2d(x)", SMOOTH_TOL, |f| f.img3.clone(), |f, v| weighted(v.conv2d(&k(v, &f.kernel), &k(v, &f.bias))?, &f.wk)),
        ("conv2d(kernel)", SMOOTH_TOL, |f| f.kernel.clone(), |f, v| weighted(k(v, &f.img3).conv2d(v, &k(v, &f.bias))?, &f.wk)),
        ("conv2d(bias)", SMOOTH_TOL, |f| f.bias.clone(), |f, v| weighted(k(v, &f.img3).conv2d(&k(v, &f.kernel), v)?, &f.wk)),
        ("avg_pool2", SMOOTH_TOL, |f| f.signed.clone(), |f, v| weighted(v.avg_pool2()?, &f.w4)),
        ("upsample2", SMOOTH_TOL, |f| f.w4.clone(), |f, v| weighted(v.upsample2()?, &f.w8)),
        ("box_filter_valid", SMOOTH_TOL, |f| f.signed.clone(), |f, v| weighted(v.box_filter_valid(3)?, &f.w6)),
        ("sum", SMOOTH_TOL, |f| f.signed.clone(), |_, v| v.square()?.sum()),
        ("mean", SMOOTH_TOL, |f| f.signed.clone(), |_, v| v.square()?.mean()),
        ("std", SMOOTH_TOL, |f| f.signed.clone(), |_, v| v.std()),
        ("soft_histogram", SMOOTH_TOL, |f| f.pos.clone(), |f, v| weighted(v.soft_histogram(&f.centers, 0.125)?, &f.wh)),
        ("reshape", SMOOTH_TOL, |f| f.signed.clone(), |f, v| weighted(v.reshape(&[2, 32])?, &f.w8.reshape(&[2, 32])?)),
        ("clamp", NONSMOOTH_TOL, |f| f.pos.clone(), |f, v| weighted(v.clamp(0.8, 1.2)?, &f.w8)),
        ("abs", NONSMOOTH_TOL, |f| f.signed.clone(), |f, v| weighted(v.abs()?, &f.w8)),
        ("pixel_norm", NONSMOOTH_TOL, |f| f.field.clone(), |f, v| weighted(v.pixel_norm()?, &f.w8)),
        ("project_l2_ball(p)", NONSMOOTH_TOL, |f| f.field.clone(), |f, v| weighted(v.project_l2_ball(&k(v, &f.radius))?, &f.w2)),
        ("project_l2_ball(r)", NONSMOOTH_TOL, |f| f.radius.clone(), |f, v| weighted(k(v, &f.field).project_l2_ball(v)?, &f.w2)),
        ("max_all", NONSMOOTH_TOL, |f| f.signed.clone(), |_, v| v.max_all()?.scale(3.0)),
    ]
}

const LAMBDA_MIN: f64 = 1e-3;
const LAMBDA_MAX: f64 = 0.4;

/// Every term of the training objective, plus the weighted total.
fn loss_cases() -> Vec<(&'static str, f64, LossFn)> {
    vec![
        ("mse", SMOOTH_TOL, |x, _, s| mse(x, s)),
        ("ssim", SMOOTH_TOL, |x, _, s| ssim_loss(x, s)),
        ("tv_lambda", SMOOTH_TOL, |_, l, _| tv_of_lambda(l)),
        ("spatial", NONSMOOTH_TOL, |_, l, _| spatial_l1(l)),
        ("align", NONSMOOTH_TOL, |x, l, _| align_loss(l, &grad_magnitude(x)?)),
        ("edge", NONSMOOTH_TOL, |x, l, _| edge_loss(l, &grad_magnitude(x)?, LAMBDA_MAX)),
        ("proj", NONSMOOTH_TOL, |x, l, _| proj_band_loss(l, &grad_magnitude(x)?, 0.5, 2.0)),
        ("var", SMOOTH_TOL, |_, l, _| var_loss(l)),
        ("ent", SMOOTH_TOL, |_, l, _| ent_loss(l, LAMBDA_MIN, LAMBDA_MAX)),
        ("total", NONSMOOTH_TOL, |x, l, s| {
            let map = LambdaMap { values: l.clone(), lambda_min: LAMBDA_MIN, lambda_max: LAMBDA_MAX };
            Ok(total_loss(x, s, &map, &LossWeights::default(), None)?.0)
        }),
    ]
}

#[test]
fn criterion_02_autodiff() {
    let t0 = Instant::now();
    let mut failures = Vec::new();
    let mut count = 0;
    let mut worst_smooth: f64 = 0.0;
    let mut worst_nonsmooth: f64 = 0.0;
    let fx = Fx::new();
    let mut results: Vec<(String, f64, f64)> = Vec::new();
    for (name, tol, input, f) in op_cases() {
        results.push((name.to_string(), tol, gradcheck(&input(&fx), |v| f(&fx, v))));
    }
    for (name, tol, f) in loss_cases() {
        let by_x = gradcheck(&fx.x_hat, |v| f(v, &k(v, &fx.lam), &k(v, &fx.x_star)));
        let by_l = gradcheck(&fx.lam, |v| f(&k(v, &fx.x_hat), v, &k(v, &fx.x_star)));
        results.push((format!("{name} wrt x̂"), tol, by_x));
        results.push((format!("{name} wrt λ"), tol, by_l));
    }
    for (name, tol, err) in results {
        count += 1;
        if tol == SMOOTH_TOL {
            worst_smooth = worst_smooth.max(err);
        } else {
            worst_nonsmooth = worst_nonsmooth.max(err);
        }
        if !(err < tol) {
            failures.push(format!("{name}: {err:.2e} >= {tol:e}"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 30.0;
    report(
        2,
        "autodiff gradient checks",
        pass,
        format!(
            "{count} checks, worst smooth {worst_smooth:.2e} < {SMOOTH_TOL:e}, worst nonsmooth {worst_nonsmooth:.2e} < {NONSMOOTH_TOL:e}, {secs:.2} s < 30 s{}",
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join("; ")) }
        ),
    );
    assert!(pass);
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

#[test]
fn criterion_03_end_to_end() {
    let t0 = Instant::now();
    let mut r = rng(4);
    let clean = make_phantom(8, 8, 3, 11, true).unwrap().image;
    let noise = uniform(&mut r, &[8, 8], -0.1, 0.1);
    let noisy = clean.add(&noise).unwrap();
    let cfg = TrainConfig::default();
    let mut model = LtvModel::new(cfg.predictor.clone(), cfg.ramp.clone(), &cfg.solver, 5).unwrap();
    model.iterations = 3;
    let epoch = 0.0;
    let weights = LossWeights::default();

    let loss_at = |m: &LtvModel| -> f64 {
        let tape = Tape::new();
        let f = m.forward(&tape, &noisy, epoch, false).unwrap();
        total_loss(&f.x_hat, &tape.constant(clean.clone()), &f.lambda, &weights, None).unwrap().0.item()
    };
    let tape = Tape::new();
    let f = model.forward(&tape, &noisy, epoch, true).unwrap();
    let (loss, _) = total_loss(&f.x_hat, &tape.constant(clean.clone()), &f.lambda, &weights, None).unwrap();
    let grads = tape.backward(&loss).unwrap();
    let analytic: Vec<Tensor> = f.weights.iter().map(|w| grads.get_or_zeros(w)).collect();

    let h = common::FD_STEP;
    let mut checks = Vec::new();
    for (idx, p) in model.params.iter().enumerate() {
        let picks: Vec<usize> =
            if p.value.len() <= 3 { (0..p.value.len()).collect() } else { (0..3).map(|_| r.random_range(0..p.value.len())).collect() };
        for k in picks {
            let mut plus = model.clone();
            plus.params.param_mut(idx).value.data_mut()[k] += h;
            let mut minus = model.clone();
            minus.params.param_mut(idx).value.data_mut()[k] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            checks.push((format!("{}[{k}]", p.name), analytic[idx].data()[k], fd));
        }
    }

    // λ pixels through the solver and the λ-dependent loss terms. A freshly
    // initialized predictor gives a nearly flat λ whose differences are on
    // the order of the FD step, so the pixels are probed on a spread map.
    let lam0 = uniform(&mut r, &[8, 8], 0.02, 0.38);
    let sp = model.solver_params().unwrap();
    let lambda_max = model.ramp.lambda_max(epoch);
    let lambda_min = model.ramp.lambda_min;
    let lam_loss = |lam: &Tensor, trainable: bool| -> (f64, Option<Tensor>) {
        let tape = Tape::new();
        let lv = if trainable { tape.param(lam.clone()) } else { tape.constant(lam.clone()) };
        let steps = constrain(&tape.scalar(sp.tau_raw), &tape.scalar(sp.sigma_raw), &tape.scalar(sp.theta_raw)).unwrap();
        let x = unrolled_solve(&tape.constant(noisy.clone()), &lv, &steps, sp.w_data(), 3).unwrap();
        let map = LambdaMap { values: lv.clone(), lambda_min, lambda_max };
        let (l, _) = total_loss(&x, &tape.constant(clean.clone()), &map, &weights, None).unwrap();
        let g = if trainable { Some(tape.backward(&l).unwrap().get_or_zeros(&lv)) } else { None };
        (l.item(), g)
    };
    let g_lam = lam_loss(&lam0, true).1.unwrap();
    for _ in 0..10 {
        let k = r.random_range(0..lam0.len());
        let mut plus = lam0.clone();
        plus.data_mut()[k] += h;
        let mut minus = lam0.clone();
        minus.data_mut()[k] -= h;
        let fd = (lam_loss(&plus, false).0 - lam_loss(&minus, false).0) / (2.0 * h);
        checks.push((format!("lambda[{k}]"), g_lam.data()[k], fd));
    }

    let worst = checks.iter().map(|(n, a, b)| (n.clone(), rel(*a, *b))).fold((String::new(), 0.0), |m, c| if c.1 > m.1 { c } else { m });
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst.1 < E2E_TOL && secs < 60.0;
    report(
        3,
        "end-to-end gradient (T = 3)",
        pass,
        format!("{} scalars, worst {} rel err {:.2e} < {E2E_TOL:e}, {secs:.2} s < 60 s", checks.len(), worst.0, worst.1),
    );
    assert!(pass);
}

#[test]
fn criterion_04_solver_oracle() {
    let t0 = Instant::now();
    let mut r = rng(5);
    let step = Tensor::from_fn2(1, 64, |_, j| if (16..40).contains(&j) { 0.8 } else { 0.2 });
    let line = step.add(&uniform(&mut r, &[1, 64], -0.1, 0.1)).unwrap();
    let square = uniform(&mut r, &[8, 8], 0.0, 1.0);
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for (name, y) in [("1x64", &line), ("8x8", &square)] {
        for lam in [0.05, 0.2, 0.5] {
            let pd = classical_tv(y, lam, LONG_RUN).unwrap();
            let oracle = huber_tv_oracle(y, lam, HUBER_EPS, ORACLE_STEPS);
            let e = rms(&pd, &oracle);
            worst = worst.max(e);
            details.push(format!("{name}@{lam}: {e:.1e}"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst <= ORACLE_RMS && secs < 120.0;
    report(4, "solver oracle", pass, format!("worst RMS {worst:.2e} <= {ORACLE_RMS:e} [{}], {secs:.1} s < 120 s", details.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_05_identity_and_feasibility() {
    let mut r = rng(6);
    let mut identity_ok = true;
    let mut worst: f64 = f64::NEG_INFINITY;
    for trial in 0..20 {
        let (h, w) = (r.random_range(2..14), r.random_range(2..14));
        let y = uniform(&mut r, &[h, w], 0.0, 1.0);
        let (tau, sigma, theta) = (r.random_range(1e-4..0.5), r.random_range(1e-4..0.5), r.random_range(0.0..1.0));
        let w_data = r.random_range(0.5..5.0);
        let tape = Tape::new();
        let steps = StepSizes::fixed(&tape, tau, sigma, theta);
        let yv = tape.constant(y.clone());
        let x = unrolled_solve(&yv, &tape.constant(Tensor::zeros(&[h, w])), &steps, w_data, 25).unwrap();
        identity_ok &= *x.value() == y;

        let lam = uniform(&mut r, &[h, w], 0.0, 0.5 * (trial as f64 + 1.0) / 20.0);
        unrolled_solve_observed(&yv, &tape.constant(lam.clone()), &steps, w_data, 50, |_, s| {
            let n = pixel_l2_norm(s.p.value()).unwrap();
            for (a, b) in n.data().iter().zip(lam.data()) {
                worst = worst.max(a - b);
            }
        })
        .unwrap();
    }
    let pass = identity_ok && worst <= FEASIBILITY_TOL;
    report(
        5,
        "identity and dual feasibility",
        pass,
        format!("λ ≡ 0 identity exact: {identity_ok}; max(|p| - λ) over all iterations {worst:.2e} <= {FEASIBILITY_TOL:e}"),
    );
    assert!(pass);
}

struct Desk {
    eval: Evaluation,
    best_epoch: usize,
    secs: f64,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let t0 = Instant::now();
        let ds = Dataset::generate(&DatasetConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = train(&ds, &desk_config(), Some(dir.path())).unwrap();
        let model = LtvModel::load(&best_checkpoint(dir.path()).unwrap()).unwrap();
        let eval = evaluate(Some(&model), &ds.val, &EvalConfig::default()).unwrap();
        println!("{}", eval.table().to_csv());
        println!("textured subset:\n{}", eval.textured_table().to_csv());
        Desk { eval, best_epoch: out.best_epoch, secs: t0.elapsed().as_secs_f64() }
    })
}

#[test]
fn criterion_06_desk_benchmark() {
    let d = desk();
    let all = d.eval.table();
    let tex = d.eval.textured_table();
    let (noisy, tv, ltv) = (all.row("noisy").unwrap(), all.row("tv_best").unwrap(), all.row("ltv").unwrap());
    let (tv_t, ltv_t) = (tex.row("tv_best").unwrap(), tex.row("ltv").unwrap());
    let best_grid_ssim = all.rows.iter().filter(|r| r.method.starts_with("tv_lambda=")).map(|r| r.ssim_mean).fold(f64::NEG_INFINITY, f64::max);
    let a = ltv.psnr_mean >= noisy.psnr_mean + GAIN_OVER_NOISY_DB;
    let b_all = ltv.psnr_mean >= tv.psnr_mean - TV_MARGIN_DB;
    let b_tex = ltv_t.psnr_mean > tv_t.psnr_mean;
    let c = ltv.ssim_mean >= best_grid_ssim - SSIM_MARGIN;
    let time_ok = d.secs < 1200.0;
    let pass = a && b_all && b_tex && c && time_ok;
    report(
        6,
        "desk benchmark",
        pass,
        format!(
            "best epoch {}; (a) {} LTV {:.3} dB vs noisy {:.3} + {GAIN_OVER_NOISY_DB}; (b) {} LTV {:.3} vs TV-best {:.3} - {TV_MARGIN_DB}, {} textured LTV {:.3} > TV-best {:.3}; (c) {} SSIM {:.4} vs best grid SSIM {:.4} - {SSIM_MARGIN}; {:.0} s < 1200 s",
            d.best_epoch,
            pf(a),
            ltv.psnr_mean,
            noisy.psnr_mean,
            pf(b_all),
            ltv.psnr_mean,
            tv.psnr_mean,
            pf(b_tex),
            ltv_t.psnr_mean,
            tv_t.psnr_mean,
            pf(c),
            ltv.ssim_mean,
            best_grid_ssim,
            d.secs
        ),
    );
    assert!(pass);
}

fn pf(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

#[test]
fn criterion_07_lambda_adaptivity() {
    let s = desk().eval.ltv_lambda.unwrap();
    let pass = s.r > 0.0 && !s.degenerate;
    report(
        7,
        "λ adaptivity",
        pass,
        format!("pooled Pearson r(λ, |∇x̂|) = {:.4} > 0 (λ mean {:.4}, median {:.4}, std {:.4})", s.r, s.mean, s.median, s.std),
    );
    assert!(pass);
}

#[test]
fn criterion_08_ablation_harness() {
    let ds = Dataset::generate(&DatasetConfig::default()).unwrap();
    let base = TrainConfig { epochs: 2, ..desk_config() };
    let dir = tempfile::tempdir().unwrap();
    let arms = AblationSpec::standard(true, true);
    let rep = ablate(&ds, &base, &arms, Some(dir.path())).unwrap();
    let csv = rep.to_csv();
    let header_ok = csv.lines().next() == Some(ltv::trainer::eval::ABLATION_HEADER);
    let rows_ok = rep.rows.len() == arms.len()
        && rep.rows.iter().all(|r| [r.psnr_mean, r.ssim_mean, r.lambda_std, r.d_psnr, r.d_ssim, r.d_lambda_std].iter().all(|v| v.is_finite()));
    let (b, n) = (&rep.rows[0], rep.row("null").unwrap());
    let null_ok = b.psnr_mean == n.psnr_mean && b.ssim_mean == n.ssim_mean && b.lambda_std == n.lambda_std;
    let echo = |arm: &str| fs::read_to_string(dir.path().join(arm).join("config.txt")).unwrap();
    let echo_ok = echo("no_tv_lambda").contains("w_tv_lambda=0\n")
        && echo("no_ent").contains("w_ent=0\n")
        && echo("no_tv_lambda_no_ent").contains("w_tv_lambda=0\n")
        && echo("no_tv_lambda_no_ent").contains("w_ent=0\n");
    let pass = header_ok && rows_ok && null_ok && echo_ok;
    println!("{csv}");
    report(
        8,
        "ablation harness",
        pass,
        format!("schema {header_ok}/{rows_ok}, null arm identical {null_ok}, zeroed weights echoed {echo_ok}"),
    );
    assert!(pass);
}

/// Supersampled disk of radius `r`.
fn disk(n: usize, radius: f64, value: f64) -> Tensor {
    Tensor::from_fn2(n, n, |i, j| {
        let mut inside = 0;
        for a in 0..8 {
            for b in 0..8 {
                let y = i as f64 - (n as f64 - 1.0) / 2.0 + (a as f64 + 0.5) / 8.0 - 0.5;
                let x = j as f64 - (n as f64 - 1.0) / 2.0 + (b as f64 + 0.5) / 8.0 - 0.5;
                inside += (x * x + y * y <= radius * radius) as usize;
            }
        }
        value * inside as f64 / 64.0
    })
}

#[test]
fn criterion_09_simulator_statistics() {
    let mut ratios = Vec::new();
    for (k, s) in [0.5, 1.5, 2.5].into_iter().enumerate() {
        let mu = 1.0;
        let cfg = NoiseConfig { mu: Some(mu), seed: 40 + k as u64, ..NoiseConfig::default() };
        let sino = Sinogram { values: Tensor::full(&[100, 100], s), geometry: Geometry::new(8, 8, 100, 100).unwrap() };
        let noisy = apply_dose_noise(&sino, &cfg).unwrap();
        let v = noisy.values.std().powi(2);
        ratios.push((s, v / predicted_variance(s, mu, cfg.photons())));
    }
    let var_ok = ratios.iter().all(|(_, q)| (q - 1.0).abs() <= VARIANCE_TOL);
    let img = disk(64, 20.0, 0.6);
    let rec = fbp(&radon(&img, 180, Geometry::min_detectors(64, 64)).unwrap()).unwrap();
    let p = psnr(&rec, &img).unwrap();
    let pass = var_ok && p > FBP_MIN_PSNR;
    report(
        9,
        "simulator statistics",
        pass,
        format!(
            "variance/prediction {} within ±{VARIANCE_TOL} (10^4 draws each); FBP disk PSNR {p:.2} dB > {FBP_MIN_PSNR}",
            ratios.iter().map(|(s, q)| format!("s={s}: {q:.3}")).collect::<Vec<_>>().join(", ")
        ),
    );
    assert!(pass);
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_10_reproducibility() {
    let ds = Dataset::generate(&DatasetConfig { height: 32, width: 32, n_train: 6, n_val: 2, seed: 9, ..DatasetConfig::default() }).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 2, seed: 9, parallel: false, ..TrainConfig::default() };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        pool.install(|| train(&ds, &cfg, Some(dir.path()))).unwrap();
        tree_bytes(dir.path())
    };
    let (a, b) = (run(), run());
    let checkpoints = a.iter().filter(|(n, _)| n.starts_with("checkpoints")).count();
    let pass = a == b && checkpoints > 0 && a.iter().any(|(n, _)| n == "runlog.csv");
    report(10, "reproducibility", pass, format!("{} files ({checkpoints} under checkpoints/) bit-identical across two single-threaded runs", a.len()));
    assert!(pass);
}
