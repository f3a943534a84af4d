//! Training objective and image quality metrics.
//!
//! The total loss is a weighted sum of image fidelity (MSE, 1 - SSIM and an
//! optional perceptual hook), λ-map smoothness (isotropic TV and an
//! anisotropic L1 term), structure alignment between λ and `|∇x̂|`
//! (projection band, scale-matched L1, normalized L1) and distributional
//! terms on λ (negative std, negative soft-histogram entropy).

use crate::error::{LtvError, Result};
use crate::lambda_model::LambdaMap;
use crate::tensor::{Tape, Tensor, Var};

/// Smoothing inside `|∇·|` wherever the magnitude is differentiated.
pub const EPS_NORM: f64 = 1e-8;
pub const SSIM_WINDOW: usize = 7;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const ENTROPY_BINS: usize = 16;
const GUARD: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub w_ssim: f64,
    pub w_perc: f64,
    pub w_tv_lambda: f64,
    pub w_spatial: f64,
    pub w_align: f64,
    pub w_edge: f64,
    pub w_proj: f64,
    pub w_var: f64,
    pub w_ent: f64,
    pub k_lo: f64,
    pub k_hi: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_ssim: 0.2,
            w_perc: 0.0,
            w_tv_lambda: 1e-3,
            w_spatial: 1e-3,
            w_align: 0.01,
            w_edge: 0.01,
            w_proj: 0.05,
            w_var: 0.01,
            w_ent: 0.05,
            k_lo: 0.5,
            k_hi: 2.0,
        }
    }
}

impl LossWeights {
    /// Only the MSE term active.
    pub fn mse_only() -> Self {
        LossWeights {
            w_ssim: 0.0,
            w_perc: 0.0,
            w_tv_lambda: 0.0,
            w_spatial: 0.0,
            w_align: 0.0,
            w_edge: 0.0,
            w_proj: 0.0,
            w_var: 0.0,
            w_ent: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [
            self.w_ssim,
            self.w_perc,
            self.w_tv_lambda,
            self.w_spatial,
            self.w_align,
            self.w_edge,
            self.w_proj,
            self.w_var,
            self.w_ent,
        ];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(LtvError::InvalidArgument("loss weights must be finite and nonnegative".into()));
        }
        if !(self.k_lo > 0.0 && self.k_lo < self.k_hi && self.k_hi.is_finite()) {
            return Err(LtvError::InvalidArgument(format!(
                "band needs 0 < k_lo < k_hi, got {} / {}",
                self.k_lo, self.k_hi
            )));
        }
        Ok(())
    }
}

/// Per-term snapshot of one loss evaluation. Values are unweighted
/// components; `ssim` holds the `1 - SSIM` loss.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub mse: f64,
    pub ssim: f64,
    pub perc: f64,
    pub tv_lambda: f64,
    pub spatial: f64,
    pub align: f64,
    pub edge: f64,
    pub proj: f64,
    pub var: f64,
    pub ent: f64,
    pub total: f64,
}

impl LossReport {
    pub const CSV_COMPONENTS: [&'static str; 11] =
        ["mse", "ssim", "perc", "tv_lambda", "spatial", "align", "edge", "proj", "var", "ent", "total"];

    pub fn components(&self) -> [f64; 11] {
        [
            self.mse,
            self.ssim,
            self.perc,
            self.tv_lambda,
            self.spatial,
            self.align,
            self.edge,
            self.proj,
            self.var,
            self.ent,
            self.total,
        ]
    }

    /// `total` recomputed from the components in the same order the tape adds them.
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        let mut t = self.mse;
        for (wi, ci) in [
            (w.w_ssim, self.ssim),
            (w.w_perc, self.perc),
            (w.w_tv_lambda, self.tv_lambda),
            (w.w_spatial, self.spatial),
            (w.w_align, self.align),
            (w.w_edge, self.edge),
            (w.w_proj, self.proj),
            (w.w_var, self.var),
            (w.w_ent, self.ent),
        ] {
            t += wi * ci;
        }
        t
    }

    pub fn csv_header() -> String {
        format!("epoch,step,{}", Self::CSV_COMPONENTS.join(","))
    }

    pub fn csv_row(&self, epoch: usize, step: usize) -> String {
        let vals: Vec<String> = self.components().iter().map(|v| format!("{v:e}")).collect();
        format!("{epoch},{step},{}", vals.join(","))
    }

    /// Componentwise mean of several reports.
    pub fn mean_of(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut acc = [0.0; 11];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.components()) {
                *a += v;
            }
        }
        let c = acc.map(|v| v / n);
        LossReport {
            mse: c[0],
            ssim: c[1],
            perc: c[2],
            tv_lambda: c[3],
            spatial: c[4],
            align: c[5],
            edge: c[6],
            proj: c[7],
            var: c[8],
            ent: c[9],
            total: c[10],
        }
    }
}

impl std::fmt::Display for LossReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, (name, v)) in Self::CSV_COMPONENTS.iter().zip(self.components()).enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{name}={v:.6e}")?;
        }
        Ok(())
    }
}

/// Pluggable perceptual term. No implementation ships with the crate; when
/// absent the term is zero.
pub trait PerceptualLoss {
    fn loss<'t>(&self, x_hat: &Var<'t>, x_star: &Var<'t>) -> Result<Var<'t>>;
}

fn same_shape(a: &Var<'_>, b: &Var<'_>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(LtvError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn mse<'t>(x_hat: &Var<'t>, x_star: &Var<'t>) -> Result<Var<'t>> {
    same_shape(x_hat, x_star, "mse")?;
    x_hat.sub(x_star)?.square()?.mean()
}

/// Mean SSIM over all fully contained 7×7 uniform windows.
pub fn ssim<'t>(x_hat: &Var<'t>, x_star: &Var<'t>) -> Result<Var<'t>> {
    same_shape(x_hat, x_star, "ssim")?;
    let (h, w) = x_hat.value().dims2()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(LtvError::shape("ssim", format!("image {h}×{w} smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window")));
    }
    let k = SSIM_WINDOW;
    let mu_x = x_hat.box_filter_valid(k)?;
    let mu_y = x_star.box_filter_valid(k)?;
    let mu_xx = mu_x.square()?;
    let mu_yy = mu_y.square()?;
    let mu_xy = mu_x.mul(&mu_y)?;
    let s_xx = x_hat.square()?.box_filter_valid(k)?.sub(&mu_xx)?;
    let s_yy = x_star.square()?.box_filter_valid(k)?.sub(&mu_yy)?;
    let s_xy = x_hat.mul(x_star)?.box_filter_valid(k)?.sub(&mu_xy)?;
    let num = mu_xy.affine(2.0, SSIM_C1)?.mul(&s_xy.affine(2.0, SSIM_C2)?)?;
    let den = mu_xx.add(&mu_yy)?.offset(SSIM_C1)?.mul(&s_xx.add(&s_yy)?.offset(SSIM_C2)?)?;
    num.div(&den)?.mean()
}

pub fn ssim_loss<'t>(x_hat: &Var<'t>, x_star: &Var<'t>) -> Result<Var<'t>> {
    ssim(x_hat, x_star)?.affine(-1.0, 1.0)
}

/// Smoothed gradient magnitude `sqrt(|∇x|² + ε²)`.
pub fn grad_magnitude<'t>(x: &Var<'t>) -> Result<Var<'t>> {
    x.grad2d()?.pixel_norm_smooth(EPS_NORM)
}

/// Isotropic total variation of the λ-map.
pub fn tv_of_lambda<'t>(lambda: &Var<'t>) -> Result<Var<'t>> {
    tv_of_lambda_eps(lambda, EPS_NORM)
}

pub fn tv_of_lambda_eps<'t>(lambda: &Var<'t>, eps: f64) -> Result<Var<'t>> {
    lambda.grad2d()?.pixel_norm_smooth(eps)?.sum()
}

/// Mean over pixels of `|Δ_h λ| + |Δ_v λ|`.
pub fn spatial_l1<'t>(lambda: &Var<'t>) -> Result<Var<'t>> {
    let n = lambda.value().len() as f64;
    lambda.grad2d()?.abs()?.sum()?.scale(1.0 / n)
}

/// Squared hinge outside the band `k_lo·g ≤ λ ≤ k_hi·g`.
pub fn proj_band_loss<'t>(lambda: &Var<'t>, g: &Var<'t>, k_lo: f64, k_hi: f64) -> Result<Var<'t>> {
    same_shape(lambda, g, "proj_band_loss")?;
    let below = g.scale(k_lo)?.sub(lambda)?.clamp(0.0, f64::INFINITY)?.square()?;
    let above = lambda.sub(&g.scale(k_hi)?)?.clamp(0.0, f64::INFINITY)?.square()?;
    below.add(&above)?.mean()
}

/// `mean |λ − c·g|` with the scale `c = mean(λ) / mean(g)` matched to λ.
pub fn align_loss<'t>(lambda: &Var<'t>, g: &Var<'t>) -> Result<Var<'t>> {
    same_shape(lambda, g, "align_loss")?;
    let c = lambda.mean()?.div(&g.mean()?.clamp(GUARD, f64::INFINITY)?)?;
    lambda.sub(&c.mul(g)?)?.abs()?.mean()
}

/// `mean |λ/λ_max − g/max(g)|`.
pub fn edge_loss<'t>(lambda: &Var<'t>, g: &Var<'t>, lambda_max: f64) -> Result<Var<'t>> {
    same_shape(lambda, g, "edge_loss")?;
    let g_norm = g.div(&g.max_all()?.clamp(GUARD, f64::INFINITY)?)?;
    lambda.scale(1.0 / lambda_max)?.sub(&g_norm)?.abs()?.mean()
}

/// `-std(λ)`.
pub fn var_loss<'t>(lambda: &Var<'t>) -> Result<Var<'t>> {
    lambda.std()?.neg()
}

/// `Σ p log p` of a probability vector; 0 for a point mass, `-log B` for uniform.
pub fn neg_entropy<'t>(p: &Var<'t>) -> Result<Var<'t>> {
    p.mul(&p.clamp(1e-300, f64::INFINITY)?.log()?)?.sum()
}

/// Negative entropy of the Gaussian-kernel soft histogram of λ over
/// `[λ_min, λ_max]` with 16 bins and bandwidth equal to the bin width.
pub fn ent_loss<'t>(lambda: &Var<'t>, lambda_min: f64, lambda_max: f64) -> Result<Var<'t>> {
    if !(lambda_max > lambda_min) {
        return Err(LtvError::InvalidArgument(format!("empty histogram range [{lambda_min}, {lambda_max}]")));
    }
    let width = (lambda_max - lambda_min) / ENTROPY_BINS as f64;
    let centers: Vec<f64> = (0..ENTROPY_BINS).map(|b| lambda_min + (b as f64 + 0.5) * width).collect();
    let hist = lambda.soft_histogram(&centers, width)?;
    let p = hist.div(&hist.sum()?)?;
    neg_entropy(&p)
}

/// Weighted total loss with a per-term snapshot.
pub fn total_loss<'t>(
    x_hat: &Var<'t>,
    x_star: &Var<'t>,
    lambda: &LambdaMap<'t>,
    weights: &LossWeights,
    perceptual: Option<&dyn PerceptualLoss>,
) -> Result<(Var<'t>, LossReport)> {
    let tape = x_hat.tape();
    let lam = &lambda.values;
    same_shape(lam, x_hat, "total_loss")?;
    let g = grad_magnitude(x_hat)?;

    let c_mse = mse(x_hat, x_star)?;
    let c_ssim = ssim_loss(x_hat, x_star)?;
    let c_perc = match perceptual {
        Some(p) => p.loss(x_hat, x_star)?,
        None => tape.scalar(0.0),
    };
    let c_tv = tv_of_lambda(lam)?;
    let c_spatial = spatial_l1(lam)?;
    let c_align = align_loss(lam, &g)?;
    let c_edge = edge_loss(lam, &g, lambda.lambda_max)?;
    let c_proj = proj_band_loss(lam, &g, weights.k_lo, weights.k_hi)?;
    let c_var = var_loss(lam)?;
    let c_ent = ent_loss(lam, lambda.lambda_min, lambda.lambda_max)?;

    let mut total = c_mse.clone();
    for (w, c) in [
        (weights.w_ssim, &c_ssim),
        (weights.w_perc, &c_perc),
        (weights.w_tv_lambda, &c_tv),
        (weights.w_spatial, &c_spatial),
        (weights.w_align, &c_align),
        (weights.w_edge, &c_edge),
        (weights.w_proj, &c_proj),
        (weights.w_var, &c_var),
        (weights.w_ent, &c_ent),
    ] {
        total = total.add(&c.scale(w)?)?;
    }
    let report = LossReport {
        mse: c_mse.item(),
        ssim: c_ssim.item(),
        perc: c_perc.item(),
        tv_lambda: c_tv.item(),
        spatial: c_spatial.item(),
        align: c_align.item(),
        edge: c_edge.item(),
        proj: c_proj.item(),
        var: c_var.item(),
        ent: c_ent.item(),
        total: total.item(),
    };
    Ok((total, report))
}

type TermFn = for<'t> fn(&Var<'t>, &Var<'t>, &Var<'t>, &LossWeights, f64, f64) -> Result<Var<'t>>;

/// Each unweighted term evaluated on its own, for error reports. A term
/// that fails prints the failing op instead of a value.
pub fn loss_breakdown(
    x_hat: &Tensor,
    x_star: &Tensor,
    lambda: &Tensor,
    lambda_min: f64,
    lambda_max: f64,
    weights: &LossWeights,
) -> String {
    let terms: [(&str, TermFn); 9] = [
        ("mse", |x, s, _, _, _, _| mse(x, s)),
        ("ssim", |x, s, _, _, _, _| ssim_loss(x, s)),
        ("tv_lambda", |_, _, l, _, _, _| tv_of_lambda(l)),
        ("spatial", |_, _, l, _, _, _| spatial_l1(l)),
        ("align", |x, _, l, _, _, _| align_loss(l, &grad_magnitude(x)?)),
        ("edge", |x, _, l, _, _, hi| edge_loss(l, &grad_magnitude(x)?, hi)),
        ("proj", |x, _, l, w, _, _| proj_band_loss(l, &grad_magnitude(x)?, w.k_lo, w.k_hi)),
        ("var", |_, _, l, _, _, _| var_loss(l)),
        ("ent", |_, _, l, _, lo, hi| ent_loss(l, lo, hi)),
    ];
    let mut parts = Vec::with_capacity(terms.len());
    for (name, f) in terms {
        let tape = Tape::new();
        let (x, s, l) = (tape.constant(x_hat.clone()), tape.constant(x_star.clone()), tape.constant(lambda.clone()));
        parts.push(match f(&x, &s, &l, weights, lambda_min, lambda_max) {
            Ok(v) => format!("{name}={:.6e}", v.item()),
            Err(e) => format!("{name}=failed({e})"),
        });
    }
    parts.join(" ")
}

/// PSNR in dB for images on a unit peak; `+∞` when the images coincide.
pub fn psnr(x_hat: &Tensor, x_star: &Tensor) -> Result<f64> {
    if x_hat.shape() != x_star.shape() {
        return Err(LtvError::shape("psnr", format!("{:?} vs {:?}", x_hat.shape(), x_star.shape())));
    }
    let mse = x_hat.data().iter().zip(x_star.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x_hat.len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// SSIM of two plain images.
pub fn ssim_value(x_hat: &Tensor, x_star: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    Ok(ssim(&tape.constant(x_hat.clone()), &tape.constant(x_star.clone()))?.item())
}
