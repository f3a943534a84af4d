//! Reverse-mode differentiation tape.
//!
//! Only values that depend on a parameter are recorded. Constants (including
//! everything computed from constants) live in their `Var` alone, so running
//! the same code with no parameters bound performs no recording at all.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::image::{self, box_filter_valid_adjoint, conv2d_backward, pixel_norm_eps, sum_pool2};
use super::Tensor;
use crate::error::{LtvError, Result};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Affine { scale: f64 },
    Clamp { lo: f64, hi: f64 },
    Tanh,
    Softplus,
    Sigmoid,
    Sqrt,
    Abs,
    Exp,
    Log,
    Square,
    Grad2d,
    Div2d,
    PixelNorm,
    ProjectBall,
    Conv2d,
    AvgPool2,
    Upsample2,
    BoxValid { k: usize },
    Sum,
    Mean,
    Std,
    MaxAll,
    SoftHistogram { centers: Vec<f64>, bandwidth: f64 },
    Reshape,
}

struct Operand {
    id: Option<usize>,
    value: Rc<Tensor>,
}

struct Node {
    op: Op,
    inputs: Vec<Operand>,
    out: Rc<Tensor>,
}

/// Ordered record of differentiable operations.
///
/// A tape supports exactly one [`Tape::backward`] call.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// A value flowing through a computation, optionally recorded on a tape.
#[derive(Clone)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: Option<usize>,
    value: Rc<Tensor>,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.value.shape()).finish()
    }
}

/// Leaf gradients produced by a backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` when the leaf does not influence the loss.
    pub fn get(&self, var: &Var<'_>) -> Option<&Tensor> {
        var.id.and_then(|id| self.grads.get(id)).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, with zeros substituted when it is unused.
    pub fn get_or_zeros(&self, var: &Var<'_>) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.value.shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register a trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        let value = Rc::new(value);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op: Op::Leaf, inputs: Vec::new(), out: value.clone() });
        Var { tape: self, id: Some(nodes.len() - 1), value }
    }

    /// Wrap a value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        Var { tape: self, id: None, value: Rc::new(value) }
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn record<'t>(&'t self, op: Op, inputs: &[&Var<'t>], out: Tensor, name: &'static str) -> Result<Var<'t>> {
        if !out.is_finite() {
            return Err(LtvError::NonFinite { op: name });
        }
        let out = Rc::new(out);
        if inputs.iter().all(|v| v.id.is_none()) {
            return Ok(Var { tape: self, id: None, value: out });
        }
        let operands = inputs.iter().map(|v| Operand { id: v.id, value: v.value.clone() }).collect();
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, inputs: operands, out: out.clone() });
        Ok(Var { tape: self, id: Some(nodes.len() - 1), value: out })
    }

    /// Run the reverse sweep from a scalar loss.
    pub fn backward(&self, loss: &Var<'_>) -> Result<Gradients> {
        if loss.value.len() != 1 {
            return Err(LtvError::NonScalarBackward(loss.value.shape().to_vec()));
        }
        if self.consumed.replace(true) {
            return Err(LtvError::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        let Some(root) = loss.id else {
            return Ok(Gradients { grads });
        };
        grads[root] = Some(Tensor::ones(loss.value.shape()));
        let mut leaves: Vec<Option<Tensor>> = vec![None; nodes.len()];
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Op::Leaf = node.op {
                leaves[id] = Some(g);
                continue;
            }
            let input_grads = vjp(node, &g)?;
            for (operand, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(src), Some(ig)) = (operand.id, ig) else { continue };
                match &mut grads[src] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

fn reduce_to(g: Tensor, target: &Tensor) -> Tensor {
    if target.is_scalar() && !g.is_scalar() {
        Tensor::scalar(g.sum())
    } else {
        g
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    a.zip_map(b, f).expect("shapes validated in forward pass")
}

/// Per-input vector-Jacobian products for one node.
fn vjp(node: &Node, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
    let inp = |i: usize| -> &Tensor { &node.inputs[i].value };
    let wants = |i: usize| node.inputs[i].id.is_some();
    let out = &*node.out;
    let grads = match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add => vec![
            wants(0).then(|| reduce_to(g.clone(), inp(0))),
            wants(1).then(|| reduce_to(g.clone(), inp(1))),
        ],
        Op::Sub => vec![
            wants(0).then(|| reduce_to(g.clone(), inp(0))),
            wants(1).then(|| reduce_to(g.scale(-1.0), inp(1))),
        ],
        Op::Mul => vec![
            wants(0).then(|| reduce_to(zip(g, inp(1), |g, b| g * b), inp(0))),
            wants(1).then(|| reduce_to(zip(g, inp(0), |g, a| g * a), inp(1))),
        ],
        Op::Div => vec![
            wants(0).then(|| reduce_to(zip(g, inp(1), |g, b| g / b), inp(0))),
            wants(1).then(|| {
                // d(a/b)/db = -(a/b)/b
                let gb = zip(&zip(g, out, |g, q| g * q), inp(1), |t, b| -t / b);
                reduce_to(gb, inp(1))
            }),
        ],
        Op::Affine { scale } => vec![Some(g.scale(*scale))],
        Op::Clamp { lo, hi } => {
            let (lo, hi) = (*lo, *hi);
            vec![Some(zip(g, inp(0), |g, x| if x >= lo && x <= hi { g } else { 0.0 }))]
        }
        Op::Tanh => vec![Some(zip(g, out, |g, y| g * (1.0 - y * y)))],
        Op::Softplus => vec![Some(zip(g, inp(0), |g, x| g * sigmoid(x)))],
        Op::Sigmoid => vec![Some(zip(g, out, |g, y| g * y * (1.0 - y)))],
        Op::Sqrt => vec![Some(zip(g, out, |g, y| if y > 0.0 { 0.5 * g / y } else { 0.0 }))],
        Op::Abs => vec![Some(zip(g, inp(0), |g, x| {
            if x > 0.0 {
                g
            } else if x < 0.0 {
                -g
            } else {
                0.0
            }
        }))],
        Op::Exp => vec![Some(zip(g, out, |g, y| g * y))],
        Op::Log => vec![Some(zip(g, inp(0), |g, x| g / x))],
        Op::Square => vec![Some(zip(g, inp(0), |g, x| 2.0 * g * x))],
        Op::Grad2d => vec![Some(image::div2d(g)?.scale(-1.0))],
        Op::Div2d => vec![Some(image::grad2d(g)?.scale(-1.0))],
        Op::PixelNorm => {
            let p = inp(0);
            let n = out.len();
            let mut gp = vec![0.0; 2 * n];
            for k in 0..n {
                let r = out.data()[k];
                if r > 0.0 {
                    let s = g.data()[k] / r;
                    gp[k] = s * p.data()[k];
                    gp[n + k] = s * p.data()[n + k];
                }
            }
            vec![Some(Tensor::from_parts(p.shape().to_vec(), gp))]
        }
        Op::ProjectBall => {
            let (q, lam) = (inp(0), inp(1));
            let n = lam.len();
            let (qd, gd) = (q.data(), g.data());
            let mut gq = vec![0.0; 2 * n];
            let mut gl = vec![0.0; n];
            for k in 0..n {
                let (q0, q1) = (qd[k], qd[n + k]);
                let (g0, g1) = (gd[k], gd[n + k]);
                let norm = (q0 * q0 + q1 * q1).sqrt();
                let d = norm.max(PROJ_GUARD);
                let l = lam.data()[k];
                if l >= d {
                    gq[k] = g0;
                    gq[n + k] = g1;
                } else {
                    let s = l / d;
                    let qg = q0 * g0 + q1 * g1;
                    gl[k] = qg / d;
                    if norm >= PROJ_GUARD {
                        let c = s * qg / (d * d);
                        gq[k] = s * g0 - c * q0;
                        gq[n + k] = s * g1 - c * q1;
                    } else {
                        gq[k] = s * g0;
                        gq[n + k] = s * g1;
                    }
                }
            }
            vec![
                Some(Tensor::from_parts(q.shape().to_vec(), gq)),
                Some(Tensor::from_parts(lam.shape().to_vec(), gl)),
            ]
        }
        Op::Conv2d => {
            let (gx, gk, gb) = conv2d_backward(inp(0), inp(1), inp(2), g)?;
            vec![wants(0).then_some(gx), wants(1).then_some(gk), wants(2).then_some(gb)]
        }
        Op::AvgPool2 => vec![Some(image::upsample2(g)?.scale(0.25))],
        Op::Upsample2 => vec![Some(sum_pool2(g)?)],
        Op::BoxValid { k } => {
            let (h, w) = inp(0).dims2()?;
            vec![Some(box_filter_valid_adjoint(g, *k, h, w))]
        }
        Op::Sum => vec![Some(Tensor::full(inp(0).shape(), g.item()))],
        Op::Mean => {
            let x = inp(0);
            vec![Some(Tensor::full(x.shape(), g.item() / x.len() as f64))]
        }
        Op::Std => {
            let x = inp(0);
            let sd = out.item();
            if sd == 0.0 {
                vec![Some(Tensor::zeros(x.shape()))]
            } else {
                let m = x.mean();
                let c = g.item() / (x.len() as f64 * sd);
                vec![Some(x.map(|v| c * (v - m)))]
            }
        }
        Op::MaxAll => {
            let x = inp(0);
            let mut gx = Tensor::zeros(x.shape());
            let arg = argmax(x.data());
            gx.data_mut()[arg] = g.item();
            vec![Some(gx)]
        }
        Op::SoftHistogram { centers, bandwidth } => {
            let x = inp(0);
            let inv = 1.0 / (bandwidth * bandwidth);
            let gx = x.map(|v| {
                centers
                    .iter()
                    .zip(g.data())
                    .map(|(&c, &gb)| {
                        let d = v - c;
                        gb * (-0.5 * d * d * inv).exp() * (-d * inv)
                    })
                    .sum()
            });
            vec![Some(gx)]
        }
        Op::Reshape => vec![Some(g.reshape(inp(0).shape())?)],
    };
    Ok(grads)
}

const PROJ_GUARD: f64 = 1e-12;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl<'t> Var<'t> {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    /// The single value of a scalar `Var`.
    pub fn item(&self) -> f64 {
        self.value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.id.is_some()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Same value with no link to the tape.
    pub fn detach(&self) -> Var<'t> {
        Var { tape: self.tape, id: None, value: self.value.clone() }
    }

    fn unary(&self, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let out = self.value.map(f);
        self.tape.record(op, &[self], out, name)
    }

    fn binary(&self, other: &Var<'t>, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let out = self.value.zip_map(&other.value, f).map_err(|e| match e {
            LtvError::Shape { msg, .. } => LtvError::Shape { op: name, msg },
            e => e,
        })?;
        self.tape.record(op, &[self, other], out, name)
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        if other.value.data().iter().any(|d| d.abs() < 1e-300) {
            return Err(LtvError::DivisionByZero { op: "div" });
        }
        self.binary(other, Op::Div, "div", |a, b| a / b)
    }

    /// `scale * self + offset`.
    pub fn affine(&self, scale: f64, offset: f64) -> Result<Var<'t>> {
        self.unary(Op::Affine { scale }, "affine", |v| scale * v + offset)
    }

    pub fn scale(&self, scale: f64) -> Result<Var<'t>> {
        self.affine(scale, 0.0)
    }

    pub fn offset(&self, offset: f64) -> Result<Var<'t>> {
        self.affine(1.0, offset)
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.affine(-1.0, 0.0)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.unary(Op::Clamp { lo, hi }, "clamp", |v| v.clamp(lo, hi))
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary(Op::Tanh, "tanh", f64::tanh)
    }

    pub fn softplus(&self) -> Result<Var<'t>> {
        self.unary(Op::Softplus, "softplus", softplus)
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary(Op::Sigmoid, "sigmoid", sigmoid)
    }

    pub fn sqrt(&self) -> Result<Var<'t>> {
        self.unary(Op::Sqrt, "sqrt", f64::sqrt)
    }

    pub fn abs(&self) -> Result<Var<'t>> {
        self.unary(Op::Abs, "abs", f64::abs)
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary(Op::Exp, "exp", f64::exp)
    }

    pub fn log(&self) -> Result<Var<'t>> {
        self.unary(Op::Log, "log", f64::ln)
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.unary(Op::Square, "square", |v| v * v)
    }

    pub fn grad2d(&self) -> Result<Var<'t>> {
        let out = image::grad2d(&self.value)?;
        self.tape.record(Op::Grad2d, &[self], out, "grad2d")
    }

    pub fn div2d(&self) -> Result<Var<'t>> {
        let out = image::div2d(&self.value)?;
        self.tape.record(Op::Div2d, &[self], out, "div2d")
    }

    /// Hard per-pixel magnitude of a 2×H×W field (subgradient 0 at the origin).
    pub fn pixel_norm(&self) -> Result<Var<'t>> {
        self.pixel_norm_smooth(0.0)
    }

    /// `sqrt(p0² + p1² + eps²)` per pixel.
    pub fn pixel_norm_smooth(&self, eps: f64) -> Result<Var<'t>> {
        let out = pixel_norm_eps(&self.value, eps)?;
        self.tape.record(Op::PixelNorm, &[self], out, "pixel_l2_norm")
    }

    /// Per-pixel projection of a 2×H×W field onto the ℓ2 ball of radius `radius`.
    pub fn project_l2_ball(&self, radius: &Var<'t>) -> Result<Var<'t>> {
        let (h, w) = radius.value.dims2()?;
        if self.value.shape() != [2, h, w] {
            return Err(LtvError::shape(
                "project_l2_ball",
                format!("field {:?} vs radius {:?}", self.value.shape(), radius.value.shape()),
            ));
        }
        if radius.value.data().iter().any(|&l| l < 0.0) {
            return Err(LtvError::InvalidArgument("negative projection radius".into()));
        }
        let n = h * w;
        let q = self.value.data();
        let mut out = vec![0.0; 2 * n];
        for k in 0..n {
            let (q0, q1) = (q[k], q[n + k]);
            let d = (q0 * q0 + q1 * q1).sqrt().max(PROJ_GUARD);
            let s = (radius.value.data()[k] / d).min(1.0);
            out[k] = q0 * s;
            out[n + k] = q1 * s;
        }
        let out = Tensor::from_parts(vec![2, h, w], out);
        self.tape.record(Op::ProjectBall, &[self, radius], out, "project_l2_ball")
    }

    pub fn conv2d(&self, kernel: &Var<'t>, bias: &Var<'t>) -> Result<Var<'t>> {
        let out = image::conv2d(&self.value, &kernel.value, &bias.value)?;
        self.tape.record(Op::Conv2d, &[self, kernel, bias], out, "conv2d")
    }

    pub fn avg_pool2(&self) -> Result<Var<'t>> {
        let out = image::avg_pool2(&self.value)?;
        self.tape.record(Op::AvgPool2, &[self], out, "avg_pool2")
    }

    pub fn upsample2(&self) -> Result<Var<'t>> {
        let out = image::upsample2(&self.value)?;
        self.tape.record(Op::Upsample2, &[self], out, "upsample2")
    }

    pub fn box_filter_valid(&self, k: usize) -> Result<Var<'t>> {
        let out = image::box_filter_valid(&self.value, k)?;
        self.tape.record(Op::BoxValid { k }, &[self], out, "box_filter_valid")
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let out = Tensor::scalar(self.value.sum());
        self.tape.record(Op::Sum, &[self], out, "sum")
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let out = Tensor::scalar(self.value.mean());
        self.tape.record(Op::Mean, &[self], out, "mean")
    }

    /// Population standard deviation; exactly 0 with zero gradient on constant input.
    pub fn std(&self) -> Result<Var<'t>> {
        let out = Tensor::scalar(self.value.std());
        self.tape.record(Op::Std, &[self], out, "std")
    }

    pub fn max_all(&self) -> Result<Var<'t>> {
        let out = Tensor::scalar(self.value.data()[argmax(self.value.data())]);
        self.tape.record(Op::MaxAll, &[self], out, "max_all")
    }

    /// Gaussian-kernel occupancy of each bin: `sum_i exp(-(x_i - c_b)² / 2h²)`.
    pub fn soft_histogram(&self, centers: &[f64], bandwidth: f64) -> Result<Var<'t>> {
        if centers.is_empty() || bandwidth <= 0.0 {
            return Err(LtvError::InvalidArgument("soft histogram needs bins and a positive bandwidth".into()));
        }
        let inv = 1.0 / (bandwidth * bandwidth);
        let data = centers
            .iter()
            .map(|&c| self.value.data().iter().map(|&v| (-0.5 * (v - c) * (v - c) * inv).exp()).sum())
            .collect();
        let out = Tensor::from_parts(vec![centers.len()], data);
        let op = Op::SoftHistogram { centers: centers.to_vec(), bandwidth };
        self.tape.record(op, &[self], out, "soft_histogram")
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.value.reshape(shape)?;
        self.tape.record(Op::Reshape, &[self], out, "reshape")
    }
}
