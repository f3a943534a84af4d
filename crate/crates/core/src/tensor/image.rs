//! Discrete image operators on plain tensors. The tape wraps these for the
//! forward pass and uses the matching adjoints in its backward rules.

use super::Tensor;
use crate::error::{LtvError, Result};

/// Forward-difference gradient with Neumann boundary.
///
/// Output is 2×H×W: channel 0 holds `x[i][j+1] - x[i][j]` (zero in the last
/// column), channel 1 holds `x[i+1][j] - x[i][j]` (zero in the last row).
pub fn grad2d(x: &Tensor) -> Result<Tensor> {
    let (h, w) = x
        .dims2()
        .map_err(|_| LtvError::shape("grad2d", format!("expected H×W, got {:?}", x.shape())))?;
    let src = x.data();
    let n = h * w;
    let mut out = vec![0.0; 2 * n];
    let (gx, gy) = out.split_at_mut(n);
    for i in 0..h {
        let row = &src[i * w..(i + 1) * w];
        for j in 0..w.saturating_sub(1) {
            gx[i * w + j] = row[j + 1] - row[j];
        }
        if i + 1 < h {
            let next = &src[(i + 1) * w..(i + 2) * w];
            for j in 0..w {
                gy[i * w + j] = next[j] - row[j];
            }
        }
    }
    Ok(Tensor::from_parts(vec![2, h, w], out))
}

/// Backward-difference divergence, the exact negative adjoint of [`grad2d`].
pub fn div2d(p: &Tensor) -> Result<Tensor> {
    let (h, w) = match p.shape()[..] {
        [2, h, w] => (h, w),
        _ => return Err(LtvError::shape("div2d", format!("expected 2×H×W, got {:?}", p.shape()))),
    };
    let n = h * w;
    let (px, py) = p.data().split_at(n);
    let mut out = vec![0.0; n];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let mut v = 0.0;
            if j + 1 < w {
                v += px[k];
            }
            if j > 0 {
                v -= px[k - 1];
            }
            if i + 1 < h {
                v += py[k];
            }
            if i > 0 {
                v -= py[k - w];
            }
            out[k] = v;
        }
    }
    Ok(Tensor::from_parts(vec![h, w], out))
}

/// Per-pixel Euclidean magnitude of a 2×H×W field.
pub fn pixel_l2_norm(p: &Tensor) -> Result<Tensor> {
    pixel_norm_eps(p, 0.0)
}

pub(crate) fn pixel_norm_eps(p: &Tensor, eps: f64) -> Result<Tensor> {
    let (h, w) = match p.shape()[..] {
        [2, h, w] => (h, w),
        _ => {
            return Err(LtvError::shape(
                "pixel_l2_norm",
                format!("expected 2×H×W, got {:?}", p.shape()),
            ))
        }
    };
    let n = h * w;
    let (a, b) = p.data().split_at(n);
    let e2 = eps * eps;
    let data = a.iter().zip(b).map(|(x, y)| (x * x + y * y + e2).sqrt()).collect();
    Ok(Tensor::from_parts(vec![h, w], data))
}

fn conv_dims(x: &Tensor, k: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (cin, h, w) = match x.shape()[..] {
        [c, h, w] => (c, h, w),
        [h, w] => (1, h, w),
        _ => return Err(LtvError::shape("conv2d", format!("input {:?}", x.shape()))),
    };
    let (cout, kcin, kh, kw) = match k.shape()[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => return Err(LtvError::shape("conv2d", format!("kernel {:?}", k.shape()))),
    };
    if kcin != cin {
        return Err(LtvError::shape(
            "conv2d",
            format!("kernel expects {kcin} input channels, input has {cin}"),
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(LtvError::shape("conv2d", format!("kernel extent {kh}×{kw} must be odd")));
    }
    if bias.len() != cout {
        return Err(LtvError::shape("conv2d", format!("bias has {} entries for {cout} outputs", bias.len())));
    }
    Ok((cin, h, w, cout, kh, kw))
}

/// Accumulate `dst[i][j] += wgt * src[i+dy][j+dx]` over the in-bounds region.
#[inline]
fn shifted_axpy(dst: &mut [f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize, wgt: f64) {
    let i0 = (-dy).max(0) as usize;
    let i1 = (h as isize - dy.max(0)).max(0) as usize;
    let j0 = (-dx).max(0) as usize;
    let j1 = (w as isize - dx.max(0)).max(0) as usize;
    if j0 >= j1 {
        return;
    }
    for i in i0..i1 {
        let si = (i as isize + dy) as usize;
        let d = &mut dst[i * w + j0..i * w + j1];
        let s = &src[si * w + (j0 as isize + dx) as usize..si * w + (j1 as isize + dx) as usize];
        for (a, b) in d.iter_mut().zip(s) {
            *a += wgt * b;
        }
    }
}

/// Inner product of `a[i][j]` with `b[i+dy][j+dx]` over the in-bounds region.
#[inline]
fn shifted_dot(a: &[f64], b: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let i0 = (-dy).max(0) as usize;
    let i1 = (h as isize - dy.max(0)).max(0) as usize;
    let j0 = (-dx).max(0) as usize;
    let j1 = (w as isize - dx.max(0)).max(0) as usize;
    if j0 >= j1 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in i0..i1 {
        let si = (i as isize + dy) as usize;
        let ra = &a[i * w + j0..i * w + j1];
        let rb = &b[si * w + (j0 as isize + dx) as usize..si * w + (j1 as isize + dx) as usize];
        acc += ra.iter().zip(rb).map(|(p, q)| p * q).sum::<f64>();
    }
    acc
}

/// Zero-padded "same" cross-correlation.
///
/// `x` is Cin×H×W (an H×W input is treated as one channel), `k` is
/// Cout×Cin×kh×kw with odd extents and `bias` has Cout entries.
pub fn conv2d(x: &Tensor, k: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (cin, h, w, cout, kh, kw) = conv_dims(x, k, bias)?;
    let n = h * w;
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![0.0; cout * n];
    for co in 0..cout {
        let dst = &mut out[co * n..(co + 1) * n];
        dst.fill(bias.data()[co]);
        for ci in 0..cin {
            let src = &x.data()[ci * n..(ci + 1) * n];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wgt = k.data()[((co * cin + ci) * kh + ky) * kw + kx];
                    if wgt != 0.0 {
                        shifted_axpy(dst, src, h, w, ky as isize - ry, kx as isize - rx, wgt);
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![cout, h, w], out))
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    bias: &Tensor,
    g: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (cin, h, w, cout, kh, kw) = conv_dims(x, k, bias)?;
    let n = h * w;
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut gx = vec![0.0; cin * n];
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; cout];
    for co in 0..cout {
        let go = &g.data()[co * n..(co + 1) * n];
        gb[co] = go.iter().sum();
        for ci in 0..cin {
            let src = &x.data()[ci * n..(ci + 1) * n];
            let dst = &mut gx[ci * n..(ci + 1) * n];
            for ky in 0..kh {
                for kx in 0..kw {
                    let (dy, dx) = (ky as isize - ry, kx as isize - rx);
                    let idx = ((co * cin + ci) * kh + ky) * kw + kx;
                    gk[idx] = shifted_dot(go, src, h, w, dy, dx);
                    let wgt = k.data()[idx];
                    if wgt != 0.0 {
                        shifted_axpy(dst, go, h, w, -dy, -dx, wgt);
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(k.shape().to_vec(), gk),
        Tensor::from_parts(bias.shape().to_vec(), gb),
    ))
}

fn last2(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    let r = t.rank();
    if r < 2 {
        return Err(LtvError::shape(op, format!("expected at least 2 dims, got {:?}", t.shape())));
    }
    let (h, w) = (t.shape()[r - 2], t.shape()[r - 1]);
    Ok((t.len() / (h * w), h, w))
}

/// 2×2 average pooling over the last two dimensions (both must be even).
pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let (b, h, w) = last2(x, "avg_pool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(LtvError::shape("avg_pool2", format!("odd extents in {:?}", x.shape())));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; b * ho * wo];
    let src = x.data();
    for c in 0..b {
        for i in 0..ho {
            for j in 0..wo {
                let base = c * h * w;
                let s = src[base + 2 * i * w + 2 * j]
                    + src[base + 2 * i * w + 2 * j + 1]
                    + src[base + (2 * i + 1) * w + 2 * j]
                    + src[base + (2 * i + 1) * w + 2 * j + 1];
                out[c * ho * wo + i * wo + j] = 0.25 * s;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = ho;
    shape[r - 1] = wo;
    Ok(Tensor::from_parts(shape, out))
}

/// Nearest-neighbour 2× upsampling over the last two dimensions.
pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (b, h, w) = last2(x, "upsample2")?;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; b * ho * wo];
    let src = x.data();
    for c in 0..b {
        for i in 0..ho {
            for j in 0..wo {
                out[c * ho * wo + i * wo + j] = src[c * h * w + (i / 2) * w + j / 2];
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = ho;
    shape[r - 1] = wo;
    Ok(Tensor::from_parts(shape, out))
}

/// Sum of each 2×2 block; the adjoint of [`upsample2`].
pub(crate) fn sum_pool2(x: &Tensor) -> Result<Tensor> {
    Ok(avg_pool2(x)?.scale(4.0))
}

/// Mean over every k×k window fully inside an H×W image.
pub fn box_filter_valid(x: &Tensor, k: usize) -> Result<Tensor> {
    let (h, w) = x.dims2()?;
    if k == 0 || k > h || k > w {
        return Err(LtvError::shape(
            "box_filter_valid",
            format!("window {k} does not fit image {h}×{w}"),
        ));
    }
    let (ho, wo) = (h - k + 1, w - k + 1);
    // Summed-area table keeps this O(HW) regardless of window size.
    let mut sat = vec![0.0; (h + 1) * (w + 1)];
    let src = x.data();
    for i in 0..h {
        let mut row = 0.0;
        for j in 0..w {
            row += src[i * w + j];
            sat[(i + 1) * (w + 1) + j + 1] = sat[i * (w + 1) + j + 1] + row;
        }
    }
    let inv = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; ho * wo];
    for i in 0..ho {
        for j in 0..wo {
            let s = sat[(i + k) * (w + 1) + j + k] - sat[i * (w + 1) + j + k] - sat[(i + k) * (w + 1) + j]
                + sat[i * (w + 1) + j];
            out[i * wo + j] = s * inv;
        }
    }
    Ok(Tensor::from_parts(vec![ho, wo], out))
}

/// Adjoint of [`box_filter_valid`]: spreads each window value back over its
/// k×k footprint in an `h`×`w` image.
pub(crate) fn box_filter_valid_adjoint(g: &Tensor, k: usize, h: usize, w: usize) -> Tensor {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let inv = 1.0 / (k * k) as f64;
    // 2D difference array, then prefix sums.
    let mut diff = vec![0.0; (h + 1) * (w + 1)];
    let gd = g.data();
    for i in 0..ho {
        for j in 0..wo {
            let v = gd[i * wo + j] * inv;
            diff[i * (w + 1) + j] += v;
            diff[i * (w + 1) + j + k] -= v;
            diff[(i + k) * (w + 1) + j] -= v;
            diff[(i + k) * (w + 1) + j + k] += v;
        }
    }
    for i in 0..=h {
        for j in 1..=w {
            diff[i * (w + 1) + j] += diff[i * (w + 1) + j - 1];
        }
    }
    for i in 1..=h {
        for j in 0..=w {
            diff[i * (w + 1) + j] += diff[(i - 1) * (w + 1) + j];
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        out[i * w..(i + 1) * w].copy_from_slice(&diff[i * (w + 1)..i * (w + 1) + w]);
    }
    Tensor::from_parts(vec![h, w], out)
}
