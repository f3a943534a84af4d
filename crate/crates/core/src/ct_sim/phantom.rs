//! Piecewise-constant phantoms built from ellipses and rectangles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LtvError, Result};
use crate::tensor::Tensor;

/// Intensity levels a primitive can take.
pub const INTENSITIES: [f64; 8] = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Ellipse,
    Rectangle,
}

/// One painted primitive. Coordinates are in pixels relative to the image
/// centre (`x` along columns, `y` along rows); `angle` is in radians.
#[derive(Clone, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub center: (f64, f64),
    pub axes: (f64, f64),
    pub angle: f64,
    pub intensity: f64,
    /// Amplitude of a fine stripe texture inside the primitive (0 = flat).
    pub texture: f64,
}

impl Primitive {
    /// Whether the point `(x, y)` lies inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.axes.0;
        let v = (-dx * s + dy * c) / self.axes.1;
        match self.shape {
            Shape::Ellipse => u * u + v * v <= 1.0,
            Shape::Rectangle => u.abs() <= 1.0 && v.abs() <= 1.0,
        }
    }

    fn texture_at(&self, x: f64, y: f64) -> f64 {
        if self.texture == 0.0 {
            return 0.0;
        }
        // Stripes with a 4-pixel period, oriented with the primitive.
        let (s, c) = self.angle.sin_cos();
        let u = (x - self.center.0) * c + (y - self.center.1) * s;
        self.texture * (std::f64::consts::PI * u / 2.0).sin()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub image: Tensor,
    pub primitives: Vec<Primitive>,
}

impl Phantom {
    pub fn is_textured(&self) -> bool {
        self.primitives.iter().any(|p| p.texture != 0.0)
    }
}

/// Pixel-centre coordinates of `(i, j)` relative to the image centre.
pub fn pixel_center(h: usize, w: usize, i: usize, j: usize) -> (f64, f64) {
    (j as f64 - (w as f64 - 1.0) / 2.0, i as f64 - (h as f64 - 1.0) / 2.0)
}

/// Paint primitives in order (later ones overwrite earlier ones) on a zero
/// background, then clamp to `[0, 1]`.
pub fn rasterize(h: usize, w: usize, primitives: &[Primitive]) -> Tensor {
    Tensor::from_fn2(h, w, |i, j| {
        let (x, y) = pixel_center(h, w, i, j);
        let mut v = 0.0;
        for p in primitives {
            if p.contains(x, y) {
                v = p.intensity + p.texture_at(x, y);
            }
        }
        v.clamp(0.0, 1.0)
    })
}

/// Deterministic random phantom.
///
/// The first primitive is always a centred body ellipse; the rest are
/// smaller ellipses and rectangles inside it. With `textured`, one or two of
/// the inner primitives carry a fine stripe texture.
pub fn make_phantom(h: usize, w: usize, n_primitives: usize, seed: u64, textured: bool) -> Result<Phantom> {
    if n_primitives == 0 {
        return Err(LtvError::InvalidArgument("a phantom needs at least one primitive".into()));
    }
    if h < 8 || w < 8 {
        return Err(LtvError::InvalidArgument(format!("phantom {h}×{w} is too small")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (h as f64, w as f64);
    let mut prims = Vec::with_capacity(n_primitives);
    let body_axes = (rng.random_range(0.36..0.46) * wf, rng.random_range(0.36..0.46) * hf);
    prims.push(Primitive {
        shape: Shape::Ellipse,
        center: (0.0, 0.0),
        axes: body_axes,
        angle: 0.0,
        intensity: INTENSITIES[rng.random_range(0..3)],
        texture: 0.0,
    });
    let n_textured = if textured && n_primitives > 1 { rng.random_range(1..=2).min(n_primitives - 1) } else { 0 };
    for k in 1..n_primitives {
        let shape = if rng.random_bool(0.3) { Shape::Rectangle } else { Shape::Ellipse };
        let ax = rng.random_range(0.05..0.2) * wf;
        let ay = rng.random_range(0.05..0.2) * hf;
        // Keep the centre well inside the body.
        let r = rng.random_range(0.0..0.55);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let center = (r * body_axes.0 * phi.cos(), r * body_axes.1 * phi.sin());
        let textured_here = k <= n_textured;
        prims.push(Primitive {
            shape,
            center,
            axes: if textured_here { (ax.max(0.12 * wf), ay.max(0.12 * hf)) } else { (ax, ay) },
            angle: rng.random_range(0.0..std::f64::consts::PI),
            intensity: INTENSITIES[rng.random_range(0..INTENSITIES.len())],
            texture: if textured_here { 0.1 } else { 0.0 },
        });
    }
    // Paint textured primitives last so their texture stays visible.
    prims[1..].sort_by_key(|p| p.texture != 0.0);
    let image = rasterize(h, w, &prims);
    Ok(Phantom { image, primitives: prims })
}
