//! Synthetic nested-ellipse images on the unit square.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{normalize, DiscreteMeasure, UniformGrid, DEFAULT_SUPPORT_FLOOR};
use crate::error::{Error, Result};

pub const ELLIPSE_SUPPORT_FLOOR: f64 = DEFAULT_SUPPORT_FLOOR;

const OUTER_RADIUS: (f64, f64) = (0.25, 0.45);
const INNER_RADIUS: (f64, f64) = (0.08, 0.18);

/// One axis-aligned ellipse outline, in pixel units (column `x`, row `y`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    /// Whether the pixel centered at `(x, y)` lies on the one-pixel-thick outline.
    ///
    /// Uses the first-order distance `|F| / |∇F|` to the level set `F = 0`.
    fn on_outline(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let f = (dx / self.rx).powi(2) + (dy / self.ry).powi(2) - 1.0;
        let grad = (2.0 * dx / (self.rx * self.rx)).hypot(2.0 * dy / (self.ry * self.ry));
        grad > 0.0 && f.abs() / grad <= 0.5
    }

    fn mask(&self, side: usize) -> Vec<bool> {
        (0..side * side)
            .map(|p| {
                let (row, col) = (p / side, p % side);
                self.on_outline(col as f64 + 0.5, row as f64 + 0.5)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipseParams {
    pub outer: Ellipse,
    pub inner: Ellipse,
}

impl EllipseParams {
    pub fn outer_mask(&self, side: usize) -> Vec<bool> {
        self.outer.mask(side)
    }

    pub fn inner_mask(&self, side: usize) -> Vec<bool> {
        self.inner.mask(side)
    }
}

fn draw_params(count: usize, side: usize, seed: u64) -> Vec<EllipseParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = side as f64;
    (0..count)
        .map(|t| {
            let frac = if count > 1 { t as f64 / (count - 1) as f64 } else { 0.0 };
            // Outer center drifts along the diagonal, top-left quarter to bottom-right.
            let c = s * (0.45 + 0.1 * frac);
            let outer = Ellipse {
                cx: c,
                cy: c,
                rx: s * rng.gen_range(OUTER_RADIUS.0..OUTER_RADIUS.1),
                ry: s * rng.gen_range(OUTER_RADIUS.0..OUTER_RADIUS.1),
            };
            let (rx, ry) = (
                s * rng.gen_range(INNER_RADIUS.0..INNER_RADIUS.1),
                s * rng.gen_range(INNER_RADIUS.0..INNER_RADIUS.1),
            );
            let slack = 0.5 * (outer.rx.min(outer.ry) - rx.max(ry) - 1.0).max(0.0);
            let (ox, oy) = if slack > 0.0 {
                (rng.gen_range(-slack..=slack), rng.gen_range(-slack..=slack))
            } else {
                (0.0, 0.0)
            };
            let inner = Ellipse {
                cx: c + ox,
                cy: c + oy,
                rx,
                ry,
            };
            EllipseParams { outer, inner }
        })
        .collect()
}

/// Parameters used by [`generate_nested_ellipses`] for the same arguments.
pub fn nested_ellipse_params(count: usize, side: usize, seed: u64) -> Vec<EllipseParams> {
    draw_params(count, side, seed)
}

/// `count` images of two nested ellipse outlines on a `side × side` grid over `[0, 1]²`.
///
/// Rows are the first grid axis. Each image carries the default support floor.
pub fn generate_nested_ellipses(count: usize, side: usize, seed: u64) -> Result<Vec<DiscreteMeasure>> {
    if side < 16 {
        return Err(Error::InvalidArgument(format!("image side {side} < 16")));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("ellipse count must be >= 1".into()));
    }
    let grid = UniformGrid::square(side, 0.0, 1.0)?;
    draw_params(count, side, seed)
        .iter()
        .map(|p| {
            let (outer, inner) = (p.outer_mask(side), p.inner_mask(side));
            let raw = outer
                .iter()
                .zip(&inner)
                .map(|(&a, &b)| if a || b { 1.0 } else { 0.0 })
                .collect();
            normalize(&grid, raw, ELLIPSE_SUPPORT_FLOOR)
        })
        .collect()
}
