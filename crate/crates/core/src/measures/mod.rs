//! Grids, discrete probability measures on them, and their moments.

mod ellipses;
mod grid;
pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ellipses::{
    generate_nested_ellipses, nested_ellipse_params, Ellipse, EllipseParams, ELLIPSE_SUPPORT_FLOOR,
};
pub use grid::{GridSpec, UniformGrid};
pub use io::{load_grid, load_measure, save_grid, save_measure, sidecar_path};

/// Support floor added to loaded and generated data.
pub const DEFAULT_SUPPORT_FLOOR: f64 = 1e-10;

/// Nonnegative weights over the bins of a grid, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    grid: UniformGrid,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Normalizes `raw` onto `grid`; see [`normalize`].
    pub fn new(grid: &UniformGrid, raw: Vec<f64>) -> Result<Self> {
        normalize(grid, raw, 0.0)
    }

    pub fn uniform(grid: &UniformGrid) -> Self {
        let n = grid.len();
        DiscreteMeasure {
            grid: grid.clone(),
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Unit mass on one bin.
    pub fn dirac(grid: &UniformGrid, index: usize) -> Result<Self> {
        if index >= grid.len() {
            return Err(Error::InvalidArgument(format!(
                "bin {index} outside grid of {} bins",
                grid.len()
            )));
        }
        let mut weights = vec![0.0; grid.len()];
        weights[index] = 1.0;
        Ok(DiscreteMeasure {
            grid: grid.clone(),
            weights,
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// True when every weight is strictly positive (interior of the simplex).
    pub fn is_interior(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }

    pub fn require_interior(&self) -> Result<()> {
        match self.weights.iter().position(|&w| w <= 0.0) {
            None => Ok(()),
            Some(i) => Err(Error::InvalidArgument(format!(
                "measure must be strictly positive, bin {i} has weight {}",
                self.weights[i]
            ))),
        }
    }

    /// Convex combination `t * self + (1 - t) * other`.
    pub fn mix(&self, t: f64, other: &DiscreteMeasure) -> Result<Self> {
        self.require_same_grid(other)?;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("mixing weight {t} outside [0, 1]")));
        }
        let raw = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| t * a + (1.0 - t) * b)
            .collect();
        normalize(&self.grid, raw, 0.0)
    }

    pub fn require_same_grid(&self, other: &DiscreteMeasure) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn moments(&self) -> Moments {
        moments_of(&self.grid, &self.weights)
    }

    /// Shannon entropy `-Σ w log w` (zero bins contribute nothing).
    pub fn entropy(&self) -> f64 {
        -self
            .weights
            .iter()
            .filter(|&&w| w > 0.0)
            .map(|&w| w * w.ln())
            .sum::<f64>()
    }

    pub fn l1_distance(&self, other: &DiscreteMeasure) -> Result<f64> {
        self.require_same_grid(other)?;
        Ok(self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }
}

/// Returns `(raw + floor) / Σ(raw + floor)` as a measure on `grid`.
pub fn normalize(grid: &UniformGrid, mut raw: Vec<f64>, floor: f64) -> Result<DiscreteMeasure> {
    if raw.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            found: raw.len(),
        });
    }
    if !(floor >= 0.0 && floor.is_finite()) {
        return Err(Error::InvalidArgument(format!("support floor {floor} must be >= 0")));
    }
    if let Some(i) = raw.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "weight {} at bin {i} is not a nonnegative number",
            raw[i]
        )));
    }
    let total: f64 = raw.iter().map(|w| w + floor).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateMeasure);
    }
    for w in raw.iter_mut() {
        *w = (*w + floor) / total;
    }
    Ok(DiscreteMeasure {
        grid: grid.clone(),
        weights: raw,
    })
}

/// Per-axis mean and variance (physical units) plus total mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub mass: f64,
}

impl Moments {
    pub fn std(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }
}

/// Moments of arbitrary nonnegative weights; mean and variance are mass-weighted.
pub fn moments_of(grid: &UniformGrid, weights: &[f64]) -> Moments {
    let ndim = grid.ndim();
    let mass: f64 = weights.iter().sum();
    let mut mean = vec![0.0; ndim];
    let mut variance = vec![0.0; ndim];
    if mass <= 0.0 {
        return Moments {
            mean,
            variance,
            mass,
        };
    }
    let dims = grid.dims();
    // Marginalize onto each axis first; the inner sums are then one-dimensional.
    for axis in 0..ndim {
        let inner: usize = dims[axis + 1..].iter().product();
        let d = dims[axis];
        let mut marginal = vec![0.0; d];
        for (index, w) in weights.iter().enumerate() {
            marginal[(index / inner) % d] += w;
        }
        let centers = grid.axis_centers(axis);
        let m = marginal.iter().zip(&centers).map(|(w, c)| w * c).sum::<f64>() / mass;
        let v = marginal
            .iter()
            .zip(&centers)
            .map(|(w, c)| w * (c - m).powi(2))
            .sum::<f64>()
            / mass;
        mean[axis] = m;
        variance[axis] = v.max(0.0);
    }
    Moments {
        mean,
        variance,
        mass,
    }
}

/// True when `mu ± 6σ` lies inside the grid box on every axis.
pub fn gaussian_fits_grid(mu: &[f64], sigma2: &[f64], grid: &UniformGrid) -> bool {
    (0..grid.ndim()).all(|a| {
        let half = 6.0 * sigma2[a].sqrt();
        mu[a] - half >= grid.lower()[a] && mu[a] + half <= grid.upper()[a]
    })
}

/// Axis-aligned Gaussian sampled at bin centers and normalized.
///
/// Logs a warning when the ±6σ window leaves the grid box; see [`gaussian_fits_grid`].
pub fn discretize_gaussian(mu: &[f64], sigma2: &[f64], grid: &UniformGrid) -> Result<DiscreteMeasure> {
    let ndim = grid.ndim();
    if mu.len() != ndim || sigma2.len() != ndim {
        return Err(Error::DimensionMismatch {
            expected: ndim,
            found: mu.len().min(sigma2.len()),
        });
    }
    if let Some(s) = sigma2.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument(format!("variance {s} must be positive")));
    }
    if !gaussian_fits_grid(mu, sigma2, grid) {
        log::warn!("gaussian N({mu:?}, {sigma2:?}) is truncated by the grid box");
    }
    let factors: Vec<Vec<f64>> = (0..ndim)
        .map(|a| {
            grid.axis_centers(a)
                .iter()
                .map(|c| (-(c - mu[a]).powi(2) / (2.0 * sigma2[a])).exp())
                .collect()
        })
        .collect();
    let raw = (0..grid.len())
        .map(|index| {
            let m = grid.unravel(index);
            (0..ndim).map(|a| factors[a][m[a]]).product()
        })
        .collect();
    normalize(grid, raw, 0.0)
}
