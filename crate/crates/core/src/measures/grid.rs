use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned uniform discretization of a box in one to three dimensions.
///
/// Bins are cell midpoints: center `i` on an axis is `lower + (i + 0.5) * spacing`.
/// Flat indices are row-major, the last axis varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct UniformGrid {
    dims: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    spacing: Vec<f64>,
}

/// On-disk form of a grid, `{"dims": [...], "lower": [...], "upper": [...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dims: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl TryFrom<GridSpec> for UniformGrid {
    type Error = Error;

    fn try_from(spec: GridSpec) -> Result<Self> {
        UniformGrid::new(spec.dims, spec.lower, spec.upper)
    }
}

impl From<UniformGrid> for GridSpec {
    fn from(grid: UniformGrid) -> Self {
        GridSpec {
            dims: grid.dims,
            lower: grid.lower,
            upper: grid.upper,
        }
    }
}

impl UniformGrid {
    pub fn new(dims: Vec<usize>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::InvalidGrid(format!(
                "expected 1 to 3 axes, got {}",
                dims.len()
            )));
        }
        if lower.len() != dims.len() || upper.len() != dims.len() {
            return Err(Error::InvalidGrid(
                "dims, lower and upper must have the same length".into(),
            ));
        }
        for axis in 0..dims.len() {
            if dims[axis] < 2 {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} has {} bins, need at least 2",
                    dims[axis]
                )));
            }
            if !(lower[axis].is_finite() && upper[axis].is_finite() && upper[axis] > lower[axis]) {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} bounds [{}, {}] are not an interval",
                    lower[axis], upper[axis]
                )));
            }
        }
        let spacing = (0..dims.len())
            .map(|axis| (upper[axis] - lower[axis]) / dims[axis] as f64)
            .collect();
        Ok(UniformGrid {
            dims,
            lower,
            upper,
            spacing,
        })
    }

    /// One-dimensional grid with `bins` cells on `[lower, upper]`.
    pub fn line(bins: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![bins], vec![lower], vec![upper])
    }

    /// Square `side × side` grid on `[lower, upper]²`.
    pub fn square(side: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![side, side], vec![lower; 2], vec![upper; 2])
    }

    /// Cube `side³` grid on `[lower, upper]³`.
    pub fn cube(side: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![side; 3], vec![lower; 3], vec![upper; 3])
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Total number of bins.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Bin centers along one axis.
    pub fn axis_centers(&self, axis: usize) -> Vec<f64> {
        (0..self.dims[axis])
            .map(|i| self.lower[axis] + (i as f64 + 0.5) * self.spacing[axis])
            .collect()
    }

    /// Multi-index of a flat row-major index.
    pub fn unravel(&self, mut index: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for axis in (0..self.ndim()).rev() {
            out[axis] = index % self.dims[axis];
            index /= self.dims[axis];
        }
        out
    }

    pub fn ravel(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    /// Physical coordinates of the center of a flat bin.
    pub fn center(&self, index: usize) -> [f64; 3] {
        let multi = self.unravel(index);
        let mut out = [0.0; 3];
        for axis in 0..self.ndim() {
            out[axis] = self.lower[axis] + (multi[axis] as f64 + 0.5) * self.spacing[axis];
        }
        out
    }

    /// Squared Euclidean distance between two bin centers.
    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        let (ci, cj) = (self.center(i), self.center(j));
        (0..self.ndim()).map(|a| (ci[a] - cj[a]).powi(2)).sum()
    }

    /// Flat index of the bin whose center is nearest to `point`.
    pub fn nearest_bin(&self, point: &[f64]) -> Result<usize> {
        if point.len() != self.ndim() {
            return Err(Error::DimensionMismatch {
                expected: self.ndim(),
                found: point.len(),
            });
        }
        let multi: Vec<usize> = (0..self.ndim())
            .map(|axis| {
                let t = ((point[axis] - self.lower[axis]) / self.spacing[axis]).floor();
                t.clamp(0.0, (self.dims[axis] - 1) as f64) as usize
            })
            .collect();
        Ok(self.ravel(&multi))
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.ndim()
            && (0..self.ndim()).all(|a| point[a] >= self.lower[a] && point[a] <= self.upper[a])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_and_centers() {
        let grid = UniformGrid::line(4, 0.0, 1.0).unwrap();
        assert_eq!(grid.spacing(), &[0.25]);
        assert_eq!(grid.axis_centers(0), vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(UniformGrid::line(1, 0.0, 1.0).is_err());
        assert!(UniformGrid::line(4, 1.0, 1.0).is_err());
        assert!(UniformGrid::new(vec![2; 4], vec![0.0; 4], vec![1.0; 4]).is_err());
        assert!(UniformGrid::new(vec![2, 2], vec![0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn ravel_roundtrip() {
        let grid = UniformGrid::new(vec![3, 4, 5], vec![0.0; 3], vec![1.0; 3]).unwrap();
        for index in 0..grid.len() {
            let m = grid.unravel(index);
            assert_eq!(grid.ravel(&m[..3]), index);
        }
        assert_eq!(grid.unravel(1), [0, 0, 1]);
    }

    #[test]
    fn json_shape() {
        let grid = UniformGrid::square(3, -1.0, 1.0).unwrap();
        let json = serde_json::to_string(&grid).unwrap();
        assert_eq!(json, r#"{"dims":[3,3],"lower":[-1.0,-1.0],"upper":[1.0,1.0]}"#);
        let back: UniformGrid = serde_json::from_str(&json).unwrap();
        assert_eq!(back, grid);
        assert!(serde_json::from_str::<UniformGrid>(r#"{"dims":[1],"lower":[0],"upper":[1]}"#).is_err());
        assert!(serde_json::from_str::<UniformGrid>(
            r#"{"dims":[2],"lower":[0],"upper":[1],"extra":1}"#
        )
        .is_err());
    }

    #[test]
    fn nearest_bin_clamps() {
        let grid = UniformGrid::line(10, 0.0, 1.0).unwrap();
        assert_eq!(grid.nearest_bin(&[0.55]).unwrap(), 5);
        assert_eq!(grid.nearest_bin(&[-3.0]).unwrap(), 0);
        assert_eq!(grid.nearest_bin(&[3.0]).unwrap(), 9);
    }
}
