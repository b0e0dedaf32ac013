//! The Gibbs kernel `K = exp(-C / ε)` as a linear operator on grid vectors.
//!
//! Two backends share one contract. The dense backend materializes the `n × n`
//! matrix for any cost `‖x - y‖^p` with `p ∈ (0, 2]`. The separable backend only
//! handles the squared Euclidean cost: there `K` factors as a tensor product of
//! per-axis 1D kernels, and one application is a sequence of 1D contractions
//! costing `n · Σ d_axis` multiply-adds instead of `n²`.
//!
//! Construction fails when the coupling between neighbouring bins would
//! underflow, since the kernel could then no longer move mass at all. Entries between distant bins may flush to zero;
//! every row keeps its unit diagonal, so `K v > 0` still holds for `v > 0`, and
//! scalings that overflow because of it are caught by the solvers.
//!
//! [`KernelOperator::apply_log_into`] evaluates `log(K e^v)` by log-sum-exp from
//! the cost itself, so it is exact even where entries of `K` underflow. The
//! cost is symmetric, hence `K = Kᵀ` and one log-domain product serves both.

use crate::error::{Error, Result};
use crate::measures::UniformGrid;

/// Largest grid accepted by the dense backend (2 GiB of `f64`).
pub const DEFAULT_DENSE_LIMIT: usize = 16384;

#[derive(Clone, Debug)]
enum Backend {
    Dense { matrix: Vec<f64>, p: f64 },
    /// Per-axis matrices, stored also transposed so both products read rows,
    /// and the per-axis `-C / ε` for the log domain.
    Separable {
        axes: Vec<Vec<f64>>,
        axes_t: Vec<Vec<f64>>,
        log_axes: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Debug)]
pub struct KernelOperator {
    grid: UniformGrid,
    epsilon: f64,
    backend: Backend,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Dense,
    Separable,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("epsilon {epsilon} must be positive")))
    }
}

fn check_underflow(exponent: f64, epsilon: f64) -> Result<()> {
    if (-exponent).exp() < f64::MIN_POSITIVE {
        Err(Error::EpsilonTooSmall { epsilon, exponent })
    } else {
        Ok(())
    }
}

impl KernelOperator {
    pub fn new(kind: KernelKind, grid: &UniformGrid, epsilon: f64) -> Result<Self> {
        match kind {
            KernelKind::Dense => Self::dense(grid, epsilon, 2.0),
            KernelKind::Separable => Self::separable(grid, epsilon),
        }
    }

    /// Dense kernel for the cost `‖x_i - x_j‖^p` between bin centers.
    pub fn dense(grid: &UniformGrid, epsilon: f64, p: f64) -> Result<Self> {
        Self::dense_with_limit(grid, epsilon, p, DEFAULT_DENSE_LIMIT)
    }

    pub fn dense_with_limit(grid: &UniformGrid, epsilon: f64, p: f64, limit: usize) -> Result<Self> {
        check_epsilon(epsilon)?;
        if !(p > 0.0 && p <= 2.0) {
            return Err(Error::InvalidArgument(format!("cost exponent {p} outside (0, 2]")));
        }
        let n = grid.len();
        if n > limit {
            return Err(Error::DenseLimit { limit, size: n });
        }
        let step = grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
        check_underflow(step.powf(p) / epsilon, epsilon)?;

        let cost = |d2: f64| if p == 2.0 { d2 } else { d2.powf(p / 2.0) };
        let centers: Vec<[f64; 3]> = (0..n).map(|i| grid.center(i)).collect();
        let ndim = grid.ndim();
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            let row = &mut matrix[i * n..(i + 1) * n];
            for (j, entry) in row.iter_mut().enumerate() {
                let d2: f64 = (0..ndim).map(|a| (centers[i][a] - centers[j][a]).powi(2)).sum();
                *entry = (-cost(d2) / epsilon).exp();
            }
        }
        Ok(KernelOperator {
            grid: grid.clone(),
            epsilon,
            backend: Backend::Dense { matrix, p },
        })
    }

    /// Tensor-product kernel for the squared Euclidean cost.
    pub fn separable(grid: &UniformGrid, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        let mut axes = Vec::with_capacity(grid.ndim());
        let mut log_axes = Vec::with_capacity(grid.ndim());
        for axis in 0..grid.ndim() {
            let d = grid.dims()[axis];
            let h = grid.spacing()[axis];
            check_underflow(h * h / epsilon, epsilon)?;
            let mut log_k = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    let dist = (i as f64 - j as f64) * h;
                    log_k[i * d + j] = -dist * dist / epsilon;
                }
            }
            axes.push(log_k.iter().map(|x| x.exp()).collect::<Vec<f64>>());
            log_axes.push(log_k);
        }
        let axes_t = axes
            .iter()
            .zip(grid.dims())
            .map(|(k, &d)| transposed(k, d))
            .collect();
        Ok(KernelOperator {
            grid: grid.clone(),
            epsilon,
            backend: Backend::Separable { axes, axes_t, log_axes },
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn kind(&self) -> KernelKind {
        match self.backend {
            Backend::Dense { .. } => KernelKind::Dense,
            Backend::Separable { .. } => KernelKind::Separable,
        }
    }

    /// Cost exponent `p`; the separable backend is always squared Euclidean.
    pub fn cost_exponent(&self) -> f64 {
        match self.backend {
            Backend::Dense { p, .. } => p,
            Backend::Separable { .. } => 2.0,
        }
    }

    /// Entry `K_ij`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.backend {
            Backend::Dense { matrix, .. } => matrix[i * self.len() + j],
            Backend::Separable { axes, .. } => {
                let (mi, mj) = (self.grid.unravel(i), self.grid.unravel(j));
                axes.iter()
                    .enumerate()
                    .map(|(a, k)| {
                        let d = self.grid.dims()[a];
                        k[mi[a] * d + mj[a]]
                    })
                    .product()
            }
        }
    }

    /// Scalar multiply-adds performed by one application.
    pub fn multiply_adds(&self) -> usize {
        let n = self.len();
        match self.backend {
            Backend::Dense { .. } => n * n,
            Backend::Separable { .. } => n * self.grid.dims().iter().sum::<usize>(),
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    pub fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.apply_transpose_into(v, &mut out)?;
        Ok(out)
    }

    /// `out = K v`.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(v, out)?;
        match &self.backend {
            Backend::Dense { matrix, .. } => dense_matvec(matrix, v, out),
            Backend::Separable { axes, .. } => self.separable_apply(axes, v, out),
        }
        Ok(())
    }

    /// `out = Kᵀ v`.
    pub fn apply_transpose_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(v, out)?;
        match &self.backend {
            Backend::Dense { matrix, .. } => dense_matvec_transpose(matrix, v, out),
            Backend::Separable { axes_t, .. } => self.separable_apply(axes_t, v, out),
        }
        Ok(())
    }

    /// `out = log(K exp(log_v))`, with `-∞` for zero entries.
    pub fn apply_log_into(&self, log_v: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(log_v, out)?;
        match &self.backend {
            Backend::Dense { p, .. } => self.dense_log_apply(*p, log_v, out),
            Backend::Separable { log_axes, .. } => {
                let dims = self.grid.dims();
                let mut current = log_v.to_vec();
                for (axis, log_k) in log_axes.iter().enumerate() {
                    let outer = dims[..axis].iter().product::<usize>();
                    let inner = dims[axis + 1..].iter().product::<usize>();
                    contract_axis_log(log_k, &current, out, outer, dims[axis], inner);
                    current.copy_from_slice(out);
                }
            }
        }
        Ok(())
    }

    pub fn apply_log(&self, log_v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.apply_log_into(log_v, &mut out)?;
        Ok(out)
    }

    fn dense_log_apply(&self, p: f64, log_v: &[f64], out: &mut [f64]) {
        let n = self.len();
        let mut terms = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            for (j, t) in terms.iter_mut().enumerate() {
                let d2 = self.grid.sq_dist(i, j);
                let cost = if p == 2.0 { d2 } else { d2.powf(p / 2.0) };
                *t = log_v[j] - cost / self.epsilon;
            }
            *o = log_sum_exp(&terms);
        }
    }

    fn check_len(&self, v: &[f64], out: &[f64]) -> Result<()> {
        let n = self.len();
        for found in [v.len(), out.len()] {
            if found != n {
                return Err(Error::DimensionMismatch { expected: n, found });
            }
        }
        Ok(())
    }

    fn separable_apply(&self, axes: &[Vec<f64>], v: &[f64], out: &mut [f64]) {
        let dims = self.grid.dims();
        let last = dims.len() - 1;
        let outer_of = |axis: usize| dims[..axis].iter().product::<usize>();
        let inner_of = |axis: usize| dims[axis + 1..].iter().product::<usize>();
        if last == 0 {
            contract_axis(&axes[0], v, out, 1, dims[0], 1);
            return;
        }
        let mut current = vec![0.0; v.len()];
        contract_axis(&axes[0], v, &mut current, 1, dims[0], inner_of(0));
        let mut scratch = vec![0.0; v.len()];
        for axis in 1..last {
            contract_axis(&axes[axis], &current, &mut scratch, outer_of(axis), dims[axis], inner_of(axis));
            std::mem::swap(&mut current, &mut scratch);
        }
        contract_axis(&axes[last], &current, out, outer_of(last), dims[last], 1);
    }
}

fn dense_matvec(matrix: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &matrix[i * n..(i + 1) * n];
        *o = row.iter().zip(v).map(|(k, x)| k * x).sum();
    }
}

fn dense_matvec_transpose(matrix: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    out.fill(0.0);
    for (i, &x) in v.iter().enumerate() {
        let row = &matrix[i * n..(i + 1) * n];
        for (o, k) in out.iter_mut().zip(row) {
            *o += k * x;
        }
    }
}

fn transposed(matrix: &[f64], d: usize) -> Vec<f64> {
    (0..d * d).map(|t| matrix[(t % d) * d + t / d]).collect()
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Log-domain counterpart of [`contract_axis`].
fn contract_axis_log(log_k: &[f64], input: &[f64], out: &mut [f64], outer: usize, d: usize, inner: usize) {
    let mut terms = vec![0.0; d];
    for o in 0..outer {
        for t in 0..inner {
            for i in 0..d {
                let row = &log_k[i * d..(i + 1) * d];
                for (j, term) in terms.iter_mut().enumerate() {
                    *term = row[j] + input[(o * d + j) * inner + t];
                }
                out[(o * d + i) * inner + t] = log_sum_exp(&terms);
            }
        }
    }
}

/// Four independent partial sums, so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Applies the `d × d` row-major `kernel` along the middle axis of an
/// `outer × d × inner` array.
fn contract_axis(kernel: &[f64], input: &[f64], out: &mut [f64], outer: usize, d: usize, inner: usize) {
    if inner == 1 {
        for o in 0..outer {
            let src = &input[o * d..(o + 1) * d];
            for i in 0..d {
                out[o * d + i] = dot(&kernel[i * d..(i + 1) * d], src);
            }
        }
        return;
    }
    for o in 0..outer {
        for i in 0..d {
            let base = (o * d + i) * inner;
            let dst = &mut out[base..base + inner];
            dst.fill(0.0);
            for j in 0..d {
                let kij = kernel[i * d + j];
                let src = &input[(o * d + j) * inner..(o * d + j + 1) * inner];
                for (t, s) in dst.iter_mut().zip(src) {
                    *t += kij * s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen::<f64>()).collect()
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    #[test]
    fn two_point_kernel() {
        let grid = UniformGrid::line(2, -0.5, 1.5).unwrap();
        let k = KernelOperator::dense(&grid, 1.0, 2.0).unwrap();
        let e = (-1.0f64).exp();
        assert_eq!(k.entry(0, 0), 1.0);
        assert!((k.entry(0, 1) - e).abs() < 1e-16);
        assert!((k.entry(1, 0) - e).abs() < 1e-16);
    }

    #[test]
    fn unit_diagonal() {
        let grid = UniformGrid::new(vec![5, 4], vec![0.0, -1.0], vec![1.0, 2.0]).unwrap();
        for k in [
            KernelOperator::dense(&grid, 0.3, 2.0).unwrap(),
            KernelOperator::dense(&grid, 0.3, 1.0).unwrap(),
            KernelOperator::separable(&grid, 0.3).unwrap(),
        ] {
            for i in 0..grid.len() {
                assert_eq!(k.entry(i, i), 1.0);
            }
        }
    }

    #[test]
    fn refuses_underflowing_epsilon() {
        // exp(-(1/64)² / 1e-9) is far below the smallest normal double.
        let grid = UniformGrid::line(64, 0.0, 1.0).unwrap();
        assert!(matches!(
            KernelOperator::dense(&grid, 1e-9, 2.0),
            Err(Error::EpsilonTooSmall { .. })
        ));
        assert!(matches!(
            KernelOperator::separable(&grid, 1e-9),
            Err(Error::EpsilonTooSmall { .. })
        ));
        // ln(MIN_POSITIVE) ≈ -708.4: the boundary sits near ε = h² / 708.4.
        let h2 = (1.0f64 / 64.0).powi(2);
        assert!(KernelOperator::separable(&grid, h2 / 700.0).is_ok());
        assert!(KernelOperator::separable(&grid, h2 / 720.0).is_err());
        assert!(KernelOperator::dense(&grid, h2 / 700.0, 2.0).is_ok());
        assert!(KernelOperator::dense(&grid, h2 / 720.0, 2.0).is_err());
    }

    #[test]
    fn far_field_flushes_to_zero() {
        let grid = UniformGrid::line(512, -8.0, 8.0).unwrap();
        for k in [
            KernelOperator::dense(&grid, 0.08, 2.0).unwrap(),
            KernelOperator::separable(&grid, 0.08).unwrap(),
        ] {
            assert_eq!(k.entry(0, 511), 0.0);
            assert!(k.entry(0, 1) > 0.9);
            let out = k.apply(&vec![1e-10; 512]).unwrap();
            assert!(out.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let grid = UniformGrid::line(8, 0.0, 1.0).unwrap();
        assert!(KernelOperator::dense(&grid, 0.0, 2.0).is_err());
        assert!(KernelOperator::dense(&grid, 1.0, 2.5).is_err());
        assert!(KernelOperator::dense(&grid, 1.0, 0.0).is_err());
        assert!(KernelOperator::separable(&grid, -1.0).is_err());
        assert!(matches!(
            KernelOperator::dense_with_limit(&grid, 1.0, 2.0, 4),
            Err(Error::DenseLimit { .. })
        ));
    }

    #[test]
    fn dense_kernel_is_psd() {
        let grid = UniformGrid::new(vec![6, 5], vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        for p in [0.5, 1.0, 1.5, 2.0] {
            let k = KernelOperator::dense(&grid, 0.2, p).unwrap();
            let n = grid.len();
            let m = nalgebra::DMatrix::from_fn(n, n, |i, j| k.entry(i, j));
            let min = m.symmetric_eigen().eigenvalues.min();
            assert!(min >= -1e-8, "p = {p}: smallest eigenvalue {min}");
        }
    }

    #[test]
    fn apply_zero_and_columns() {
        let grid = UniformGrid::line(9, 0.0, 1.0).unwrap();
        let k = KernelOperator::dense(&grid, 0.05, 2.0).unwrap();
        assert!(k.apply(&[0.0; 9]).unwrap().iter().all(|&x| x == 0.0));
        for j in 0..9 {
            let mut e = vec![0.0; 9];
            e[j] = 1.0;
            let col = k.apply(&e).unwrap();
            for (i, c) in col.iter().enumerate() {
                assert_eq!(*c, k.entry(i, j));
            }
        }
    }

    #[test]
    fn indicator_gives_gaussian_bump() {
        let grid = UniformGrid::square(16, 0.0, 1.0).unwrap();
        let k = KernelOperator::separable(&grid, 0.01).unwrap();
        let j = grid.ravel(&[5, 9]);
        let mut e = vec![0.0; grid.len()];
        e[j] = 1.0;
        let bump = k.apply(&e).unwrap();
        for (i, b) in bump.iter().enumerate() {
            let expected = (-grid.sq_dist(i, j) / 0.01).exp();
            assert!((b - expected).abs() <= 1e-15 * expected.max(1e-300), "{i}");
        }
    }

    #[test]
    fn symmetric_cost_apply_equals_transpose() {
        let grid = UniformGrid::new(vec![7, 6], vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        for k in [
            KernelOperator::dense(&grid, 0.1, 2.0).unwrap(),
            KernelOperator::dense(&grid, 0.1, 1.0).unwrap(),
            KernelOperator::separable(&grid, 0.1).unwrap(),
        ] {
            for seed in 0..10 {
                let v = random_vec(grid.len(), seed);
                let (a, b) = (k.apply(&v).unwrap(), k.apply_transpose(&v).unwrap());
                let diff = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                assert!(diff <= 1e-14, "{diff}");
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let grid = UniformGrid::line(4, 0.0, 1.0).unwrap();
        let k = KernelOperator::separable(&grid, 1.0).unwrap();
        assert!(matches!(k.apply(&[1.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn separable_matches_dense_2d_and_3d() {
        // Dense operator is the reference.
        let g2 = UniformGrid::square(64, 0.0, 1.0).unwrap();
        let (d2, s2) = (
            KernelOperator::dense(&g2, 0.01, 2.0).unwrap(),
            KernelOperator::separable(&g2, 0.01).unwrap(),
        );
        let v = random_vec(g2.len(), 3);
        assert!(max_rel(&s2.apply(&v).unwrap(), &d2.apply(&v).unwrap()) <= 1e-12);
        assert!(max_rel(&s2.apply_transpose(&v).unwrap(), &d2.apply_transpose(&v).unwrap()) <= 1e-12);

        let g3 = UniformGrid::cube(16, -1.0, 1.0).unwrap();
        let (d3, s3) = (
            KernelOperator::dense(&g3, 0.1, 2.0).unwrap(),
            KernelOperator::separable(&g3, 0.1).unwrap(),
        );
        let u = vec![1.0 / g3.len() as f64; g3.len()];
        assert!(max_rel(&s3.apply(&u).unwrap(), &d3.apply(&u).unwrap()) <= 1e-12);
    }

    #[test]
    fn multiply_add_counts() {
        let g2 = UniformGrid::square(32, 0.0, 1.0).unwrap();
        let n = g2.len() as f64;
        let s = KernelOperator::separable(&g2, 0.1).unwrap();
        assert_eq!(s.multiply_adds() as f64, 2.0 * n.powf(1.5));
        let g3 = UniformGrid::cube(8, 0.0, 1.0).unwrap();
        let n3 = g3.len() as f64;
        let s3 = KernelOperator::separable(&g3, 0.1).unwrap();
        assert!((s3.multiply_adds() as f64 - 3.0 * n3.powf(4.0 / 3.0)).abs() < 1e-6);
        let d = KernelOperator::dense(&g2, 0.1, 2.0).unwrap();
        assert_eq!(d.multiply_adds(), g2.len() * g2.len());
    }

    #[test]
    fn operator_is_shareable() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<KernelOperator>();
    }

    #[test]
    fn log_apply_matches_linear() {
        let grids = [
            (UniformGrid::line(64, -1.0, 2.0).unwrap(), 0.1),
            (UniformGrid::new(vec![7, 9], vec![0.0, -1.0], vec![1.0, 1.0]).unwrap(), 0.05),
            (UniformGrid::cube(5, 0.0, 1.0).unwrap(), 0.2),
        ];
        for (grid, eps) in &grids {
            let v = random_vec(grid.len(), 3);
            let log_v: Vec<f64> = v.iter().map(|x| x.ln()).collect();
            for k in [
                KernelOperator::dense(grid, *eps, 2.0).unwrap(),
                KernelOperator::dense(grid, *eps, 1.0).unwrap(),
                KernelOperator::separable(grid, *eps).unwrap(),
            ] {
                let linear: Vec<f64> = k.apply(&v).unwrap().iter().map(|x| x.ln()).collect();
                let log = k.apply_log(&log_v).unwrap();
                for (a, b) in log.iter().zip(&linear) {
                    assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn log_apply_survives_underflow() {
        let grid = UniformGrid::line(512, -8.0, 8.0).unwrap();
        let k = KernelOperator::separable(&grid, 0.02).unwrap();
        // A single bin at the left edge, seen from the right edge.
        let mut log_v = vec![f64::NEG_INFINITY; 512];
        log_v[0] = 0.0;
        let out = k.apply_log(&log_v).unwrap();
        let far = grid.sq_dist(0, 511);
        assert!((out[511] + far / 0.02).abs() <= 1e-9 * far / 0.02);
        assert_eq!(k.apply(&log_v.iter().map(|x| x.exp()).collect::<Vec<_>>()).unwrap()[511], 0.0);
        assert_eq!(k.apply_log(&vec![f64::NEG_INFINITY; 512]).unwrap()[3], f64::NEG_INFINITY);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn backends_agree_1d(n in 2usize..200, eps in 0.02f64..1.0, seed in 0u64..1000) {
            let grid = UniformGrid::line(n, -1.0, 2.0).unwrap();
            let d = KernelOperator::dense(&grid, eps, 2.0).unwrap();
            let s = KernelOperator::separable(&grid, eps).unwrap();
            let v = random_vec(n, seed);
            prop_assert!(max_rel(&s.apply(&v).unwrap(), &d.apply(&v).unwrap()) <= 1e-12);
        }

        #[test]
        fn backends_agree_2d(r in 2usize..24, c in 2usize..24, eps in 0.01f64..1.0, seed in 0u64..1000) {
            let grid = UniformGrid::new(vec![r, c], vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
            let d = KernelOperator::dense(&grid, eps, 2.0).unwrap();
            let s = KernelOperator::separable(&grid, eps).unwrap();
            let v = random_vec(grid.len(), seed);
            prop_assert!(max_rel(&s.apply(&v).unwrap(), &d.apply(&v).unwrap()) <= 1e-12);
        }

        #[test]
        fn positivity_preserved(n in 2usize..100, eps in 0.01f64..1.0, hot in 0usize..100) {
            let grid = UniformGrid::line(n, 0.0, 1.0).unwrap();
            let k = KernelOperator::separable(&grid, eps).unwrap();
            let mut v = vec![0.0; n];
            v[hot % n] = 1e-3;
            prop_assert!(k.apply(&v).unwrap().iter().all(|&x| x > 0.0));
        }
    }
}
