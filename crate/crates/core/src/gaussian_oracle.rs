//! Closed-form barycenters of univariate Gaussians under three entropic
//! divergences, used as ground truth for the grid solvers.
//!
//! With `ε = 2ε'²` and inputs `N(μ_k, σ_k²)` weighted by `w_k`, the barycenter is
//! `N(Σ w_k μ_k, S²)` where `S²` solves
//!
//! ```text
//! Σ w_k √(ε'⁴ + 4σ_k² S²) = RHS(S²)
//!   lebesgue:  -ε'² + 2S²
//!   product:    ε'² + 2S²      (Dirac when ε'² ≥ Σ w_k σ_k²)
//!   debiased:   √(ε'⁴ + 4S⁴)
//! ```
//!
//! Roots are found by bisection on brackets where the sign change is known.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{discretize_gaussian, DiscreteMeasure, UniformGrid};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const MAX_BISECTIONS: usize = 400;
const MAX_EXPANSIONS: usize = 200;
const PRODUCT_DELTA: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Lebesgue,
    Product,
    Debiased,
}

impl OracleKind {
    pub const ALL: [OracleKind; 3] = [OracleKind::Lebesgue, OracleKind::Product, OracleKind::Debiased];

    pub fn name(self) -> &'static str {
        match self {
            OracleKind::Lebesgue => "lebesgue",
            OracleKind::Product => "product",
            OracleKind::Debiased => "debiased",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianBarycenterSpec {
    pub mus: Vec<f64>,
    pub sigma2s: Vec<f64>,
    pub weights: Vec<f64>,
    pub epsilon: f64,
    pub kind: OracleKind,
}

impl GaussianBarycenterSpec {
    pub fn new(mus: Vec<f64>, sigma2s: Vec<f64>, weights: Vec<f64>, epsilon: f64, kind: OracleKind) -> Result<Self> {
        let spec = GaussianBarycenterSpec {
            mus,
            sigma2s,
            weights,
            epsilon,
            kind,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.mus.len();
        if k == 0 {
            return Err(Error::InvalidArgument("at least one Gaussian is required".into()));
        }
        for len in [self.sigma2s.len(), self.weights.len()] {
            if len != k {
                return Err(Error::DimensionMismatch { expected: k, found: len });
            }
        }
        if self.mus.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("means must be finite".into()));
        }
        if self.sigma2s.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("variances must be positive".into()));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("weights must be nonnegative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }

    /// `ε'² = ε / 2`.
    pub fn eps_prime2(&self) -> f64 {
        self.epsilon / 2.0
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.mus).map(|(w, m)| w * m).sum()
    }

    /// `σ̄² = Σ w_k σ_k²`.
    pub fn mean_variance(&self) -> f64 {
        self.weights.iter().zip(&self.sigma2s).map(|(w, s)| w * s).sum()
    }

    pub fn with_kind(&self, kind: OracleKind) -> Self {
        GaussianBarycenterSpec { kind, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub kind: OracleKind,
    pub mean: f64,
    pub variance: f64,
    pub is_dirac: bool,
    /// Final bisection interval on `S²`; `None` in the Dirac regime.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bracket: Option<(f64, f64)>,
    /// `|f(S²)|` at the returned variance.
    pub residual: f64,
}

/// `f(S²) = Σ w_k √(ε'⁴ + 4σ_k² S²) - RHS(S²)`.
pub fn variance_equation(kind: OracleKind, s2: f64, sigma2s: &[f64], weights: &[f64], eps_prime2: f64) -> f64 {
    let e4 = eps_prime2 * eps_prime2;
    let lhs: f64 = sigma2s
        .iter()
        .zip(weights)
        .map(|(s, w)| w * (e4 + 4.0 * s * s2).sqrt())
        .sum();
    let rhs = match kind {
        OracleKind::Lebesgue => -eps_prime2 + 2.0 * s2,
        OracleKind::Product => eps_prime2 + 2.0 * s2,
        OracleKind::Debiased => (e4 + 4.0 * s2 * s2).sqrt(),
    };
    lhs - rhs
}

/// Bisection for a root of `f` on `[lo, hi]` given `f(lo) ≥ 0 ≥ f(hi)`.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

fn bracket_failure(kind: OracleKind, lo: f64, hi: f64, f: &impl Fn(f64) -> f64) -> Error {
    Error::BracketFailure {
        kind: kind.name(),
        lo,
        hi,
        f_lo: f(lo),
        f_hi: f(hi),
    }
}

pub fn solve_variance(spec: &GaussianBarycenterSpec) -> Result<OracleResult> {
    spec.validate()?;
    let kind = spec.kind;
    let e2 = spec.eps_prime2();
    let sbar2 = spec.mean_variance();
    let f = |s2: f64| variance_equation(kind, s2, &spec.sigma2s, &spec.weights, e2);
    let mean = spec.mean();

    let (lo, hi) = match kind {
        OracleKind::Product if e2 >= sbar2 => {
            return Ok(OracleResult {
                kind,
                mean,
                variance: 0.0,
                is_dirac: true,
                bracket: None,
                residual: 0.0,
            });
        }
        OracleKind::Lebesgue => {
            // f(0) = 2ε'² > 0 and f → -∞.
            let mut hi = sbar2 + 2.0 * e2 + 1.0;
            let mut expansions = 0;
            while f(hi) >= 0.0 {
                expansions += 1;
                if expansions > MAX_EXPANSIONS {
                    return Err(bracket_failure(kind, 0.0, hi, &f));
                }
                hi *= 2.0;
            }
            (0.0, hi)
        }
        OracleKind::Product => {
            // S² = 0 is always a root; step past it to where f > 0.
            let mut delta = PRODUCT_DELTA * sbar2;
            if !(f(delta) > 0.0) {
                delta *= 1e-4;
            }
            if !(f(delta) > 0.0) || f(sbar2) > 0.0 {
                return Err(bracket_failure(kind, delta, sbar2, &f));
            }
            (delta, sbar2)
        }
        OracleKind::Debiased => {
            let lo = spec.sigma2s.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = spec.sigma2s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                (lo, hi)
            } else {
                if f(lo) < 0.0 || f(hi) > 0.0 {
                    return Err(bracket_failure(kind, lo, hi, &f));
                }
                (lo, hi)
            }
        }
    };
    let (lo, hi) = bisect(f, lo, hi);
    // Take whichever end has the smaller residual.
    let variance = if f(lo).abs() <= f(hi).abs() { lo } else { hi };
    Ok(OracleResult {
        kind,
        mean,
        variance,
        is_dirac: false,
        bracket: Some((lo, hi)),
        residual: f(variance).abs(),
    })
}

/// Variance of the unregularized barycenter, `(Σ w_k σ_k)²`.
pub fn classical_variance(sigma2s: &[f64], weights: &[f64]) -> f64 {
    let s: f64 = sigma2s.iter().zip(weights).map(|(s, w)| w * s.sqrt()).sum();
    s * s
}

/// The oracle barycenter sampled on a 1D grid: a discretized Gaussian, or a
/// one-hot vector at the bin nearest the mean in the Dirac regime.
pub fn oracle_measure(spec: &GaussianBarycenterSpec, grid: &UniformGrid) -> Result<DiscreteMeasure> {
    if grid.ndim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "oracle measures live on 1D grids, got {} axes",
            grid.ndim()
        )));
    }
    let result = solve_variance(spec)?;
    if result.is_dirac {
        if !grid.contains(&[result.mean]) {
            return Err(Error::InvalidArgument(format!(
                "Dirac at {} lies outside the grid",
                result.mean
            )));
        }
        DiscreteMeasure::dirac(grid, grid.nearest_bin(&[result.mean])?)
    } else {
        discretize_gaussian(&[result.mean], &[result.variance], grid)
    }
}
