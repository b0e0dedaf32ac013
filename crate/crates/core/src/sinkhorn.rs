//! Pairwise entropic OT with the uniform reference, the symmetric
//! (autocorrelation) fixed point, and the Sinkhorn divergence.
//!
//! All values use the uniform-reference convention: the plan is
//! `π = diag(a) K diag(b)` and the dual potentials are `f = ε log(n a)`,
//! `g = ε log(n b)`. The divergence
//! `S(α, β) = OT(α, β) - (OT(α, α) + OT(β, β)) / 2` does not depend on that
//! choice of reference, so computing it this way is exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelOperator;
use crate::measures::DiscreteMeasure;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Marginal tolerance used for the solves inside [`divergence_gradient_check`].
pub const GRADIENT_CHECK_TOL: f64 = 1e-12;
pub const GRADIENT_CHECK_STEP: f64 = 1e-5;

/// Scalings of the plan `π = diag(a) K diag(b)`.
#[derive(Clone, Debug)]
pub struct PairScalings {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub iterations: usize,
    /// `‖a ⊙ K b - α‖₁` at return; the β-marginal is exact by construction.
    pub marginal_error: f64,
    pub converged: bool,
}

impl PairScalings {
    /// Materializes the plan, row-major `n × n`. Only sensible for small grids.
    pub fn plan(&self, kernel: &KernelOperator) -> Vec<f64> {
        let n = self.a.len();
        let mut plan = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                plan[i * n + j] = self.a[i] * kernel.entry(i, j) * self.b[j];
            }
        }
        plan
    }
}

/// Symmetric scaling `c` with `c ⊙ K c = α`.
#[derive(Clone, Debug)]
pub struct SymScaling {
    pub c: Vec<f64>,
    pub iterations: usize,
    /// `‖c ⊙ K c - α‖₁` at return.
    pub residual: f64,
    pub converged: bool,
    /// Residual after each iteration.
    pub history: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceValue {
    pub ot_ab: f64,
    pub ot_aa: f64,
    pub ot_bb: f64,
    pub sdiv: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheck {
    pub analytic: f64,
    pub numeric: f64,
    pub converged: bool,
}

impl GradientCheck {
    /// `|analytic - numeric| / max(1, |analytic|)`.
    pub fn relative_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(1.0)
    }
}

fn check_on_kernel(measure: &DiscreteMeasure, kernel: &KernelOperator) -> Result<()> {
    if measure.grid() == kernel.grid() {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")))
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Alternating scaling `a ← α / K b`, `b ← β / Kᵀ a` from `b = 1`.
///
/// Stops once `‖a ⊙ K b - α‖₁ ≤ tol`, or after `max_iter` iterations with
/// `converged = false`.
pub fn sinkhorn_pair(
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    kernel: &KernelOperator,
    tol: f64,
    max_iter: usize,
) -> Result<PairScalings> {
    check_on_kernel(alpha, kernel)?;
    check_on_kernel(beta, kernel)?;
    check_tol(tol)?;
    let (alpha, beta) = (alpha.weights(), beta.weights());
    let n = alpha.len();
    let mut a = vec![0.0; n];
    let mut b = vec![1.0; n];
    let mut kb = kernel.apply(&b)?;
    let mut kta = vec![0.0; n];
    let mut marginal_error = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        for i in 0..n {
            a[i] = alpha[i] / kb[i];
        }
        kernel.apply_transpose_into(&a, &mut kta)?;
        for j in 0..n {
            b[j] = beta[j] / kta[j];
        }
        iterations += 1;
        if !(all_finite(&a) && all_finite(&b)) {
            return Err(Error::ScalingBlowUp { iteration: iterations });
        }
        kernel.apply_into(&b, &mut kb)?;
        marginal_error = (0..n).map(|i| (a[i] * kb[i] - alpha[i]).abs()).sum();
        if marginal_error <= tol {
            break;
        }
    }
    Ok(PairScalings {
        a,
        b,
        iterations,
        marginal_error,
        converged: marginal_error <= tol,
    })
}

/// Uniform-reference OT value at the given scalings (the dual objective).
///
/// Equals `ε(⟨α, log a⟩ + ⟨β, log b⟩) + 2ε log n` whenever the plan has unit
/// mass, which [`sinkhorn_pair`] guarantees through its final β-update. The
/// mass term `-ε(⟨a, K b⟩ - 1)` is included so that the value is a lower bound
/// with an error quadratic in the marginal violation.
pub fn ot_value(
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    scalings: &PairScalings,
    kernel: &KernelOperator,
) -> Result<f64> {
    check_on_kernel(alpha, kernel)?;
    check_on_kernel(beta, kernel)?;
    let (a, b) = (&scalings.a, &scalings.b);
    if let Some(index) = a.iter().chain(b.iter()).position(|&x| !(x > 0.0)) {
        return Err(Error::ZeroScaling { index: index % a.len() });
    }
    let eps = kernel.epsilon();
    let n = a.len() as f64;
    let kb = kernel.apply(b)?;
    let mass: f64 = a.iter().zip(&kb).map(|(x, y)| x * y).sum();
    let cross: f64 = dot_log(alpha.weights(), a) + dot_log(beta.weights(), b);
    Ok(eps * (cross - (mass - 1.0)) + 2.0 * eps * n.ln())
}

fn dot_log(weights: &[f64], scaling: &[f64]) -> f64 {
    weights.iter().zip(scaling).map(|(w, s)| w * s.ln()).sum()
}

/// Damped fixed point `c ← sqrt(c ⊙ α / K c)` from `c = 1`.
pub fn sinkhorn_symmetric(
    alpha: &DiscreteMeasure,
    kernel: &KernelOperator,
    tol: f64,
    max_iter: usize,
) -> Result<SymScaling> {
    check_on_kernel(alpha, kernel)?;
    check_tol(tol)?;
    let alpha = alpha.weights();
    let n = alpha.len();
    let mut c = vec![1.0; n];
    let mut kc = kernel.apply(&c)?;
    let mut residual = f64::INFINITY;
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        for i in 0..n {
            c[i] = (c[i] * alpha[i] / kc[i]).sqrt();
        }
        iterations += 1;
        if !all_finite(&c) {
            return Err(Error::ScalingBlowUp { iteration: iterations });
        }
        kernel.apply_into(&c, &mut kc)?;
        residual = (0..n).map(|i| (c[i] * kc[i] - alpha[i]).abs()).sum();
        history.push(residual);
        if residual <= tol {
            break;
        }
    }
    Ok(SymScaling {
        c,
        iterations,
        residual,
        converged: residual <= tol,
        history,
    })
}

/// `OT(α, α)` from the symmetric scaling: `2ε⟨α, log(n c)⟩` at the fixed point,
/// with the same mass correction as [`ot_value`].
pub fn symmetric_ot_value(alpha: &DiscreteMeasure, sym: &SymScaling, kernel: &KernelOperator) -> Result<f64> {
    check_on_kernel(alpha, kernel)?;
    if let Some(index) = sym.c.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::ZeroScaling { index });
    }
    let eps = kernel.epsilon();
    let n = sym.c.len() as f64;
    let kc = kernel.apply(&sym.c)?;
    let mass: f64 = sym.c.iter().zip(&kc).map(|(x, y)| x * y).sum();
    Ok(eps * (2.0 * dot_log(alpha.weights(), &sym.c) - (mass - 1.0)) + 2.0 * eps * n.ln())
}

/// `⟨c, K c'⟩` for two symmetric scalings; at most one when both are exact.
pub fn cross_autocorrelation(c: &[f64], c_prime: &[f64], kernel: &KernelOperator) -> Result<f64> {
    let kc = kernel.apply(c_prime)?;
    Ok(c.iter().zip(&kc).map(|(x, y)| x * y).sum())
}

/// Everything computed on the way to `S(α, β)`.
#[derive(Clone, Debug)]
pub struct DivergenceSolve {
    pub value: DivergenceValue,
    pub pair: PairScalings,
    pub sym_alpha: SymScaling,
    pub sym_beta: SymScaling,
}

pub fn sinkhorn_divergence_solve(
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    kernel: &KernelOperator,
    tol: f64,
    max_iter: usize,
) -> Result<DivergenceSolve> {
    let pair = sinkhorn_pair(alpha, beta, kernel, tol, max_iter)?;
    let sym_alpha = sinkhorn_symmetric(alpha, kernel, tol, max_iter)?;
    let sym_beta = sinkhorn_symmetric(beta, kernel, tol, max_iter)?;
    let ot_ab = ot_value(alpha, beta, &pair, kernel)?;
    let ot_aa = symmetric_ot_value(alpha, &sym_alpha, kernel)?;
    let ot_bb = symmetric_ot_value(beta, &sym_beta, kernel)?;
    let converged = pair.converged && sym_alpha.converged && sym_beta.converged;
    if !converged {
        log::warn!("sinkhorn divergence solve hit max_iter = {max_iter} before tol = {tol:e}");
    }
    Ok(DivergenceSolve {
        value: DivergenceValue {
            ot_ab,
            ot_aa,
            ot_bb,
            sdiv: ot_ab - 0.5 * (ot_aa + ot_bb),
            converged,
        },
        pair,
        sym_alpha,
        sym_beta,
    })
}

/// `S(α, β)` with the default iteration cap.
pub fn sinkhorn_divergence(
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    kernel: &KernelOperator,
    tol: f64,
) -> Result<DivergenceValue> {
    Ok(sinkhorn_divergence_solve(alpha, beta, kernel, tol, DEFAULT_MAX_ITER)?.value)
}

/// Directional derivative of `S(α, ·)` at `β` along a zero-sum `direction`,
/// computed from the potentials (`⟨g - h_β, direction⟩`) and by central
/// differences with step [`GRADIENT_CHECK_STEP`].
pub fn divergence_gradient_check(
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    kernel: &KernelOperator,
    direction: &[f64],
) -> Result<GradientCheck> {
    let n = beta.len();
    if direction.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: direction.len(),
        });
    }
    let total: f64 = direction.iter().sum();
    let size: f64 = direction.iter().map(|x| x.abs()).sum();
    if total.abs() > 1e-12 * size.max(1e-300) {
        return Err(Error::InvalidArgument(format!(
            "direction must sum to zero, sums to {total:e}"
        )));
    }
    let t = GRADIENT_CHECK_STEP;
    let shifted = |sign: f64| -> Result<DiscreteMeasure> {
        let raw: Vec<f64> = beta
            .weights()
            .iter()
            .zip(direction)
            .map(|(b, d)| b + sign * t * d)
            .collect();
        if raw.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::LeavesSimplex { step: t });
        }
        crate::measures::normalize(beta.grid(), raw, 0.0)
    };
    let (plus, minus) = (shifted(1.0)?, shifted(-1.0)?);

    let tol = GRADIENT_CHECK_TOL;
    let base = sinkhorn_divergence_solve(alpha, beta, kernel, tol, DEFAULT_MAX_ITER)?;
    let eps = kernel.epsilon();
    let analytic: f64 = (0..n)
        .map(|j| eps * (base.pair.b[j].ln() - base.sym_beta.c[j].ln()) * direction[j])
        .sum();
    let up = sinkhorn_divergence_solve(alpha, &plus, kernel, tol, DEFAULT_MAX_ITER)?;
    let down = sinkhorn_divergence_solve(alpha, &minus, kernel, tol, DEFAULT_MAX_ITER)?;
    let numeric = (up.value.sdiv - down.value.sdiv) / (2.0 * t);
    Ok(GradientCheck {
        analytic,
        numeric,
        converged: base.value.converged && up.value.converged && down.value.converged,
    })
}
