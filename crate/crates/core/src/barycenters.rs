//! Fixed-support barycenters: IBP, the debiased variant, and the
//! product-reference barycenter by majorization-minimization.
//!
//! All three share one sweep, written for a kernel `K diag(d)`:
//!
//! ```text
//! a_k ← α_k / K b_k
//! α   ← d ⊙ Π_k (Kᵀ a_k)^{w_k}
//! b_k ← α / Kᵀ a_k
//! ```
//!
//! IBP uses `d = 1`. The debiased solver follows each sweep with
//! `d ← sqrt(d ⊙ α / K d)`. The product solver runs sweeps to convergence with
//! `d` fixed to the previous normalized outer iterate, then updates `d`.
//! `b_k` absorbs the `d` factor, which is why no `diag(d)` appears in the
//! kernel applications.
//!
//! The same sweep also runs on logarithms of the scalings, with kernel
//! products by log-sum-exp. It is several times slower, but it survives
//! values of `ε` for which the scalings leave the `f64` range. The default
//! [`Domain::Auto`] runs the plain sweep and restarts in the log domain only
//! after a blow-up.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelOperator;
use crate::measures::{moments_of, DiscreteMeasure};

pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITER: usize = 5000;
pub const DEFAULT_OUTER_ITER: usize = 30;

/// Where the scalings live.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// Scaling domain first, log domain after a blow-up.
    #[default]
    Auto,
    Scaling,
    Log,
}

const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ibp,
    Debiased,
    Product,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ibp => "ibp",
            Method::Debiased => "debiased",
            Method::Product => "product",
        }
    }
}

/// Inputs, weights and stopping rules for one barycenter solve.
#[derive(Clone, Debug)]
pub struct BarycenterProblem<'a> {
    measures: &'a [DiscreteMeasure],
    weights: Vec<f64>,
    kernel: &'a KernelOperator,
    /// Stop when `‖α_t - α_{t-1}‖_∞ / ‖α_t‖_∞ ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Outer majorization steps of the product solver.
    pub outer_iter: usize,
    /// Inner tolerance of the product solver; defaults to `tol`.
    pub inner_tol: Option<f64>,
    pub domain: Domain,
}

impl<'a> BarycenterProblem<'a> {
    pub fn new(measures: &'a [DiscreteMeasure], weights: Vec<f64>, kernel: &'a KernelOperator) -> Result<Self> {
        if measures.is_empty() {
            return Err(Error::InvalidArgument("at least one input measure is required".into()));
        }
        for m in measures {
            if m.grid() != kernel.grid() {
                return Err(Error::GridMismatch);
            }
        }
        let problem = BarycenterProblem {
            measures,
            weights: Vec::new(),
            kernel,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            outer_iter: DEFAULT_OUTER_ITER,
            inner_tol: None,
            domain: Domain::Auto,
        };
        problem.with_weights(weights)
    }

    /// Same inputs with different weights. Inputs with positive weight must be
    /// strictly positive.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.measures.len() {
            return Err(Error::DimensionMismatch {
                expected: self.measures.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        for (m, &w) in self.measures.iter().zip(&weights) {
            if w > 0.0 {
                m.require_interior()?;
            }
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_outer_iter(mut self, outer_iter: usize) -> Self {
        self.outer_iter = outer_iter;
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn measures(&self) -> &'a [DiscreteMeasure] {
        self.measures
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kernel(&self) -> &'a KernelOperator {
        self.kernel
    }

    fn active(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|&k| self.weights[k] > 0.0).collect()
    }
}

/// Scalings carried between sweeps; also the warm-start payload.
///
/// With `log_domain` set, `a`, `b` and `d` hold logarithms.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingState {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    /// Debiasing vector, or the majorization reference for the product solver.
    pub d: Option<Vec<f64>>,
    /// Last unnormalized iterate (always linear).
    pub alpha: Option<Vec<f64>>,
    pub log_domain: bool,
}

impl ScalingState {
    pub fn ones(count: usize, n: usize) -> Self {
        ScalingState {
            a: vec![vec![1.0; n]; count],
            b: vec![vec![1.0; n]; count],
            d: None,
            alpha: None,
            log_domain: false,
        }
    }

    /// Scalings equal to one, stored as zeros in the log domain.
    pub fn initial(count: usize, n: usize, log_domain: bool) -> Self {
        let fill = if log_domain { 0.0 } else { 1.0 };
        ScalingState {
            a: vec![vec![fill; n]; count],
            b: vec![vec![fill; n]; count],
            d: None,
            alpha: None,
            log_domain,
        }
    }

    /// The same scalings as logarithms.
    pub fn into_log(self) -> Self {
        if self.log_domain {
            return self;
        }
        let ln = |v: Vec<f64>| v.into_iter().map(f64::ln).collect::<Vec<f64>>();
        ScalingState {
            a: self.a.into_iter().map(ln).collect(),
            b: self.b.into_iter().map(ln).collect(),
            d: self.d.map(ln),
            alpha: self.alpha,
            log_domain: true,
        }
    }

    /// Normalized `d` as weights.
    fn d_weights(&self) -> Option<Vec<f64>> {
        self.d.as_ref().map(|d| normalized_weights(d, self.log_domain))
    }
}

/// `v / Σv`, or `exp(v - logsumexp(v))` for logarithms.
fn normalized_weights(v: &[f64], log: bool) -> Vec<f64> {
    if log {
        let lse = log_sum_exp(v);
        v.iter().map(|x| (x - lse).exp()).collect()
    } else {
        let total: f64 = v.iter().sum();
        v.iter().map(|x| x / total).collect()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug)]
pub struct BarycenterResult {
    pub method: Method,
    pub barycenter: DiscreteMeasure,
    /// `Σ α` before the final normalization.
    pub mass: f64,
    /// Total sweeps, summed over outer steps for the product solver.
    pub iterations: usize,
    pub outer_iterations: usize,
    pub final_change: f64,
    pub converged: bool,
    /// Relative change after every sweep.
    pub history: Vec<f64>,
    pub kernel_applies: usize,
    pub wall_time: Duration,
    /// Product solver only: every axis variance is below four squared spacings.
    pub collapsed: bool,
    /// Whether the scalings were kept as logarithms.
    pub log_domain: bool,
    pub state: ScalingState,
}

impl BarycenterResult {
    pub fn applies_per_sweep(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.kernel_applies as f64 / self.iterations as f64
        }
    }
}

/// `‖new - old‖_∞ / ‖new‖_∞`.
pub fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    let scale = new.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = old.iter().zip(new).fold(0.0f64, |m, (o, x)| m.max((x - o).abs()));
    if scale > 0.0 {
        diff / scale
    } else {
        f64::INFINITY
    }
}

struct Sweeper<'p, 'a> {
    problem: &'p BarycenterProblem<'a>,
    active: Vec<usize>,
    state: ScalingState,
    kta: Vec<Vec<f64>>,
    scratch: Vec<f64>,
    alpha: Vec<f64>,
    /// `ln α_k` and `ln α`, log domain only.
    log_targets: Vec<Vec<f64>>,
    log_alpha: Vec<f64>,
    applies: usize,
    sweeps: usize,
}

impl<'p, 'a> Sweeper<'p, 'a> {
    fn new(problem: &'p BarycenterProblem<'a>, warm: Option<ScalingState>, log_domain: bool) -> Result<Self> {
        let n = problem.kernel.len();
        let count = problem.measures.len();
        let state = match warm {
            Some(s) => {
                if s.b.len() != count || s.a.len() != count || s.b.iter().chain(&s.a).any(|v| v.len() != n) {
                    return Err(Error::InvalidArgument("warm-start state does not match the problem".into()));
                }
                match (s.log_domain, log_domain) {
                    (false, true) => s.into_log(),
                    (true, false) => ScalingState::initial(count, n, false),
                    _ => s,
                }
            }
            None => ScalingState::initial(count, n, log_domain),
        };
        let log_targets = if log_domain {
            problem
                .measures
                .iter()
                .map(|m| m.weights().iter().map(|x| x.ln()).collect())
                .collect()
        } else {
            Vec::new()
        };
        Ok(Sweeper {
            problem,
            active: problem.active(),
            alpha: state.alpha.clone().unwrap_or_default(),
            state,
            kta: vec![vec![0.0; n]; count],
            scratch: vec![0.0; n],
            log_targets,
            log_alpha: Vec::new(),
            applies: 0,
            sweeps: 0,
        })
    }

    fn kernel(&self) -> &'a KernelOperator {
        self.problem.kernel
    }

    /// One sweep; returns the relative change of `α`.
    fn sweep(&mut self) -> Result<f64> {
        if self.state.log_domain {
            return self.sweep_log();
        }
        let kernel = self.kernel();
        let n = kernel.len();
        let previous = std::mem::take(&mut self.alpha);
        for &k in &self.active {
            let target = self.problem.measures[k].weights();
            kernel.apply_into(&self.state.b[k], &mut self.scratch)?;
            let a = &mut self.state.a[k];
            for i in 0..n {
                a[i] = target[i] / self.scratch[i];
            }
            self.applies += 1;
        }
        for &k in &self.active {
            kernel.apply_transpose_into(&self.state.a[k], &mut self.kta[k])?;
            self.applies += 1;
        }
        let mut alpha = vec![0.0; n];
        for (i, out) in alpha.iter_mut().enumerate() {
            let log_mean: f64 = self
                .active
                .iter()
                .map(|&k| self.problem.weights[k] * self.kta[k][i].ln())
                .sum();
            *out = log_mean.exp();
        }
        if let Some(d) = &self.state.d {
            for (x, di) in alpha.iter_mut().zip(d) {
                *x *= di;
            }
        }
        for &k in &self.active {
            let (b, kta) = (&mut self.state.b[k], &self.kta[k]);
            for i in 0..n {
                b[i] = alpha[i] / kta[i];
            }
        }
        self.sweeps += 1;
        // Entries of α may underflow to zero far from the support; NaN, ∞ or a
        // vanishing total are failures.
        let valid = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x >= 0.0);
        if !valid(&alpha)
            || !alpha.iter().any(|&x| x > 0.0)
            || self.active.iter().any(|&k| !valid(&self.state.b[k]))
        {
            return Err(Error::ScalingBlowUp { iteration: self.sweeps });
        }
        let change = if previous.len() == n {
            relative_change(&previous, &alpha)
        } else {
            f64::INFINITY
        };
        self.alpha = alpha;
        Ok(change)
    }

    fn sweep_log(&mut self) -> Result<f64> {
        let kernel = self.kernel();
        let n = kernel.len();
        for &k in &self.active {
            kernel.apply_log_into(&self.state.b[k], &mut self.scratch)?;
            let (a, target) = (&mut self.state.a[k], &self.log_targets[k]);
            for i in 0..n {
                a[i] = target[i] - self.scratch[i];
            }
            self.applies += 1;
        }
        for &k in &self.active {
            kernel.apply_log_into(&self.state.a[k], &mut self.kta[k])?;
            self.applies += 1;
        }
        let mut log_alpha: Vec<f64> = (0..n)
            .map(|i| self.active.iter().map(|&k| self.problem.weights[k] * self.kta[k][i]).sum())
            .collect();
        if let Some(d) = &self.state.d {
            for (x, di) in log_alpha.iter_mut().zip(d) {
                *x += di;
            }
        }
        for &k in &self.active {
            let (b, kta) = (&mut self.state.b[k], &self.kta[k]);
            for i in 0..n {
                b[i] = log_alpha[i] - kta[i];
            }
        }
        self.sweeps += 1;
        let valid = |v: &[f64]| v.iter().all(|x| !x.is_nan() && *x < f64::INFINITY);
        let alpha: Vec<f64> = log_alpha.iter().map(|x| x.exp()).collect();
        if !valid(&log_alpha)
            || !alpha.iter().all(|x| x.is_finite())
            || !alpha.iter().any(|&x| x > 0.0)
            || self.active.iter().any(|&k| !valid(&self.state.b[k]))
        {
            return Err(Error::ScalingBlowUp { iteration: self.sweeps });
        }
        let previous = std::mem::replace(&mut self.alpha, alpha);
        self.log_alpha = log_alpha;
        Ok(if previous.len() == n {
            relative_change(&previous, &self.alpha)
        } else {
            f64::INFINITY
        })
    }

    /// `ln d ← (ln d + ln α - ln K d) / 2`.
    fn debias_log(&mut self) -> Result<()> {
        let kernel = self.kernel();
        let d = self.state.d.get_or_insert_with(|| vec![0.0; kernel.len()]);
        kernel.apply_log_into(d, &mut self.scratch)?;
        self.applies += 1;
        for i in 0..d.len() {
            let num = d[i] + self.log_alpha[i];
            d[i] = if num == f64::NEG_INFINITY { num } else { 0.5 * (num - self.scratch[i]) };
        }
        if d.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::ScalingBlowUp { iteration: self.sweeps });
        }
        Ok(())
    }

    /// Sets `d` to the normalized current iterate; returns its relative change
    /// from the previous reference.
    fn update_reference(&mut self) -> f64 {
        let reference = if self.state.log_domain {
            let lse = log_sum_exp(&self.log_alpha);
            self.log_alpha.iter().map(|x| x - lse).collect()
        } else {
            normalized_weights(&self.alpha, false)
        };
        let change = match self.state.d_weights() {
            Some(old) => relative_change(&old, &normalized_weights(&reference, self.state.log_domain)),
            None => f64::INFINITY,
        };
        self.state.d = Some(reference);
        change
    }

    /// `d ← sqrt(d ⊙ α / K d)`.
    fn debias(&mut self) -> Result<()> {
        if self.state.log_domain {
            return self.debias_log();
        }
        let kernel = self.kernel();
        let d = self.state.d.get_or_insert_with(|| vec![1.0; kernel.len()]);
        kernel.apply_into(d, &mut self.scratch)?;
        self.applies += 1;
        for i in 0..d.len() {
            let num = d[i] * self.alpha[i];
            d[i] = if num == 0.0 { 0.0 } else { (num / self.scratch[i]).sqrt() };
        }
        if d.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::ScalingBlowUp { iteration: self.sweeps });
        }
        Ok(())
    }

    fn finish(
        mut self,
        method: Method,
        outer_iterations: usize,
        final_change: f64,
        converged: bool,
        history: Vec<f64>,
        started: Instant,
    ) -> Result<BarycenterResult> {
        let grid = self.kernel().grid();
        if self.alpha.len() != grid.len() {
            // No sweep ran: report the uniform measure.
            self.alpha = vec![1.0 / grid.len() as f64; grid.len()];
        }
        let mass: f64 = self.alpha.iter().sum();
        let barycenter = DiscreteMeasure::new(grid, self.alpha.clone())?;
        let collapsed = method == Method::Product && {
            let m = moments_of(grid, barycenter.weights());
            (0..grid.ndim()).all(|a| m.variance[a] < 4.0 * grid.spacing()[a].powi(2))
        };
        if collapsed {
            log::info!("product barycenter collapsed to a near-Dirac");
        }
        if !converged {
            log::warn!(
                "{} barycenter stopped after {} sweeps with change {final_change:e}",
                method.name(),
                self.sweeps
            );
        }
        self.state.alpha = Some(self.alpha);
        Ok(BarycenterResult {
            method,
            barycenter,
            mass,
            iterations: self.sweeps,
            outer_iterations,
            final_change,
            converged,
            history,
            kernel_applies: self.applies,
            wall_time: started.elapsed(),
            collapsed,
            log_domain: self.state.log_domain,
            state: self.state,
        })
    }
}

fn check_tol(problem: &BarycenterProblem<'_>) -> Result<()> {
    let inner = problem.inner_tol.unwrap_or(problem.tol);
    if problem.tol > 0.0 && inner > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument("tolerances must be positive".into()))
    }
}

fn run_sweeps(
    problem: &BarycenterProblem<'_>,
    method: Method,
    warm: Option<ScalingState>,
    log_domain: bool,
    observer: &mut dyn FnMut(usize, &[f64]),
) -> Result<BarycenterResult> {
    let started = Instant::now();
    let mut sweeper = Sweeper::new(problem, warm, log_domain)?;
    match method {
        Method::Ibp => sweeper.state.d = None,
        Method::Debiased => {
            let n = problem.kernel.len();
            let one = if log_domain { 0.0 } else { 1.0 };
            sweeper.state.d.get_or_insert_with(|| vec![one; n]);
        }
        Method::Product => unreachable!(),
    }
    let mut history = Vec::new();
    let mut change = f64::INFINITY;
    let mut converged = false;
    while sweeper.sweeps < problem.max_iter {
        change = sweeper.sweep()?;
        if method == Method::Debiased {
            sweeper.debias()?;
        }
        history.push(change);
        observer(sweeper.sweeps, &sweeper.alpha);
        if change <= problem.tol {
            converged = true;
            break;
        }
    }
    sweeper.finish(method, 0, change, converged, history, started)
}

fn run_product(
    problem: &BarycenterProblem<'_>,
    warm: Option<ScalingState>,
    log_domain: bool,
    observer: &mut dyn FnMut(usize, &[f64]),
) -> Result<BarycenterResult> {
    let started = Instant::now();
    let inner_tol = problem.inner_tol.unwrap_or(problem.tol);
    let mut sweeper = Sweeper::new(problem, warm, log_domain)?;
    let mut history = Vec::new();
    let mut outer_change = f64::INFINITY;
    let mut converged = false;
    let mut outer = 0;
    while outer < problem.outer_iter {
        outer += 1;
        let mut inner = 0;
        loop {
            let change = sweeper.sweep()?;
            inner += 1;
            history.push(change);
            observer(sweeper.sweeps, &sweeper.alpha);
            if change <= inner_tol || inner >= problem.max_iter {
                break;
            }
        }
        outer_change = sweeper.update_reference();
        if outer_change <= problem.tol {
            converged = true;
            break;
        }
    }
    sweeper.finish(Method::Product, outer, outer_change, converged, history, started)
}

fn run_in(
    problem: &BarycenterProblem<'_>,
    method: Method,
    warm: Option<ScalingState>,
    log_domain: bool,
    observer: &mut dyn FnMut(usize, &[f64]),
) -> Result<BarycenterResult> {
    match method {
        Method::Ibp | Method::Debiased => run_sweeps(problem, method, warm, log_domain, observer),
        Method::Product => run_product(problem, warm, log_domain, observer),
    }
}

/// Runs `method`, optionally warm-started, calling `observer(sweep, α)` with the
/// unnormalized iterate after every sweep.
///
/// Under [`Domain::Auto`] a scaling-domain blow-up restarts the run cold in
/// the log domain: the observer then sees the sweep count start again at 1,
/// and the reported kernel applications are those of the restarted run.
pub fn barycenter_observed(
    problem: &BarycenterProblem<'_>,
    method: Method,
    warm: Option<ScalingState>,
    observer: &mut dyn FnMut(usize, &[f64]),
) -> Result<BarycenterResult> {
    check_tol(problem)?;
    match problem.domain {
        Domain::Scaling => run_in(problem, method, warm, false, observer),
        Domain::Log => run_in(problem, method, warm, true, observer),
        Domain::Auto => {
            let log_warm = warm.as_ref().is_some_and(|s| s.log_domain);
            if log_warm {
                return run_in(problem, method, warm, true, observer);
            }
            match run_in(problem, method, warm, false, observer) {
                Err(Error::ScalingBlowUp { iteration }) => {
                    log::info!("scalings left the f64 range at sweep {iteration}; restarting in the log domain");
                    run_in(problem, method, None, true, observer)
                }
                other => other,
            }
        }
    }
}

pub fn barycenter(problem: &BarycenterProblem<'_>, method: Method) -> Result<BarycenterResult> {
    barycenter_observed(problem, method, None, &mut |_, _| {})
}

pub fn ibp_barycenter(problem: &BarycenterProblem<'_>) -> Result<BarycenterResult> {
    barycenter(problem, Method::Ibp)
}

pub fn debiased_barycenter(problem: &BarycenterProblem<'_>) -> Result<BarycenterResult> {
    barycenter(problem, Method::Debiased)
}

pub fn product_barycenter(problem: &BarycenterProblem<'_>) -> Result<BarycenterResult> {
    barycenter(problem, Method::Product)
}

/// One barycenter of two inputs per weight pair `(w, 1 - w)`.
///
/// IBP runs are warm-started from the previous pair's scalings. Debiased and
/// product runs start cold: both contract slowly near their fixed points, so
/// any inherited `d` (or `b_k`) stops measurably away from where a cold start
/// stops.
pub fn weighted_interpolation(
    problem: &BarycenterProblem<'_>,
    method: Method,
    weight_path: &[(f64, f64)],
) -> Result<Vec<BarycenterResult>> {
    if problem.measures.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "interpolation needs two inputs, got {}",
            problem.measures.len()
        )));
    }
    let mut results: Vec<BarycenterResult> = Vec::with_capacity(weight_path.len());
    for &(w0, w1) in weight_path {
        let step = problem.clone().with_weights(vec![w0, w1])?;
        let warm = match method {
            Method::Ibp => results.last().map(|r| r.state.clone()),
            Method::Debiased | Method::Product => None,
        };
        results.push(barycenter_observed(&step, method, warm, &mut |_, _| {})?);
    }
    Ok(results)
}
