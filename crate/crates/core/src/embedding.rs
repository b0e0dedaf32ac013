//! Barycentric coordinates: fit simplex weights `w` so that the barycenter of a
//! fixed dictionary of atoms reproduces a target measure.
//!
//! The barycenter is replaced by the iterate after a fixed number `l` of sweeps,
//! which is an explicit function of `w`. Its derivative is propagated forward,
//! one tangent per weight, through every sweep. With `K` atoms a sweep costs
//! `K` times the kernel applications of the plain sweep, and no intermediate
//! iterates are stored; for the dictionary sizes used here that is cheaper
//! than taping `l` sweeps for a reverse pass.
//!
//! Weights are parametrized as `w = softmax(θ)` and `θ` is optimized with Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelOperator;
use crate::measures::DiscreteMeasure;

pub const DEFAULT_UNROLL: usize = 50;
pub const DEFAULT_STEPS: usize = 300;
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnrollMethod {
    Ibp,
    Debiased,
}

#[derive(Clone, Debug)]
pub struct Dictionary {
    atoms: Vec<DiscreteMeasure>,
    kernel: KernelOperator,
    unroll: usize,
}

impl Dictionary {
    pub fn new(atoms: Vec<DiscreteMeasure>, kernel: KernelOperator, unroll: usize) -> Result<Self> {
        if atoms.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a dictionary needs at least two atoms, got {}",
                atoms.len()
            )));
        }
        if unroll == 0 {
            return Err(Error::InvalidArgument("unroll length must be >= 1".into()));
        }
        for atom in &atoms {
            if atom.grid() != kernel.grid() {
                return Err(Error::GridMismatch);
            }
            atom.require_interior()?;
        }
        Ok(Dictionary { atoms, kernel, unroll })
    }

    pub fn atoms(&self) -> &[DiscreteMeasure] {
        &self.atoms
    }

    pub fn kernel(&self) -> &KernelOperator {
        &self.kernel
    }

    pub fn unroll(&self) -> usize {
        self.unroll
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    fn check_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: w.len(),
            });
        }
        let total: f64 = w.iter().sum();
        if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("weights must lie in the open simplex".into()));
        }
        Ok(())
    }
}

pub fn softmax(theta: &[f64]) -> Vec<f64> {
    let max = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = theta.iter().map(|t| (t - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.iter().map(|e| e / total).collect()
}

/// Unnormalized iterate after `l` sweeps and, when requested, its derivative
/// with respect to each weight (`tangents[j]` is `∂α/∂w_j`).
struct Unrolled {
    alpha: Vec<f64>,
    tangents: Vec<Vec<f64>>,
}

fn unroll(dict: &Dictionary, w: &[f64], method: UnrollMethod, with_tangents: bool) -> Result<Unrolled> {
    let kernel = &dict.kernel;
    let n = kernel.len();
    let count = dict.len();
    let tangent_count = if with_tangents { count } else { 0 };
    let debiased = method == UnrollMethod::Debiased;

    let mut b = vec![vec![1.0; n]; count];
    let mut d = vec![1.0; n];
    let mut a = vec![vec![0.0; n]; count];
    let mut kta = vec![vec![0.0; n]; count];
    let mut alpha = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut log_kta = vec![vec![0.0; n]; count];
    let mut inv_kta = vec![vec![0.0; n]; count];
    // Tangents indexed [j][k] for b, a, Kᵀa; [j] for α, d.
    let mut db = vec![vec![vec![0.0; n]; count]; tangent_count];
    let mut da = vec![vec![vec![0.0; n]; count]; tangent_count];
    let mut dkta = vec![vec![vec![0.0; n]; count]; tangent_count];
    let mut dalpha = vec![vec![0.0; n]; tangent_count];
    let mut dd = vec![vec![0.0; n]; tangent_count];
    let mut kb = vec![0.0; n];
    let mut scratch = vec![0.0; n];

    for sweep in 1..=dict.unroll {
        for k in 0..count {
            kernel.apply_into(&b[k], &mut kb)?;
            let target = dict.atoms[k].weights();
            for i in 0..n {
                a[k][i] = target[i] / kb[i];
            }
            for j in 0..tangent_count {
                kernel.apply_into(&db[j][k], &mut scratch)?;
                for i in 0..n {
                    da[j][k][i] = -a[k][i] * scratch[i] / kb[i];
                }
            }
        }
        for k in 0..count {
            kernel.apply_transpose_into(&a[k], &mut kta[k])?;
            for j in 0..tangent_count {
                kernel.apply_transpose_into(&da[j][k], &mut dkta[j][k])?;
            }
        }
        for k in 0..count {
            for i in 0..n {
                log_kta[k][i] = kta[k][i].ln();
                inv_kta[k][i] = 1.0 / kta[k][i];
            }
        }
        for i in 0..n {
            let s: f64 = (0..count).map(|k| w[k] * log_kta[k][i]).sum();
            g[i] = s.exp();
            alpha[i] = d[i] * g[i];
        }
        for j in 0..tangent_count {
            for i in 0..n {
                let dlog: f64 = log_kta[j][i] + (0..count).map(|k| w[k] * dkta[j][k][i] * inv_kta[k][i]).sum::<f64>();
                dalpha[j][i] = dd[j][i] * g[i] + alpha[i] * dlog;
            }
        }
        for k in 0..count {
            for i in 0..n {
                b[k][i] = alpha[i] / kta[k][i];
            }
            for j in 0..tangent_count {
                for i in 0..n {
                    db[j][k][i] = (dalpha[j][i] - b[k][i] * dkta[j][k][i]) * inv_kta[k][i];
                }
            }
        }
        if debiased {
            kernel.apply_into(&d, &mut kb)?;
            let kd = kb.clone();
            let mut next = vec![0.0; n];
            for i in 0..n {
                let num = d[i] * alpha[i];
                next[i] = if num == 0.0 { 0.0 } else { (num / kd[i]).sqrt() };
            }
            for j in 0..tangent_count {
                kernel.apply_into(&dd[j], &mut scratch)?;
                for i in 0..n {
                    dd[j][i] = if next[i] == 0.0 {
                        0.0
                    } else {
                        (dd[j][i] * alpha[i] + d[i] * dalpha[j][i]) / (2.0 * kd[i] * next[i])
                            - next[i] * scratch[i] / (2.0 * kd[i])
                    };
                }
            }
            d = next;
        }
        let ok = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !ok(&alpha) || !ok(&d) || b.iter().any(|v| !ok(v)) {
            return Err(Error::ScalingBlowUp { iteration: sweep });
        }
        if dalpha.iter().chain(&dd).any(|v| !ok(v)) || db.iter().flatten().any(|v| !ok(v)) {
            return Err(Error::NonFiniteTangent { sweep });
        }
    }
    Ok(Unrolled { alpha, tangents: dalpha })
}

/// The normalized iterate after exactly `dictionary.unroll()` sweeps.
pub fn unrolled_barycenter(dict: &Dictionary, w: &[f64], method: UnrollMethod) -> Result<DiscreteMeasure> {
    dict.check_weights(w)?;
    let out = unroll(dict, w, method, false)?;
    DiscreteMeasure::new(dict.kernel.grid(), out.alpha)
}

/// `½‖p(softmax(θ)) - β‖²` and its gradient in `θ`, where `p` is the
/// normalized unrolled iterate.
pub fn loss_and_gradient(dict: &Dictionary, beta: &DiscreteMeasure, theta: &[f64], method: UnrollMethod) -> Result<(f64, Vec<f64>)> {
    if beta.grid() != dict.kernel.grid() {
        return Err(Error::GridMismatch);
    }
    if theta.len() != dict.len() {
        return Err(Error::DimensionMismatch {
            expected: dict.len(),
            found: theta.len(),
        });
    }
    let w = softmax(theta);
    let out = unroll(dict, &w, method, true)?;
    let mass: f64 = out.alpha.iter().sum();
    let p: Vec<f64> = out.alpha.iter().map(|x| x / mass).collect();
    let residual: Vec<f64> = p.iter().zip(beta.weights()).map(|(x, y)| x - y).collect();
    let loss = 0.5 * residual.iter().map(|r| r * r).sum::<f64>();
    // ∂p/∂w_j = (α̇_j - p Σα̇_j) / Σα.
    let rp: f64 = residual.iter().zip(&p).map(|(r, x)| r * x).sum();
    let grad_w: Vec<f64> = out
        .tangents
        .iter()
        .map(|t| {
            let dmass: f64 = t.iter().sum();
            let rt: f64 = residual.iter().zip(t).map(|(r, x)| r * x).sum();
            (rt - rp * dmass) / mass
        })
        .collect();
    // Softmax Jacobian: ∂w_j/∂θ_i = w_j (δ_ij - w_i).
    let mean: f64 = w.iter().zip(&grad_w).map(|(a, g)| a * g).sum();
    let grad = w.iter().zip(&grad_w).map(|(wi, gi)| wi * (gi - mean)).collect();
    if !loss.is_finite() {
        return Err(Error::NonFiniteTangent { sweep: dict.unroll });
    }
    Ok((loss, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub method: UnrollMethod,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Stop once the gradient norm falls to this value.
    pub gtol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            method: UnrollMethod::Debiased,
            steps: DEFAULT_STEPS,
            learning_rate: DEFAULT_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            gtol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFit {
    pub theta: Vec<f64>,
    pub weights: Vec<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    /// Optimizer steps taken.
    pub iterations: usize,
    /// Best loss so far, after each evaluation.
    pub best_history: Vec<f64>,
}

/// Adam on `θ` from `θ = 0`; returns the best iterate seen.
pub fn fit_coordinates(dict: &Dictionary, beta: &DiscreteMeasure, opts: &FitOptions) -> Result<EmbeddingFit> {
    if !(opts.learning_rate > 0.0) || !(0.0..1.0).contains(&opts.beta1) || !(0.0..1.0).contains(&opts.beta2) {
        return Err(Error::InvalidArgument("invalid optimizer settings".into()));
    }
    let count = dict.len();
    let mut theta = vec![0.0; count];
    let mut m = vec![0.0; count];
    let mut v = vec![0.0; count];
    let norm = |g: &[f64]| g.iter().map(|x| x * x).sum::<f64>().sqrt();

    let (mut loss, mut grad) = loss_and_gradient(dict, beta, &theta, opts.method)?;
    let mut best = (theta.clone(), loss, norm(&grad));
    let mut best_history = vec![loss];
    let mut iterations = 0;
    while iterations < opts.steps && norm(&grad) > opts.gtol {
        iterations += 1;
        let t = iterations as i32;
        for i in 0..count {
            m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * grad[i];
            v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / (1.0 - opts.beta1.powi(t));
            let v_hat = v[i] / (1.0 - opts.beta2.powi(t));
            theta[i] -= opts.learning_rate * m_hat / (v_hat.sqrt() + opts.adam_epsilon);
        }
        (loss, grad) = loss_and_gradient(dict, beta, &theta, opts.method)?;
        if loss < best.1 {
            best = (theta.clone(), loss, norm(&grad));
        }
        best_history.push(best.1);
    }
    let (theta, loss, grad_norm) = best;
    Ok(EmbeddingFit {
        weights: softmax(&theta),
        theta,
        loss,
        grad_norm,
        iterations,
        best_history,
    })
}
