//! Unconstrained smooth minimization: steepest descent, a Newton method with
//! a finite-difference Hessian, and BFGS. Every method takes Armijo steps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::expr::ExprError;

/// A differentiable scalar function of a flat vector.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, z: &[f64]) -> Result<f64, ExprError>;

    fn value_and_gradient(&self, z: &[f64]) -> Result<(f64, Vec<f64>), ExprError>;
}

/// Adapts a closure returning value and gradient.
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    pub fn new(dim: usize, f: F) -> Self {
        FnObjective { dim, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, z: &[f64]) -> Result<f64, ExprError> {
        Ok((self.f)(z).0)
    }

    fn value_and_gradient(&self, z: &[f64]) -> Result<(f64, Vec<f64>), ExprError> {
        Ok((self.f)(z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GradientDescent,
    NewtonFd,
    /// Quasi-Newton with an inverse-Hessian estimate built from gradient
    /// differences.
    Bfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerConfig {
    pub method: Method,
    /// Stationarity tolerance, multiplied by `max(1, |f(start)|)`.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub initial_step: f64,
    pub value_floor: f64,
    pub point_norm_cap: f64,
    /// Relative step for the finite-difference Hessian.
    pub fd_step: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            method: Method::GradientDescent,
            grad_tol: 1e-8,
            max_iters: 10_000,
            armijo_c: 1e-4,
            backtrack: 0.5,
            initial_step: 1.0,
            value_floor: -1e12,
            point_norm_cap: 1e8,
            fd_step: 1e-5,
        }
    }
}

impl InnerConfig {
    pub fn newton() -> Self {
        InnerConfig { method: Method::NewtonFd, ..Self::default() }
    }

    pub fn bfgs() -> Self {
        InnerConfig { method: Method::Bfgs, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), InnerError> {
        let ok = self.grad_tol > 0.0
            && self.max_iters >= 1
            && self.armijo_c > 0.0
            && self.armijo_c < 1.0
            && self.backtrack > 0.0
            && self.backtrack < 1.0
            && self.initial_step > 0.0
            && self.fd_step > 0.0
            && self.point_norm_cap > 0.0;
        if ok {
            Ok(())
        } else {
            Err(InnerError::InvalidConfig)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerStatus {
    Converged,
    MaxIters,
    Diverged,
    /// No further decrease is numerically possible: the line search failed or
    /// the objective stopped changing before the gradient test passed.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub status: InnerStatus,
    pub iterations: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum InnerError {
    #[error("invalid inner solver configuration")]
    InvalidConfig,
    #[error("start point has length {got}, objective expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("objective cannot be evaluated at the start point: {0}")]
    Start(#[source] ExprError),
}

const STALL_LIMIT: usize = 10;
const MAX_EXPANSIONS: usize = 60;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(z: &[f64], t: f64, d: &[f64]) -> Vec<f64> {
    z.iter().zip(d).map(|(a, b)| a + t * b).collect()
}

/// Minimizes `obj` from `start`.
pub fn minimize(obj: &dyn Objective, start: &[f64], cfg: &InnerConfig) -> Result<InnerResult, InnerError> {
    cfg.validate()?;
    if start.len() != obj.dim() {
        return Err(InnerError::Dimension { expected: obj.dim(), got: start.len() });
    }
    let mut z = start.to_vec();
    let (mut f, mut g) = obj.value_and_gradient(&z).map_err(InnerError::Start)?;
    let tol = cfg.grad_tol * f.abs().max(1.0);
    let mut last_step = cfg.initial_step / 2.0;
    let mut small_decreases = 0;
    let mut inv_hessian = match cfg.method {
        Method::Bfgs => DMatrix::<f64>::identity(z.len(), z.len()),
        _ => DMatrix::<f64>::zeros(0, 0),
    };
    let mut first_update = true;
    let finish = |z: Vec<f64>, f: f64, g: &[f64], status, iterations| InnerResult {
        point: z,
        value: f,
        grad_norm: norm(g),
        status,
        iterations,
    };

    for it in 0..cfg.max_iters {
        if norm(&g) <= tol {
            return Ok(finish(z, f, &g, InnerStatus::Converged, it));
        }
        if !f.is_finite() || f < cfg.value_floor || norm(&z) > cfg.point_norm_cap {
            return Ok(finish(z, f, &g, InnerStatus::Diverged, it));
        }
        let steepest: Vec<f64> = g.iter().map(|a| -a).collect();
        let (d, trial) = match cfg.method {
            Method::GradientDescent => (steepest.clone(), (2.0 * last_step).min(1e8)),
            Method::NewtonFd => match newton_direction(obj, &z, &g, cfg) {
                Some(d) => (d, cfg.initial_step),
                None => (steepest.clone(), cfg.initial_step),
            },
            Method::Bfgs => {
                let d: Vec<f64> = (-(&inv_hessian * DVector::from_column_slice(&g))).iter().copied().collect();
                if dot(&g, &d) < 0.0 && d.iter().all(|v| v.is_finite()) {
                    (d, cfg.initial_step)
                } else {
                    inv_hessian = DMatrix::identity(z.len(), z.len());
                    (steepest.clone(), cfg.initial_step)
                }
            }
        };
        let mut step = line_search(obj, &z, f, &g, &d, trial, cfg);
        if step.is_none() && cfg.method != Method::GradientDescent {
            inv_hessian = DMatrix::identity(z.len(), z.len());
            step = line_search(obj, &z, f, &g, &steepest, cfg.initial_step, cfg);
        }
        let Some((t, z_new, f_new)) = step else {
            return Ok(finish(z, f, &g, InnerStatus::Stalled, it));
        };
        debug_assert!(f_new <= f);
        if f - f_new <= 1e-15 * f.abs() {
            small_decreases += 1;
        } else {
            small_decreases = 0;
        }
        last_step = t;
        let z_old = std::mem::replace(&mut z, z_new);
        match obj.value_and_gradient(&z) {
            Ok((fv, gv)) => {
                if cfg.method == Method::Bfgs {
                    bfgs_update(&mut inv_hessian, &z_old, &z, &g, &gv, first_update);
                    first_update = false;
                }
                f = fv;
                g = gv;
            }
            Err(_) => return Ok(finish(z, f_new, &g, InnerStatus::Stalled, it + 1)),
        }
        if small_decreases >= STALL_LIMIT {
            let status = if norm(&g) <= tol { InnerStatus::Converged } else { InnerStatus::Stalled };
            return Ok(finish(z, f, &g, status, it + 1));
        }
    }
    let status = if norm(&g) <= tol {
        InnerStatus::Converged
    } else if !f.is_finite() || f < cfg.value_floor || norm(&z) > cfg.point_norm_cap {
        InnerStatus::Diverged
    } else {
        InnerStatus::MaxIters
    };
    Ok(finish(z, f, &g, status, cfg.max_iters))
}

/// Armijo backtracking from `trial`; when the first trial is accepted the
/// step keeps doubling while the condition holds and the value still drops.
/// Returns the accepted step, point and value.
fn line_search(
    obj: &dyn Objective,
    z: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    trial: f64,
    cfg: &InnerConfig,
) -> Option<(f64, Vec<f64>, f64)> {
    let slope = dot(g, d);
    if !(slope < 0.0) {
        return None;
    }
    let armijo = |t: f64| -> Option<(Vec<f64>, f64)> {
        let zt = axpy(z, t, d);
        match obj.value(&zt) {
            Ok(ft) if ft.is_finite() && ft <= f + cfg.armijo_c * t * slope => Some((zt, ft)),
            Ok(ft) if ft == f64::NEG_INFINITY => Some((zt, ft)),
            _ => None,
        }
    };
    let mut t = trial;
    let mut first = true;
    loop {
        if let Some((zt, ft)) = armijo(t) {
            if !first {
                return Some((t, zt, ft));
            }
            let (mut best_t, mut best_z, mut best_f) = (t, zt, ft);
            for _ in 0..MAX_EXPANSIONS {
                if best_f < cfg.value_floor || norm(&best_z) > cfg.point_norm_cap {
                    break;
                }
                let t2 = 2.0 * best_t;
                match armijo(t2) {
                    Some((z2, f2)) if f2 < best_f => {
                        best_t = t2;
                        best_z = z2;
                        best_f = f2;
                    }
                    _ => break,
                }
            }
            return Some((best_t, best_z, best_f));
        }
        first = false;
        t *= cfg.backtrack;
        if t * norm(d) <= f64::EPSILON * norm(z).max(1e-300) || t < 1e-30 {
            return None;
        }
    }
}

/// Inverse BFGS update with `s = z_new − z_old`, `q = g_new − g_old`.
/// Skipped unless the curvature `sᵀq` is clearly positive. The first update
/// rescales the identity by `sᵀq / qᵀq`.
fn bfgs_update(hinv: &mut DMatrix<f64>, z_old: &[f64], z_new: &[f64], g_old: &[f64], g_new: &[f64], first: bool) {
    let s = DVector::from_iterator(z_old.len(), z_new.iter().zip(z_old).map(|(a, b)| a - b));
    let q = DVector::from_iterator(g_old.len(), g_new.iter().zip(g_old).map(|(a, b)| a - b));
    let sq = s.dot(&q);
    if !(sq > 1e-12 * s.norm() * q.norm()) {
        return;
    }
    if first {
        *hinv *= sq / q.dot(&q);
    }
    let rho = 1.0 / sq;
    let hq = &*hinv * &q;
    let qhq = q.dot(&hq);
    // H ← H − ρ(s·(Hq)ᵀ + (Hq)·sᵀ) + (ρ²·qᵀHq + ρ)·s·sᵀ
    let corr = (&s * hq.transpose() + &hq * s.transpose()) * rho;
    let outer = &s * s.transpose() * (rho * rho * qhq + rho);
    *hinv += outer - corr;
}

/// Solves `(H + τI) d = −g` with a central-difference Hessian, raising τ
/// from 1e-8 by ×10 until the factorization succeeds. Returns `None` when no
/// shift works or the result is not a descent direction.
fn newton_direction(obj: &dyn Objective, z: &[f64], g: &[f64], cfg: &InnerConfig) -> Option<Vec<f64>> {
    let n = z.len();
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut zp = z.to_vec();
    for j in 0..n {
        let step = cfg.fd_step * z[j].abs().max(1.0);
        zp[j] = z[j] + step;
        let (_, gp) = obj.value_and_gradient(&zp).ok()?;
        zp[j] = z[j] - step;
        let (_, gm) = obj.value_and_gradient(&zp).ok()?;
        zp[j] = z[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    let h = (&h + h.transpose()) * 0.5;
    if h.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let rhs = -DVector::from_column_slice(g);
    let mut tau = 1e-8;
    while tau <= 1e12 {
        let shifted = &h + DMatrix::<f64>::identity(n, n) * tau;
        if let Some(chol) = shifted.cholesky() {
            let d = chol.solve(&rhs);
            let d: Vec<f64> = d.iter().copied().collect();
            if d.iter().all(|v| v.is_finite()) && dot(g, &d) < 0.0 {
                return Some(d);
            }
            return None;
        }
        tau *= 10.0;
    }
    None
}
