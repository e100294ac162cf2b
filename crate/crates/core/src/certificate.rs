//! Optimality tests at a lifted point: KKT residuals, the linearized
//! direction-finding LPs, the gradient-zero test and a sampled saddle-point
//! check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{ExprError, Point};
use crate::lagrangian::{self, LagrangianError, Multipliers, SignMode};
use crate::lp::{self, LpError, LpProblem, LpStatus};
use crate::model::{CnfProblem, FeasibilityReport, ModelError};

/// Default tolerance for the `p ∈ X(g)` gate.
pub const DEFAULT_GATE_TOL: f64 = 1e-6;
/// An LP test passes when its optimal value is at least `−LP_PASS_TOL`.
pub const LP_PASS_TOL: f64 = 1e-8;
/// Gradient norm at or below which the gradient-zero test passes.
pub const GRAD_ZERO_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum CertError {
    #[error("point is not in the lifted feasible set (max inequality violation {ineq:e}, max equality residual {eq:e}, exactness gap {gap:?})")]
    NotInXg { ineq: f64, eq: f64, gap: Option<f64> },
    #[error("internal error: certificate LP is infeasible although d = 0 should be feasible")]
    InfeasibleLp,
    #[error("multipliers have lengths ({u}, {v}), problem has s = {s}, r = {r}")]
    Dimension { u: usize, v: usize, s: usize, r: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpVariant {
    /// Equalities linearized one-sidedly, `∇hⱼᵀd ≤ 0`; multipliers `v ≥ 0`.
    CnpIneq,
    /// Equalities kept as `∇hⱼᵀd = 0`; multipliers `v` free.
    Cnp0Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpTest {
    pub variant: LpVariant,
    pub status: LpStatus,
    /// Optimal value `∇g(p)ᵀd*`; absent unless optimal.
    pub objective: Option<f64>,
    /// Set for the equality variant, whose global conclusion rests on
    /// hypotheses that are not checked.
    pub conditional: bool,
    /// Minimizer when optimal.
    pub d: Option<Vec<f64>>,
    /// Descent ray when the LP is unbounded.
    pub ray: Option<Vec<f64>>,
    /// LP duals of the inequality rows, when optimal.
    pub u: Option<Vec<f64>>,
    /// LP duals of the equality rows, when optimal.
    pub v: Option<Vec<f64>>,
}

impl LpTest {
    pub fn passed(&self) -> bool {
        self.status == LpStatus::Optimal && self.objective.is_some_and(|o| o >= -LP_PASS_TOL)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// `‖∇g + Σ uᵢ∇gᵢ + Σ vⱼ∇hⱼ‖₂`.
    pub stationarity: f64,
    /// `maxᵢ |uᵢ gᵢ|`.
    pub complementarity: f64,
    /// Magnitude of the most negative sign-constrained multiplier.
    pub sign_violation: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity.max(self.complementarity).max(self.sign_violation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CertifiedGlobal,
    KktPoint,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub point: Point,
    pub feasibility: FeasibilityReport,
    pub grad_norm: f64,
    pub lp_test: Option<LpTest>,
    pub kkt: Option<KktReport>,
    pub verdict: Verdict,
}

/// Gradients of all components at `p`.
struct Linearization {
    grad_g: Vec<f64>,
    ineqs: Vec<(f64, Vec<f64>)>,
    eqs: Vec<(f64, Vec<f64>)>,
}

fn linearize(prob: &CnfProblem, p: &Point) -> Result<Linearization, CertError> {
    prob.check_point(p)?;
    let view = p.view();
    Ok(Linearization {
        grad_g: prob.objective().value_and_gradient(view)?.1,
        ineqs: prob.ineqs().iter().map(|c| c.value_and_gradient(view)).collect::<Result<_, _>>()?,
        eqs: prob.eqs().iter().map(|c| c.value_and_gradient(view)).collect::<Result<_, _>>()?,
    })
}

fn in_xg(prob: &CnfProblem, p: &Point, tol: f64) -> Result<(FeasibilityReport, bool), CertError> {
    let rep = prob.check_feasible(p, tol)?;
    let exact_ok = match (rep.exactness_gap, prob.reference()) {
        (Some(gap), Some(_)) => gap <= tol * prob.reference_value(&p.x)?.abs().max(1.0),
        _ => true,
    };
    let ok = rep.in_xf && exact_ok;
    Ok((rep, ok))
}

/// Builds and solves the certificate LP at `p` without the feasibility gate.
pub fn solve_certificate_lp(prob: &CnfProblem, p: &Point, variant: LpVariant) -> Result<LpTest, CertError> {
    let lin = linearize(prob, p)?;
    let mut lp = LpProblem::new(lin.grad_g.clone());
    for (gi, grad) in &lin.ineqs {
        lp.a_ub.push(grad.clone());
        lp.b_ub.push(-gi);
    }
    for (_, grad) in &lin.eqs {
        match variant {
            LpVariant::CnpIneq => {
                lp.a_ub.push(grad.clone());
                lp.b_ub.push(0.0);
            }
            LpVariant::Cnp0Eq => {
                lp.a_eq.push(grad.clone());
                lp.b_eq.push(0.0);
            }
        }
    }
    let sol = lp::solve_lp(&lp)?;
    let s = prob.s();
    let conditional = variant == LpVariant::Cnp0Eq;
    Ok(match sol.status {
        LpStatus::Infeasible => return Err(CertError::InfeasibleLp),
        LpStatus::Unbounded => LpTest {
            variant,
            status: sol.status,
            objective: None,
            conditional,
            d: None,
            ray: sol.ray,
            u: None,
            v: None,
        },
        LpStatus::Optimal => {
            let (u, v) = match variant {
                LpVariant::CnpIneq => (sol.duals_ub[..s].to_vec(), sol.duals_ub[s..].to_vec()),
                LpVariant::Cnp0Eq => (sol.duals_ub.clone(), sol.duals_eq.clone()),
            };
            LpTest {
                variant,
                status: sol.status,
                objective: Some(sol.objective),
                conditional,
                d: Some(sol.d),
                ray: None,
                u: Some(u),
                v: Some(v),
            }
        }
    })
}

fn gated_lp_test(prob: &CnfProblem, p: &Point, variant: LpVariant) -> Result<LpTest, CertError> {
    let (rep, ok) = in_xg(prob, p, DEFAULT_GATE_TOL)?;
    if !ok {
        return Err(CertError::NotInXg {
            ineq: rep.max_ineq_violation,
            eq: rep.max_eq_residual,
            gap: rep.exactness_gap,
        });
    }
    solve_certificate_lp(prob, p, variant)
}

/// `min ∇g(p)ᵀd` s.t. `gᵢ(p) + ∇gᵢ(p)ᵀd ≤ 0`, `∇hⱼ(p)ᵀd ≤ 0`.
pub fn lp_test_ineq(prob: &CnfProblem, p: &Point) -> Result<LpTest, CertError> {
    gated_lp_test(prob, p, LpVariant::CnpIneq)
}

/// `min ∇g(p)ᵀd` s.t. `gᵢ(p) + ∇gᵢ(p)ᵀd ≤ 0`, `∇hⱼ(p)ᵀd = 0`.
pub fn lp_test_eq(prob: &CnfProblem, p: &Point) -> Result<LpTest, CertError> {
    gated_lp_test(prob, p, LpVariant::Cnp0Eq)
}

pub fn kkt_residual(
    prob: &CnfProblem,
    p: &Point,
    u: &[f64],
    v: &[f64],
    variant: LpVariant,
) -> Result<KktReport, CertError> {
    if u.len() != prob.s() || v.len() != prob.r() {
        return Err(CertError::Dimension { u: u.len(), v: v.len(), s: prob.s(), r: prob.r() });
    }
    let lin = linearize(prob, p)?;
    let mut station = lin.grad_g.clone();
    let mut complementarity: f64 = 0.0;
    for ((gi, grad), ui) in lin.ineqs.iter().zip(u) {
        for (s, d) in station.iter_mut().zip(grad) {
            *s += ui * d;
        }
        complementarity = complementarity.max((ui * gi).abs());
    }
    for ((_, grad), vj) in lin.eqs.iter().zip(v) {
        for (s, d) in station.iter_mut().zip(grad) {
            *s += vj * d;
        }
    }
    let mut most_negative = u.iter().fold(0.0f64, |a, &b| a.min(b));
    if variant == LpVariant::CnpIneq {
        most_negative = v.iter().fold(most_negative, |a, &b| a.min(b));
    }
    Ok(KktReport {
        u: u.to_vec(),
        v: v.to_vec(),
        stationarity: station.iter().map(|a| a * a).sum::<f64>().sqrt(),
        complementarity,
        sign_violation: -most_negative,
    })
}

/// Number of samples violating `L(p; u, v) ≤ L(p; u*, v*) ≤ L(q; u*, v*)`
/// by more than 1e-8, for random `q` in the problem box and random valid
/// `(u, v)` with entries up to 10 in magnitude.
pub fn saddle_check(
    prob: &CnfProblem,
    p: &Point,
    mult: &Multipliers,
    samples: usize,
    seed: u64,
) -> Result<usize, CertError> {
    let center = lagrangian::lagrangian(prob, p, mult)?;
    let (lo, hi) = prob.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..samples {
        let q = Point::new(
            (0..prob.n()).map(|_| rng.random_range(lo..hi)).collect(),
            (0..prob.m()).map(|_| rng.random_range(lo..hi)).collect(),
        );
        let u: Vec<f64> = (0..prob.s()).map(|_| rng.random_range(0.0..10.0)).collect();
        let v: Vec<f64> = (0..prob.r())
            .map(|_| match mult.mode {
                SignMode::VFree => rng.random_range(-10.0..10.0),
                SignMode::VNonneg => rng.random_range(0.0..10.0),
            })
            .collect();
        let trial = Multipliers::new(u, v, mult.mode)?;
        let left = lagrangian::lagrangian(prob, p, &trial)?;
        let right = lagrangian::lagrangian(prob, &q, mult)?;
        if left > center + 1e-8 || center > right + 1e-8 {
            violations += 1;
        }
    }
    Ok(violations)
}

/// True when `‖∇g(p)‖ ≤ 1e-8`.
pub fn grad_zero_test(prob: &CnfProblem, p: &Point) -> Result<bool, CertError> {
    Ok(grad_norm(prob, p)? <= GRAD_ZERO_TOL)
}

fn grad_norm(prob: &CnfProblem, p: &Point) -> Result<f64, CertError> {
    prob.check_point(p)?;
    let g = prob.objective().value_and_gradient(p.view())?.1;
    Ok(g.iter().map(|a| a * a).sum::<f64>().sqrt())
}

/// Runs the tests in order: feasibility gate, gradient-zero test, the
/// inequality LP and then the equality LP.
pub fn certify(prob: &CnfProblem, p: &Point, gate_tol: f64) -> Result<Certificate, CertError> {
    let (feasibility, ok) = in_xg(prob, p, gate_tol)?;
    let grad_norm = grad_norm(prob, p)?;
    let mut cert = Certificate {
        point: p.clone(),
        feasibility,
        grad_norm,
        lp_test: None,
        kkt: None,
        verdict: Verdict::Inconclusive,
    };
    if !ok {
        return Ok(cert);
    }
    let grad_zero = grad_norm <= GRAD_ZERO_TOL;
    let ineq = solve_certificate_lp(prob, p, LpVariant::CnpIneq)?;
    if ineq.passed() || grad_zero {
        if let (Some(u), Some(v)) = (&ineq.u, &ineq.v) {
            cert.kkt = Some(kkt_residual(prob, p, u, v, LpVariant::CnpIneq)?);
        }
        cert.lp_test = Some(ineq);
        cert.verdict = Verdict::CertifiedGlobal;
        return Ok(cert);
    }
    let eq = solve_certificate_lp(prob, p, LpVariant::Cnp0Eq)?;
    if eq.passed() {
        if let (Some(u), Some(v)) = (&eq.u, &eq.v) {
            cert.kkt = Some(kkt_residual(prob, p, u, v, LpVariant::Cnp0Eq)?);
        }
        cert.verdict = Verdict::KktPoint;
    }
    cert.lp_test = Some(eq);
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{constant, x, y};

    #[test]
    fn unconstrained_descent_ray() {
        let prob = CnfProblem::new("q", 2, 0, x(0).pow(2.0) + x(1).pow(2.0), vec![], vec![]).unwrap();
        let p = Point::new(vec![1.0, -2.0], vec![]);
        let t = lp_test_ineq(&prob, &p).unwrap();
        assert_eq!(t.status, LpStatus::Unbounded);
        let ray = t.ray.unwrap();
        let slope = 2.0 * ray[0] - 4.0 * ray[1];
        assert!(slope < 0.0);
        assert!(!grad_zero_test(&prob, &p).unwrap());
        assert!(grad_zero_test(&prob, &Point::zeros(2, 0)).unwrap());
    }

    #[test]
    fn sign_violation_reports_most_negative_entry() {
        let prob = CnfProblem::new("c", 1, 0, x(0), vec![x(0) - 1.0, -x(0)], vec![]).unwrap();
        let rep = kkt_residual(&prob, &Point::new(vec![0.5], vec![]), &[-0.25, -3.0], &[], LpVariant::CnpIneq).unwrap();
        assert_eq!(rep.sign_violation, 3.0);
    }

    #[test]
    fn affine_equality_orthogonal_gradient() {
        // min x1 + x2 on x1 + x2 = 0: every feasible direction is flat.
        let prob = CnfProblem::new("a", 2, 0, x(0) + x(1), vec![], vec![x(0) + x(1)]).unwrap();
        let p = Point::new(vec![1.0, -1.0], vec![]);
        let t = lp_test_eq(&prob, &p).unwrap();
        assert!(t.passed());
        assert_eq!(t.objective, Some(0.0));
        assert!(t.conditional);
        let v = t.v.unwrap();
        assert!((v[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn gate_rejects_infeasible_points() {
        let prob = CnfProblem::new("c", 1, 1, y(0), vec![x(0) - y(0)], vec![]).unwrap();
        let p = Point::new(vec![1.0], vec![0.0]);
        assert!(matches!(lp_test_ineq(&prob, &p), Err(CertError::NotInXg { .. })));
        let cert = certify(&prob, &p, 1e-6).unwrap();
        assert_eq!(cert.verdict, Verdict::Inconclusive);
        assert!(cert.lp_test.is_none());
    }

    #[test]
    fn zero_function_has_no_saddle_violations() {
        let prob = CnfProblem::new("z", 2, 0, constant(0.0), vec![], vec![]).unwrap();
        let mult = Multipliers::zeros(&prob);
        assert_eq!(saddle_check(&prob, &Point::zeros(2, 0), &mult, 100, 5).unwrap(), 0);
        let cert = certify(&prob, &Point::zeros(2, 0), 1e-6).unwrap();
        assert_eq!(cert.verdict, Verdict::CertifiedGlobal);
    }
}
