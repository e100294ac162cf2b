//! Outer loops: the augmented Lagrangian penalty algorithm, the pure penalty
//! method and its block-decomposed variant.
//!
//! Every loop minimizes `A(·; uᵏ, vᵏ, cₖ) = g + uᵀg + vᵀh + cₖ(Σ gᵢ⁺² + Σ hⱼ²)`
//! and then grows the weight geometrically, `cₖ₊₁ = N·cₖ`. The ALPF loop
//! updates the multipliers between solves; the penalty loop keeps them at
//! zero.

mod decompose;
mod trace;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

pub use decompose::{solve_decomposed, BlockPartition};
pub use trace::{format_table, thresholded_norm0, AlpfTrace, Column, Diagnostics, IterationRecord, StopStatus};

use crate::expr::{ExprError, Point, VarView};
use crate::inner::{self, InnerConfig, InnerError, InnerResult, InnerStatus, Objective};
use crate::lagrangian::AugmentedObjective;
use crate::model::{midpoint_violations, CnfProblem, ModelError, Values};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlpfConfig {
    pub eps: f64,
    /// Initial penalty weight. For [`solve_decomposed`] this is `σ₁` and the
    /// weight applied is `σ/2`.
    pub rho0: f64,
    pub growth: f64,
    pub max_outer: usize,
    pub inner: InnerConfig,
    /// Starting point; `None` means the origin.
    pub start: Option<Point>,
    pub warm_start_inner: bool,
    /// Midpoint pairs used to test convexity of the Lagrangian before a
    /// KKT stop.
    pub convexity_samples: usize,
    pub seed: u64,
}

impl Default for AlpfConfig {
    fn default() -> Self {
        AlpfConfig {
            eps: 1e-6,
            rho0: 10.0,
            growth: 100.0,
            max_outer: 50,
            inner: InnerConfig::default(),
            start: None,
            warm_start_inner: true,
            convexity_samples: 200,
            seed: 0,
        }
    }
}

impl AlpfConfig {
    pub fn validate(&self) -> Result<(), AlpfError> {
        if !(self.eps >= 0.0) {
            return Err(AlpfError::InvalidConfig("eps must be nonnegative"));
        }
        if !(self.rho0 > 0.0 && self.rho0.is_finite()) {
            return Err(AlpfError::InvalidConfig("rho0 must be positive"));
        }
        if !(self.growth > 1.0 && self.growth.is_finite()) {
            return Err(AlpfError::InvalidConfig("growth must exceed 1"));
        }
        if self.max_outer == 0 {
            return Err(AlpfError::InvalidConfig("max_outer must be at least 1"));
        }
        self.inner.validate()?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AlpfError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("invalid block partition: {0}")]
    Partition(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Inner(#[from] InnerError),
}

/// Multipliers after one update with weight `rho`:
/// `uᵢ ← uᵢ + 2ρgᵢ⁺` where `gᵢ ≥ 0` and `uᵢ ← 0` otherwise; `v ← v + 2ρh`.
pub fn update_multipliers(u: &[f64], v: &[f64], ineqs: &[f64], eqs: &[f64], rho: f64) -> (Vec<f64>, Vec<f64>) {
    let u_next: Vec<f64> =
        u.iter().zip(ineqs).map(|(&ui, &gi)| if gi >= 0.0 { ui + 2.0 * rho * gi } else { 0.0 }).collect();
    debug_assert!(u_next.iter().all(|&a| !(a < 0.0)));
    let v_next = v.iter().zip(eqs).map(|(&vj, &hj)| vj + 2.0 * rho * hj).collect();
    (u_next, v_next)
}

/// Runs the augmented Lagrangian penalty algorithm.
pub fn solve_alpf(prob: &CnfProblem, cfg: &AlpfConfig) -> Result<AlpfTrace, AlpfError> {
    run(prob, cfg, Mode::Alpf)
}

/// Runs the penalty method: the same loop with `u = v = 0` throughout,
/// stopping once `e < ε`.
pub fn solve_penalty(prob: &CnfProblem, cfg: &AlpfConfig) -> Result<AlpfTrace, AlpfError> {
    run(prob, cfg, Mode::Penalty)
}

#[derive(Clone, Copy)]
enum Mode<'a> {
    Alpf,
    Penalty,
    Decomposed(&'a BlockPartition),
}

fn start_point(prob: &CnfProblem, cfg: &AlpfConfig) -> Result<Point, AlpfError> {
    let start = cfg.start.clone().unwrap_or_else(|| Point::zeros(prob.n(), prob.m()));
    prob.check_point(&start)?;
    Ok(start)
}

fn augmented_value(vals: &Values, u: &[f64], v: &[f64], c: f64) -> f64 {
    let mut a = vals.g;
    for (ui, gi) in u.iter().zip(&vals.ineqs) {
        let gp = gi.max(0.0);
        a += ui * gi + c * gp * gp;
    }
    for (vj, hj) in v.iter().zip(&vals.eqs) {
        a += vj * hj + c * hj * hj;
    }
    a
}

fn run(prob: &CnfProblem, cfg: &AlpfConfig, mode: Mode<'_>) -> Result<AlpfTrace, AlpfError> {
    cfg.validate()?;
    let start = start_point(prob, cfg)?;
    let n = prob.n();
    let start_vals = prob.values(&start)?;
    let (mut u, mut v) = match mode {
        Mode::Penalty => (vec![0.0; prob.s()], vec![0.0; prob.r()]),
        _ => (start_vals.ineqs.iter().map(|g| g.max(0.0)).collect(), vec![0.0; prob.r()]),
    };
    let mut c = match mode {
        Mode::Decomposed(_) => cfg.rho0 / 2.0,
        _ => cfg.rho0,
    };

    let mut z = start.to_flat();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut status = StopStatus::MaxOuter;
    let mut max_iter_streak = 0;

    for k in 1..=cfg.max_outer {
        let from = if cfg.warm_start_inner { z.clone() } else { start.to_flat() };
        let res = match mode {
            Mode::Decomposed(part) => part.sweep(prob, &u, &v, c, &from, &cfg.inner)?,
            _ => {
                let base = Point::from_flat(&from, n);
                let obj = AugmentedObjective::new(prob, &u, &v, c, &base);
                inner::minimize(&obj, &from, &cfg.inner)?
            }
        };
        z = res.point.clone();
        let p = Point::from_flat(&z, n);
        let vals = prob.values(&p)?;
        let a = augmented_value(&vals, &u, &v, c);
        let e = vals.infeasibility();
        let gap = (a - vals.g).abs();
        debug!("outer {k}: rho = {c}, A = {a}, g = {}, e = {e}, inner {:?}", vals.g, res.status);
        records.push(IterationRecord {
            k,
            rho: c,
            x: p.x.clone(),
            y: p.y.clone(),
            u: u.clone(),
            v: v.clone(),
            a,
            g: vals.g,
            e,
            gap,
            inner_status: res.status,
            inner_iterations: res.iterations,
        });

        if !vals.g.is_finite() || !e.is_finite() || res.status == InnerStatus::Diverged {
            status = StopStatus::InnerFailure;
            break;
        }
        max_iter_streak = if res.status == InnerStatus::MaxIters { max_iter_streak + 1 } else { 0 };
        if max_iter_streak >= 2 {
            status = StopStatus::InnerFailure;
            break;
        }

        match mode {
            Mode::Alpf => {
                if kkt_stop(prob, cfg, &vals, &u, &v) {
                    status = StopStatus::KktStop;
                    break;
                }
                if gap < cfg.eps && e < cfg.eps {
                    status = StopStatus::ApproxStop;
                    break;
                }
            }
            Mode::Penalty | Mode::Decomposed(_) => {
                if e < cfg.eps {
                    status = StopStatus::ApproxStop;
                    break;
                }
            }
        }

        if !matches!(mode, Mode::Penalty) {
            (u, v) = update_multipliers(&u, &v, &vals.ineqs, &vals.eqs, c);
        }
        c *= cfg.growth;
    }

    let diagnostics = match records.last() {
        Some(last) => Some(diagnose(prob, last, &records)?),
        None => None,
    };
    Ok(AlpfTrace { records, status, diagnostics })
}

/// Complementarity and feasibility within `ε`, and no midpoint-convexity
/// violation of `L(·; u, v)` on the problem box.
fn kkt_stop(prob: &CnfProblem, cfg: &AlpfConfig, vals: &Values, u: &[f64], v: &[f64]) -> bool {
    let complementary = u.iter().zip(&vals.ineqs).all(|(ui, gi)| (ui * gi).abs() <= cfg.eps);
    let feasible = vals.max_ineq_violation() <= cfg.eps && vals.max_eq_residual() <= cfg.eps;
    if !(complementary && feasible) {
        return false;
    }
    let base = Point::zeros(prob.n(), prob.m());
    let lagr = AugmentedObjective::new(prob, u, v, 0.0, &base);
    let bad =
        midpoint_violations(prob.dim(), cfg.convexity_samples, cfg.seed, prob.bounds(), 1, |z, _| lagr.value(z).ok());
    bad == 0
}

fn diagnose(prob: &CnfProblem, last: &IterationRecord, records: &[IterationRecord]) -> Result<Diagnostics, AlpfError> {
    let p = last.point();
    let view: VarView<'_> = p.view();
    let c = last.rho;
    let (_, mut grad) = prob.objective().value_and_gradient(view)?;
    let mut gamma = 1.0;
    let mut inactive_with_multiplier = Vec::new();
    for (i, comp) in prob.ineqs().iter().enumerate() {
        let (gi, gg) = comp.value_and_gradient(view)?;
        let ubar = last.u[i] + 2.0 * c * gi.max(0.0);
        gamma += ubar;
        add_scaled(&mut grad, ubar, &gg);
        if gi < -1e-3 && last.u[i] > 1e-6 {
            inactive_with_multiplier.push(i);
        }
    }
    for (j, comp) in prob.eqs().iter().enumerate() {
        let (hj, hg) = comp.value_and_gradient(view)?;
        let vbar = last.v[j] + 2.0 * c * hj;
        gamma += vbar.abs();
        add_scaled(&mut grad, vbar, &hg);
    }
    let residual = grad.iter().map(|a| a * a).sum::<f64>().sqrt() / gamma;

    let mut infeasibility_increases = Vec::new();
    for w in records.windows(2) {
        let ok = matches!(w[1].inner_status, InnerStatus::Converged | InnerStatus::Stalled);
        if ok && w[1].e > w[0].e + 1e-6 {
            warn!("infeasibility rose from {} to {} at outer iteration {}", w[0].e, w[1].e, w[1].k);
            infeasibility_increases.push(w[1].k);
        }
    }
    if !inactive_with_multiplier.is_empty() {
        warn!("inactive inequalities {inactive_with_multiplier:?} still carry multipliers");
    }
    Ok(Diagnostics { normalized_residual: residual, gamma, inactive_with_multiplier, infeasibility_increases })
}

fn add_scaled(acc: &mut [f64], w: f64, g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += w * b;
    }
}

/// Combined status of several inner solves: the worst one wins.
fn worst(a: InnerStatus, b: InnerStatus) -> InnerStatus {
    let rank = |s| match s {
        InnerStatus::Converged => 0,
        InnerStatus::Stalled => 1,
        InnerStatus::MaxIters => 2,
        InnerStatus::Diverged => 3,
    };
    if rank(b) > rank(a) {
        b
    } else {
        a
    }
}

fn merge(acc: Option<InnerResult>, next: InnerResult) -> InnerResult {
    match acc {
        None => next,
        Some(prev) => InnerResult {
            status: worst(prev.status, next.status),
            iterations: prev.iterations + next.iterations,
            grad_norm: prev.grad_norm.max(next.grad_norm),
            ..next
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{x, y};

    fn circle() -> CnfProblem {
        // min x1 + x2 s.t. x1^2 + x2^2 - 2 <= 0; optimum (-1, -1)
        CnfProblem::new("circle", 2, 0, x(0) + x(1), vec![x(0).pow(2.0) + x(1).pow(2.0) - 2.0], vec![]).unwrap()
    }

    fn newton_cfg() -> AlpfConfig {
        AlpfConfig { inner: InnerConfig::newton(), ..AlpfConfig::default() }
    }

    #[test]
    fn update_follows_two_case_rule() {
        let (u, v) = update_multipliers(&[1.0, 2.0, 0.5], &[0.25, -1.0], &[0.5, -0.1, 0.0], &[0.125, -2.0], 4.0);
        assert_eq!(u, vec![1.0 + 8.0 * 0.5, 0.0, 0.5]);
        assert_eq!(v, vec![0.25 + 8.0 * 0.125, -1.0 - 16.0]);
    }

    #[test]
    fn alpf_solves_disk_constrained_linear() {
        let trace = solve_alpf(&circle(), &newton_cfg()).unwrap();
        assert!(trace.status.is_success(), "{:?}", trace.status);
        let x = &trace.last().unwrap().x;
        assert!((x[0] + 1.0).abs() < 1e-4 && (x[1] + 1.0).abs() < 1e-4, "{x:?}");
        let d = trace.diagnostics.unwrap();
        assert!(d.normalized_residual < 1e-4);
    }

    #[test]
    fn rho_grows_geometrically_and_u_stays_nonnegative() {
        let cfg = AlpfConfig { eps: 0.0, max_outer: 4, growth: 3.0, ..newton_cfg() };
        let trace = solve_alpf(&circle(), &cfg).unwrap();
        assert_eq!(trace.status, StopStatus::MaxOuter);
        for w in trace.records.windows(2) {
            assert_eq!(w[1].rho, 3.0 * w[0].rho);
        }
        assert!(trace.records.iter().all(|r| r.u.iter().all(|&a| a >= 0.0)));
    }

    #[test]
    fn optimal_start_stops_immediately() {
        // min (x1 - 1)^2 + y1^2 s.t. y1 - x2 = 0, start at the optimum
        let prob =
            CnfProblem::new("at_opt", 2, 1, (x(0) - 1.0).pow(2.0) + y(0).pow(2.0), vec![], vec![y(0) - x(1)]).unwrap();
        let cfg = AlpfConfig { start: Some(Point::new(vec![1.0, 0.0], vec![0.0])), ..newton_cfg() };
        let trace = solve_alpf(&prob, &cfg).unwrap();
        assert_eq!(trace.records.len(), 1, "{trace:#?}");
        assert!(trace.status.is_success());
    }

    #[test]
    fn penalty_keeps_multipliers_zero() {
        let cfg = AlpfConfig { eps: 1e-5, growth: 10.0, ..newton_cfg() };
        let trace = solve_penalty(&circle(), &cfg).unwrap();
        assert_eq!(trace.status, StopStatus::ApproxStop);
        assert!(trace.records.iter().all(|r| r.u.iter().all(|&a| a == 0.0)));
        for (i, r) in trace.records.iter().enumerate() {
            assert_eq!(r.rho, 10.0 * 10f64.powi(i as i32));
        }
    }

    #[test]
    fn feasible_convex_problem_needs_one_penalty_solve() {
        let prob = CnfProblem::new("bowl", 1, 0, (x(0) - 0.5).pow(2.0), vec![x(0) - 1.0], vec![]).unwrap();
        let trace = solve_penalty(&prob, &newton_cfg()).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert!((trace.records[0].x[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn invalid_config_rejected() {
        let prob = circle();
        for cfg in [
            AlpfConfig { eps: -1.0, ..AlpfConfig::default() },
            AlpfConfig { rho0: 0.0, ..AlpfConfig::default() },
            AlpfConfig { growth: 1.0, ..AlpfConfig::default() },
        ] {
            assert!(matches!(solve_alpf(&prob, &cfg), Err(AlpfError::InvalidConfig(_))));
        }
    }

    #[test]
    fn unbounded_inner_problem_is_inner_failure() {
        let prob = CnfProblem::new("line", 1, 0, x(0), vec![], vec![]).unwrap();
        let trace = solve_alpf(&prob, &AlpfConfig::default()).unwrap();
        assert_eq!(trace.status, StopStatus::InnerFailure);
    }

    #[test]
    fn jsonl_round_trips() {
        let trace = solve_alpf(&circle(), &newton_cfg()).unwrap();
        let back = AlpfTrace::records_from_jsonl(&trace.to_jsonl()).unwrap();
        assert_eq!(back, trace.records);
        let json = serde_json::to_string(&trace).unwrap();
        assert_eq!(serde_json::from_str::<AlpfTrace>(&json).unwrap(), trace);
    }
}
