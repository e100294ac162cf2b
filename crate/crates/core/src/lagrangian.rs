//! Lagrangian `L = g + uᵀg + vᵀh`, the augmented Lagrangian
//! `A = L + ρ(Σ gᵢ⁺² + Σ hⱼ²)`, the penalty function (zero multipliers) and
//! the dual function `θ(u, v) = min L`.

use serde::{Deserialize, Serialize};

use crate::expr::{ExprError, Point, VarView};
use crate::inner::{self, InnerConfig, InnerError, InnerStatus, Objective};
use crate::model::{CnfProblem, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// `v ∈ Rʳ`, for `L` and `A`.
    VFree,
    /// `v ≥ 0`, for `L₊` and `A₊`.
    VNonneg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub mode: SignMode,
}

#[derive(Debug, thiserror::Error)]
pub enum LagrangianError {
    #[error("multipliers have lengths ({u}, {v}), problem has s = {s}, r = {r}")]
    Dimension { u: usize, v: usize, s: usize, r: usize },
    #[error("invalid multipliers: {0}")]
    InvalidMultipliers(&'static str),
    #[error("penalty parameter must be positive, got {0}")]
    InvalidRho(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Inner(#[from] InnerError),
}

impl Multipliers {
    pub fn new(u: Vec<f64>, v: Vec<f64>, mode: SignMode) -> Result<Self, LagrangianError> {
        if u.iter().any(|a| !(*a >= 0.0)) {
            return Err(LagrangianError::InvalidMultipliers("u must be nonnegative"));
        }
        if mode == SignMode::VNonneg && v.iter().any(|a| !(*a >= 0.0)) {
            return Err(LagrangianError::InvalidMultipliers("v must be nonnegative in v_nonneg mode"));
        }
        if v.iter().any(|a| !a.is_finite()) || u.iter().any(|a| !a.is_finite()) {
            return Err(LagrangianError::InvalidMultipliers("multipliers must be finite"));
        }
        Ok(Multipliers { u, v, mode })
    }

    pub fn zeros(prob: &CnfProblem) -> Self {
        Multipliers { u: vec![0.0; prob.s()], v: vec![0.0; prob.r()], mode: SignMode::VFree }
    }

    fn check(&self, prob: &CnfProblem) -> Result<(), LagrangianError> {
        if self.u.len() != prob.s() || self.v.len() != prob.r() {
            return Err(LagrangianError::Dimension { u: self.u.len(), v: self.v.len(), s: prob.s(), r: prob.r() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    rho: f64,
}

impl PenaltyParams {
    pub fn new(rho: f64) -> Result<Self, LagrangianError> {
        if rho > 0.0 && rho.is_finite() {
            Ok(PenaltyParams { rho })
        } else {
            Err(LagrangianError::InvalidRho(rho))
        }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

pub fn lagrangian(prob: &CnfProblem, p: &Point, mult: &Multipliers) -> Result<f64, LagrangianError> {
    mult.check(prob)?;
    let vals = prob.values(p)?;
    Ok(vals.g + dot(&mult.u, &vals.ineqs) + dot(&mult.v, &vals.eqs))
}

pub fn augmented(prob: &CnfProblem, p: &Point, mult: &Multipliers, pen: PenaltyParams) -> Result<f64, LagrangianError> {
    mult.check(prob)?;
    prob.check_point(p)?;
    let obj = AugmentedObjective::new(prob, &mult.u, &mult.v, pen.rho, p);
    Ok(obj.value(&p.to_flat())?)
}

pub fn augmented_gradient(
    prob: &CnfProblem,
    p: &Point,
    mult: &Multipliers,
    pen: PenaltyParams,
) -> Result<Vec<f64>, LagrangianError> {
    mult.check(prob)?;
    prob.check_point(p)?;
    let obj = AugmentedObjective::new(prob, &mult.u, &mult.v, pen.rho, p);
    Ok(obj.value_and_gradient(&p.to_flat())?.1)
}

/// `g + ρ Σ gᵢ⁺² + ρ Σ hⱼ²`.
pub fn penalty(prob: &CnfProblem, p: &Point, pen: PenaltyParams) -> Result<f64, LagrangianError> {
    augmented(prob, p, &Multipliers::zeros(prob), pen)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `g + uᵀg + vᵀh + c(Σ gᵢ⁺² + Σ hⱼ²)` as a function of a subset of the
/// flattened variables, the rest held at the values of a base point.
///
/// With `c = ρ` this is the augmented Lagrangian; with `c = 0` the Lagrangian.
/// When restricted, constraints that do not touch the free variables are
/// dropped, so values differ from the full function by a constant.
pub struct AugmentedObjective<'a> {
    prob: &'a CnfProblem,
    u: &'a [f64],
    v: &'a [f64],
    c: f64,
    base: Vec<f64>,
    free: Vec<usize>,
    /// Position of each flattened index among the free variables.
    slot: Vec<Option<usize>>,
    ineqs: Vec<usize>,
    eqs: Vec<usize>,
}

impl<'a> AugmentedObjective<'a> {
    /// Full objective over all `n + m` variables.
    pub fn new(prob: &'a CnfProblem, u: &'a [f64], v: &'a [f64], c: f64, base: &Point) -> Self {
        Self::restricted(prob, u, v, c, base, (0..prob.dim()).collect())
    }

    /// Objective over the flattened indices in `free` (sorted, distinct).
    pub fn restricted(
        prob: &'a CnfProblem,
        u: &'a [f64],
        v: &'a [f64],
        c: f64,
        base: &Point,
        free: Vec<usize>,
    ) -> Self {
        let mut slot = vec![None; prob.dim()];
        for (k, &i) in free.iter().enumerate() {
            slot[i] = Some(k);
        }
        let touches = |support: &[usize]| free.len() == prob.dim() || support.iter().any(|&i| slot[i].is_some());
        let ineqs = (0..prob.s()).filter(|&i| touches(prob.ineqs()[i].support())).collect();
        let eqs = (0..prob.r()).filter(|&j| touches(prob.eqs()[j].support())).collect();
        AugmentedObjective { prob, u, v, c, base: base.to_flat(), free, slot, ineqs, eqs }
    }

    /// The full point for the given free-variable values.
    pub fn embed(&self, z: &[f64]) -> Vec<f64> {
        let mut full = self.base.clone();
        for (&i, &val) in self.free.iter().zip(z) {
            full[i] = val;
        }
        full
    }

    pub fn free_values(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| full[i]).collect()
    }

    fn scatter(&self, grad: &mut [f64], support: &[usize], partials: &[f64], w: f64) {
        if w == 0.0 {
            return;
        }
        for (&i, d) in support.iter().zip(partials) {
            if let Some(k) = self.slot[i] {
                grad[k] += w * d;
            }
        }
    }
}

impl Objective for AugmentedObjective<'_> {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn value(&self, z: &[f64]) -> Result<f64, ExprError> {
        let full = self.embed(z);
        let view = VarView::from_flat(&full, self.prob.n());
        let mut a = self.prob.objective().value(view)?;
        for &i in &self.ineqs {
            let gi = self.prob.ineqs()[i].value(view)?;
            let gp = gi.max(0.0);
            a += self.u[i] * gi + self.c * gp * gp;
        }
        for &j in &self.eqs {
            let hj = self.prob.eqs()[j].value(view)?;
            a += self.v[j] * hj + self.c * hj * hj;
        }
        Ok(a)
    }

    fn value_and_gradient(&self, z: &[f64]) -> Result<(f64, Vec<f64>), ExprError> {
        let n = self.prob.n();
        let full = self.embed(z);
        let view = VarView::from_flat(&full, n);
        let mut grad = vec![0.0; self.free.len()];
        let obj = self.prob.objective();
        let (mut a, partials) = obj.value_and_partials(view, n)?;
        self.scatter(&mut grad, obj.support(), &partials, 1.0);
        for &i in &self.ineqs {
            let comp = &self.prob.ineqs()[i];
            let (gi, partials) = comp.value_and_partials(view, n)?;
            let gp = gi.max(0.0);
            a += self.u[i] * gi + self.c * gp * gp;
            self.scatter(&mut grad, comp.support(), &partials, self.u[i] + 2.0 * self.c * gp);
        }
        for &j in &self.eqs {
            let comp = &self.prob.eqs()[j];
            let (hj, partials) = comp.value_and_partials(view, n)?;
            a += self.v[j] * hj + self.c * hj * hj;
            self.scatter(&mut grad, comp.support(), &partials, self.v[j] + 2.0 * self.c * hj);
        }
        Ok((a, grad))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DualOutcome {
    /// Attained minimum. `local` is set when some `vⱼ < 0`, in which case `L`
    /// may be nonconvex and the value is only an upper bound on the infimum.
    Value {
        value: f64,
        point: Point,
        local: bool,
    },
    UnboundedBelow,
    /// The inner solver ran out of iterations without converging or diverging.
    NotConverged {
        value: f64,
        point: Point,
    },
}

/// Evaluates `θ(u, v)` by minimizing `L(·; u, v)` from `start`.
pub fn dual_value(
    prob: &CnfProblem,
    mult: &Multipliers,
    start: &Point,
    cfg: &InnerConfig,
) -> Result<DualOutcome, LagrangianError> {
    mult.check(prob)?;
    prob.check_point(start)?;
    let obj = AugmentedObjective::new(prob, &mult.u, &mult.v, 0.0, start);
    let res = inner::minimize(&obj, &start.to_flat(), cfg)?;
    let point = Point::from_flat(&res.point, prob.n());
    Ok(match res.status {
        InnerStatus::Converged | InnerStatus::Stalled => {
            DualOutcome::Value { value: res.value, point, local: mult.v.iter().any(|&v| v < 0.0) }
        }
        InnerStatus::Diverged => DualOutcome::UnboundedBelow,
        InnerStatus::MaxIters => DualOutcome::NotConverged { value: res.value, point },
    })
}
