//! Dense two-phase primal simplex for small linear programs with free
//! variables, plus a brute-force vertex enumeration used as a test oracle.
//!
//! Problems have the form `min cᵀd` subject to `A_ub d ≤ b_ub`,
//! `A_eq d = b_eq`, `d` free. Duals `w` are reported with the convention
//! `c + A_ubᵀ w_ub + A_eqᵀ w_eq = 0`, so `w_ub ≥ 0` at an optimum and the dual
//! objective is `−(b_ubᵀ w_ub + b_eqᵀ w_eq)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 50_000;
/// Largest number of standard-form columns the oracle accepts.
pub const ORACLE_MAX_COLUMNS: usize = 24;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LpProblem {
    pub c: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimal point; for an unbounded problem, the feasible point the ray
    /// starts from; empty when infeasible.
    pub d: Vec<f64>,
    /// `cᵀd` when optimal, `−∞` when unbounded, `+∞` when infeasible.
    pub objective: f64,
    pub duals_ub: Vec<f64>,
    pub duals_eq: Vec<f64>,
    /// Direction `r` with `cᵀr < 0`, `A_ub r ≤ 0`, `A_eq r = 0` when unbounded.
    pub ray: Option<Vec<f64>>,
    /// Optimal phase-one infeasibility (sum of artificials).
    pub phase1_objective: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("inconsistent dimensions: {0}")]
    Dimension(String),
    #[error("non-finite coefficient")]
    NonFinite,
    #[error("simplex exceeded {MAX_PIVOTS} pivots (internal error)")]
    Cycling,
    #[error("oracle supports at most {ORACLE_MAX_COLUMNS} standard-form columns, got {0}")]
    TooLarge(usize),
}

impl LpProblem {
    pub fn new(c: Vec<f64>) -> Self {
        LpProblem { c, ..Default::default() }
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.c.len();
        if self.a_ub.len() != self.b_ub.len() || self.a_eq.len() != self.b_eq.len() {
            return Err(LpError::Dimension("row count differs from right-hand side length".into()));
        }
        if let Some(row) = self.a_ub.iter().chain(&self.a_eq).find(|r| r.len() != n) {
            return Err(LpError::Dimension(format!("row of length {} for {n} variables", row.len())));
        }
        let all = self.c.iter().chain(self.b_ub.iter()).chain(self.b_eq.iter());
        if all.chain(self.a_ub.iter().flatten()).chain(self.a_eq.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite);
        }
        Ok(())
    }

    pub fn objective_at(&self, d: &[f64]) -> f64 {
        dot(&self.c, d)
    }

    /// Largest violation of the constraints at `d`.
    pub fn max_violation(&self, d: &[f64]) -> f64 {
        let ub = self.a_ub.iter().zip(&self.b_ub).map(|(a, b)| (dot(a, d) - b).max(0.0));
        let eq = self.a_eq.iter().zip(&self.b_eq).map(|(a, b)| (dot(a, d) - b).abs());
        ub.chain(eq).fold(0.0, f64::max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn clean(v: f64) -> f64 {
    if v.abs() < 1e-13 {
        0.0
    } else {
        v
    }
}

struct Tableau {
    /// Constraint rows, each of length `cols + 1` (right-hand side last).
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
    pivots: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.t[r][self.cols]
    }

    fn pivot(&mut self, row: usize, col: usize) -> Result<(), LpError> {
        self.pivots += 1;
        if self.pivots > MAX_PIVOTS {
            return Err(LpError::Cycling);
        }
        let p = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[row].clone();
        for (r, other) in self.t.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let k = other[col];
            if k != 0.0 {
                for (v, pv) in other.iter_mut().zip(&pivot_row) {
                    *v -= k * pv;
                }
                other[col] = 0.0;
            }
        }
        self.basis[row] = col;
        Ok(())
    }

    fn reduced_cost(&self, cost: &[f64], j: usize) -> f64 {
        let z: f64 = self.basis.iter().enumerate().map(|(r, &b)| cost[b] * self.t[r][j]).sum();
        cost[j] - z
    }

    /// Runs Bland's rule over columns in `allowed`. Returns the unbounded
    /// entering column if one is found.
    fn optimize(&mut self, cost: &[f64], allowed: &dyn Fn(usize) -> bool) -> Result<Option<usize>, LpError> {
        loop {
            let entering = (0..self.cols).find(|&j| allowed(j) && self.reduced_cost(cost, j) < -COST_TOL);
            let Some(j) = entering else {
                return Ok(None);
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.t.len() {
                let a = self.t[r][j];
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-12 || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr]) {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, j)?,
                None => return Ok(Some(j)),
            }
        }
    }

    fn column_values(&self, total: usize) -> Vec<f64> {
        let mut x = vec![0.0; total];
        for (r, &b) in self.basis.iter().enumerate() {
            x[b] = self.rhs(r);
        }
        x
    }
}

/// Solves the problem with the two-phase simplex method and Bland's rule.
pub fn solve_lp(lp: &LpProblem) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let nv = lp.num_vars();
    let k = lp.a_ub.len();
    let q = lp.a_eq.len();
    let rows = k + q;
    // Columns: d⁺ (nv), d⁻ (nv), slacks (k), artificials (rows).
    let art0 = 2 * nv + k;
    let cols = art0 + rows;
    let mut sign = vec![1.0; rows];
    let mut t = Vec::with_capacity(rows);
    for i in 0..rows {
        let (a, b) = if i < k { (&lp.a_ub[i], lp.b_ub[i]) } else { (&lp.a_eq[i - k], lp.b_eq[i - k]) };
        let s = if b < 0.0 { -1.0 } else { 1.0 };
        sign[i] = s;
        let mut row = vec![0.0; cols + 1];
        for j in 0..nv {
            row[j] = s * a[j];
            row[nv + j] = -s * a[j];
        }
        if i < k {
            row[2 * nv + i] = s;
        }
        row[art0 + i] = 1.0;
        row[cols] = s * b;
        t.push(row);
    }
    let mut tab = Tableau { t, basis: (art0..cols).collect(), cols, pivots: 0 };

    let phase1_cost: Vec<f64> = (0..cols).map(|j| if j >= art0 { 1.0 } else { 0.0 }).collect();
    tab.optimize(&phase1_cost, &|_| true)?;
    let phase1_objective: f64 = tab.basis.iter().enumerate().filter(|(_, &b)| b >= art0).map(|(r, _)| tab.rhs(r)).sum();
    let scale = lp.b_ub.iter().chain(&lp.b_eq).fold(1.0f64, |a, b| a.max(b.abs()));
    if phase1_objective > 1e-9 * scale {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            d: Vec::new(),
            objective: f64::INFINITY,
            duals_ub: Vec::new(),
            duals_eq: Vec::new(),
            ray: None,
            phase1_objective,
        });
    }
    // Drive zero-level artificials out of the basis where possible; rows
    // where that fails are redundant and keep their artificial at zero.
    for r in 0..rows {
        if tab.basis[r] >= art0 {
            if let Some(j) = (0..art0).find(|&j| tab.t[r][j].abs() > PIVOT_TOL) {
                tab.pivot(r, j)?;
            }
        }
    }

    let mut cost = vec![0.0; cols];
    for j in 0..nv {
        cost[j] = lp.c[j];
        cost[nv + j] = -lp.c[j];
    }
    let unbounded = tab.optimize(&cost, &|j| j < art0)?;
    let x = tab.column_values(cols);
    let d: Vec<f64> = (0..nv).map(|j| clean(x[j] - x[nv + j])).collect();
    let pi: Vec<f64> =
        (0..rows).map(|i| tab.basis.iter().enumerate().map(|(r, &b)| cost[b] * tab.t[r][art0 + i]).sum()).collect();
    let w: Vec<f64> = (0..rows).map(|i| clean(-sign[i] * pi[i])).collect();

    if let Some(j) = unbounded {
        let mut dir = vec![0.0; cols];
        dir[j] = 1.0;
        for (r, &b) in tab.basis.iter().enumerate() {
            dir[b] -= tab.t[r][j];
        }
        let ray: Vec<f64> = (0..nv).map(|i| clean(dir[i] - dir[nv + i])).collect();
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            d,
            objective: f64::NEG_INFINITY,
            duals_ub: Vec::new(),
            duals_eq: Vec::new(),
            ray: Some(ray),
            phase1_objective,
        });
    }
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: lp.objective_at(&d),
        d,
        duals_ub: w[..k].to_vec(),
        duals_eq: w[k..].to_vec(),
        ray: None,
        phase1_objective,
    })
}

/// Brute-force solution by enumerating every basis of the standard form
/// `[A, −A, I] (d⁺, d⁻, s) = b`. Independent of [`solve_lp`]; meant for
/// cross-checking small problems. Duals are not computed.
pub fn enumerate_vertices_oracle(lp: &LpProblem) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let nv = lp.num_vars();
    let k = lp.a_ub.len();
    let cols = 2 * nv + k;
    if cols > ORACLE_MAX_COLUMNS {
        return Err(LpError::TooLarge(cols));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    for (i, (a, b)) in lp.a_ub.iter().zip(&lp.b_ub).enumerate() {
        let mut row: Vec<f64> = a.iter().copied().chain(a.iter().map(|v| -v)).collect();
        row.extend((0..k).map(|s| if s == i { 1.0 } else { 0.0 }));
        rows.push(row);
        rhs.push(*b);
    }
    for (a, b) in lp.a_eq.iter().zip(&lp.b_eq) {
        let mut row: Vec<f64> = a.iter().copied().chain(a.iter().map(|v| -v)).collect();
        row.extend(std::iter::repeat_n(0.0, k));
        rows.push(row);
        rhs.push(*b);
    }
    let mut cost: Vec<f64> = lp.c.iter().copied().chain(lp.c.iter().map(|v| -v)).collect();
    cost.extend(std::iter::repeat_n(0.0, k));

    let infeasible = LpSolution {
        status: LpStatus::Infeasible,
        d: Vec::new(),
        objective: f64::INFINITY,
        duals_ub: Vec::new(),
        duals_eq: Vec::new(),
        ray: None,
        phase1_objective: f64::NAN,
    };
    let Some((a, b)) = independent_rows(rows, rhs, cols) else {
        return Ok(infeasible);
    };

    let best = best_vertex(&a, &b, &cost, cols);
    let Some((best_val, best_x)) = best else {
        return Ok(infeasible);
    };
    // Recession directions: vertices of {r ≥ 0, A r = 0, 1ᵀr = 1}.
    let mut ra = a.clone();
    ra.push(vec![1.0; cols]);
    let mut rb = vec![0.0; a.len()];
    rb.push(1.0);
    let d: Vec<f64> = (0..nv).map(|j| best_x[j] - best_x[nv + j]).collect();
    if let Some((ray_val, r)) = best_vertex(&ra, &rb, &cost, cols) {
        if ray_val < -1e-9 {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                d,
                objective: f64::NEG_INFINITY,
                duals_ub: Vec::new(),
                duals_eq: Vec::new(),
                ray: Some((0..nv).map(|j| r[j] - r[nv + j]).collect()),
                phase1_objective: 0.0,
            });
        }
    }
    Ok(LpSolution {
        status: LpStatus::Optimal,
        d,
        objective: best_val,
        duals_ub: Vec::new(),
        duals_eq: Vec::new(),
        ray: None,
        phase1_objective: 0.0,
    })
}

/// Gaussian elimination keeping a maximal independent set of rows. Returns
/// `None` when the system is inconsistent.
fn independent_rows(rows: Vec<Vec<f64>>, rhs: Vec<f64>, cols: usize) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut m: Vec<Vec<f64>> = rows.iter().zip(&rhs).map(|(r, b)| r.iter().copied().chain([*b]).collect()).collect();
    let mut keep = Vec::new();
    let mut used = vec![false; m.len()];
    for col in 0..cols {
        let piv = (0..m.len()).filter(|&r| !used[r]).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()));
        let Some(p) = piv else { break };
        if m[p][col].abs() <= 1e-9 {
            continue;
        }
        used[p] = true;
        keep.push(p);
        let prow = m[p].clone();
        for (r, row) in m.iter_mut().enumerate() {
            if r != p && !used[r] {
                let f = row[col] / prow[col];
                for (v, pv) in row.iter_mut().zip(&prow) {
                    *v -= f * pv;
                }
            }
        }
    }
    for (r, row) in m.iter().enumerate() {
        if !used[r] && row[cols].abs() > 1e-9 {
            return None;
        }
    }
    keep.sort_unstable();
    Some((keep.iter().map(|&r| rows[r].clone()).collect(), keep.iter().map(|&r| rhs[r]).collect()))
}

/// Minimum of `costᵀx` over the basic feasible solutions of `A x = b, x ≥ 0`
/// (`A` with full row rank).
fn best_vertex(a: &[Vec<f64>], b: &[f64], cost: &[f64], cols: usize) -> Option<(f64, Vec<f64>)> {
    let rank = a.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut subset: Vec<usize> = (0..rank).collect();
    if rank > cols {
        return None;
    }
    loop {
        let bm = DMatrix::from_fn(rank, rank, |i, j| a[i][subset[j]]);
        let rhs = DVector::from_column_slice(b);
        let sol = if rank == 0 { Some(DVector::zeros(0)) } else { bm.lu().solve(&rhs) };
        if let Some(xb) = sol {
            let residual = (0..rank)
                .map(|i| (subset.iter().enumerate().map(|(j, &c)| a[i][c] * xb[j]).sum::<f64>() - b[i]).abs())
                .fold(0.0, f64::max);
            if residual < 1e-9 && xb.iter().all(|v| *v >= -1e-9) {
                let mut x = vec![0.0; cols];
                for (j, &c) in subset.iter().enumerate() {
                    x[c] = xb[j].max(0.0);
                }
                let val = dot(cost, &x);
                if best.as_ref().is_none_or(|(bv, _)| val < *bv) {
                    best = Some((val, x));
                }
            }
        }
        if !next_combination(&mut subset, cols) {
            return best;
        }
    }
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}
