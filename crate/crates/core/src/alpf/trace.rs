use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::expr::{Point, NORM0_THRESHOLD};
use crate::inner::InnerStatus;
use crate::model::CnfProblem;

/// State after the inner solve of one outer iteration. `u`, `v` and `rho` are
/// the values the augmented function was built with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub rho: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    #[serde(rename = "A")]
    pub a: f64,
    pub g: f64,
    /// `‖g⁺‖ + ‖h‖`.
    pub e: f64,
    /// `|A − g|`.
    pub gap: f64,
    pub inner_status: InnerStatus,
    #[serde(default)]
    pub inner_iterations: usize,
}

impl IterationRecord {
    pub fn point(&self) -> Point {
        Point::new(self.x.clone(), self.y.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopStatus {
    /// Complementary, feasible, and the Lagrangian passed the sampled
    /// convexity test.
    KktStop,
    /// `|A − g| < ε` and `e < ε` (or `e < ε` alone for the penalty and
    /// decomposed loops).
    ApproxStop,
    MaxOuter,
    InnerFailure,
}

impl StopStatus {
    pub fn is_success(self) -> bool {
        matches!(self, StopStatus::KktStop | StopStatus::ApproxStop)
    }
}

/// Post-run checks computed at the last iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `‖∇g + Σ ūᵢ∇gᵢ + Σ v̄ⱼ∇hⱼ‖ / γ` with `ū = u + 2ρg⁺`, `v̄ = v + 2ρh`
    /// and `γ = 1 + Σ ūᵢ + Σ |v̄ⱼ|`.
    pub normalized_residual: f64,
    pub gamma: f64,
    /// Indices `i` with `gᵢ < −1e-3` at the last iterate but `uᵢ > 1e-6`.
    pub inactive_with_multiplier: Vec<usize>,
    /// Iterations `k` (of a successful inner solve) where `e` rose by more
    /// than `1e-6` over the previous iteration.
    pub infeasibility_increases: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlpfTrace {
    pub records: Vec<IterationRecord>,
    pub status: StopStatus,
    pub diagnostics: Option<Diagnostics>,
}

impl AlpfTrace {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn final_point(&self) -> Option<Point> {
        self.last().map(IterationRecord::point)
    }

    pub fn outer_iterations(&self) -> usize {
        self.records.len()
    }

    /// One JSON object per line, one line per record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out += &serde_json::to_string(r).expect("records serialize");
            out.push('\n');
        }
        out
    }

    pub fn records_from_jsonl(text: &str) -> Result<Vec<IterationRecord>, serde_json::Error> {
        text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
    }
}

/// Number of entries with `|xᵢ| > NORM0_THRESHOLD`.
pub fn thresholded_norm0(x: &[f64]) -> usize {
    x.iter().filter(|v| v.abs() > NORM0_THRESHOLD).count()
}

/// An extra per-iteration quantity shown as its own table column.
pub struct Column<'a> {
    pub title: &'a str,
    pub value: &'a dyn Fn(&Point) -> f64,
}

/// Fixed-width table with columns `k`, `rho`, `x`, `f(x)`, `‖x‖₀`, `g`, any
/// extra columns, and `e`. `f(x)` is blank when the problem has no reference.
pub fn format_table(trace: &AlpfTrace, prob: &CnfProblem, extra: &[Column<'_>]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:>3} {:>10} {:>12} {:>8} {:>12}", "k", "rho", "f(x)", "|x|_0", "g");
    for c in extra {
        let _ = write!(out, " {:>12}", c.title);
    }
    let _ = writeln!(out, " {:>12}  x", "e");
    for r in &trace.records {
        let f = prob
            .reference()
            .and_then(|_| prob.reference_value(&r.x).ok())
            .map(|f| format!("{f:.4}"))
            .unwrap_or_default();
        let _ = write!(out, "{:>3} {:>10} {:>12} {:>8} {:>12.4}", r.k, fmt_g(r.rho), f, thresholded_norm0(&r.x), r.g);
        let p = r.point();
        for c in extra {
            let _ = write!(out, " {:>12.4}", (c.value)(&p));
        }
        let xs: Vec<String> = r.x.iter().map(|v| format!("{v:.4}")).collect();
        let _ = writeln!(out, " {:>12.4e}  ({})", r.e, xs.join(","));
    }
    out
}

fn fmt_g(v: f64) -> String {
    if v.abs() >= 1e6 || (v != 0.0 && v.abs() < 1e-3) {
        format!("{v:.3e}")
    } else {
        format!("{v}")
    }
}
