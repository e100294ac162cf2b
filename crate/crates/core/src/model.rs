//! Convertible nonconvex forms `[g : g_1, ..., g_s ; h_1, ..., h_r]` over the
//! lifted space `(x, y)`, with feasibility, exactness and convexity checks and
//! a line-oriented text format.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{self, Block, Dims, Expr, ExprError, ParseError, ParseErrorKind, Point, VarView};

/// Default sampling box per coordinate.
pub const DEFAULT_BOX: (f64, f64) = (-5.0, 5.0);

/// Maps `x` to a lifted `y` for which the constraints hold and `g = f`.
pub type LiftMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("{component}: expression contains {node}, which is not allowed in a lifted component")]
    Nonsmooth { component: String, node: &'static str },
    #[error("{component}: references variables beyond x[{n}] / y[{m}]")]
    OutOfRange { component: String, n: usize, m: usize },
    #[error("reference objective must depend on x only")]
    ReferenceUsesY,
    #[error("point has dimensions ({got_n}, {got_m}), problem expects ({n}, {m})")]
    Dimension { n: usize, m: usize, got_n: usize, got_m: usize },
    #[error("lift map returned {got} lifted values, expected {m}")]
    LiftDimension { m: usize, got: usize },
    #[error("problem `{0}` has no lift map")]
    MissingLift(String),
    #[error("problem `{0}` has no reference objective")]
    MissingReference(String),
    #[error("invalid box [{0}, {1}]")]
    InvalidBox(f64, f64),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// One component function together with the flattened indices it depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    expr: Expr,
    support: Vec<usize>,
}

impl Component {
    fn new(expr: Expr, n: usize, m: usize) -> Self {
        let support = expr.support(n, m);
        Component { expr, support }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    /// Sorted flattened indices of the variables this component reads.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn value(&self, p: VarView<'_>) -> Result<f64, ExprError> {
        self.expr.eval(p)
    }

    /// Value and the partial derivatives with respect to `support()`.
    pub fn value_and_partials(&self, p: VarView<'_>, n: usize) -> Result<(f64, Vec<f64>), ExprError> {
        self.expr.eval_with_gradient(p, &self.support, n)
    }

    /// Value and dense gradient over the flattened `(x, y)` vector.
    pub fn value_and_gradient(&self, p: VarView<'_>) -> Result<(f64, Vec<f64>), ExprError> {
        let n = p.x.len();
        let (v, partials) = self.value_and_partials(p, n)?;
        let mut grad = vec![0.0; n + p.y.len()];
        for (&i, d) in self.support.iter().zip(partials) {
            grad[i] = d;
        }
        Ok((v, grad))
    }
}

/// Component values at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Values {
    pub g: f64,
    pub ineqs: Vec<f64>,
    pub eqs: Vec<f64>,
}

impl Values {
    /// `‖g⁺‖₂ + ‖h‖₂`.
    pub fn infeasibility(&self) -> f64 {
        let gp: f64 = self.ineqs.iter().map(|v| v.max(0.0).powi(2)).sum();
        let h: f64 = self.eqs.iter().map(|v| v * v).sum();
        gp.sqrt() + h.sqrt()
    }

    pub fn max_ineq_violation(&self) -> f64 {
        self.ineqs.iter().fold(0.0, |a, v| a.max(v.max(0.0)))
    }

    pub fn max_eq_residual(&self) -> f64 {
        self.eqs.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub max_ineq_violation: f64,
    pub max_eq_residual: f64,
    pub in_xf: bool,
    pub exactness_gap: Option<f64>,
}

#[derive(Clone)]
pub struct CnfProblem {
    name: String,
    n: usize,
    m: usize,
    objective: Component,
    ineqs: Vec<Component>,
    eqs: Vec<Component>,
    reference: Option<Expr>,
    exact: bool,
    lift: Option<LiftMap>,
    bounds: Option<(f64, f64)>,
}

impl fmt::Debug for CnfProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CnfProblem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("s", &self.ineqs.len())
            .field("r", &self.eqs.len())
            .field("exact", &self.exact)
            .field("has_lift", &self.lift.is_some())
            .finish()
    }
}

fn check_component(label: String, e: &Expr, n: usize, m: usize) -> Result<(), ModelError> {
    if let Some(node) = e.nonsmooth_node() {
        return Err(ModelError::Nonsmooth { component: label, node });
    }
    let (dn, dm) = e.max_index();
    if dn > n || dm > m {
        return Err(ModelError::OutOfRange { component: label, n, m });
    }
    Ok(())
}

impl CnfProblem {
    /// Builds a form, checking that every component is smooth and in range.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        m: usize,
        objective: Expr,
        ineqs: Vec<Expr>,
        eqs: Vec<Expr>,
    ) -> Result<Self, ModelError> {
        check_component("objective".into(), &objective, n, m)?;
        for (i, e) in ineqs.iter().enumerate() {
            check_component(format!("ineq {}", i + 1), e, n, m)?;
        }
        for (j, e) in eqs.iter().enumerate() {
            check_component(format!("eq {}", j + 1), e, n, m)?;
        }
        Ok(CnfProblem {
            name: name.into(),
            n,
            m,
            objective: Component::new(objective, n, m),
            ineqs: ineqs.into_iter().map(|e| Component::new(e, n, m)).collect(),
            eqs: eqs.into_iter().map(|e| Component::new(e, n, m)).collect(),
            reference: None,
            exact: false,
            lift: None,
            bounds: None,
        })
    }

    pub fn with_reference(mut self, f: Expr) -> Result<Self, ModelError> {
        if f.references_block(Block::Y) {
            return Err(ModelError::ReferenceUsesY);
        }
        if f.max_index().0 > self.n {
            return Err(ModelError::OutOfRange { component: "reference".into(), n: self.n, m: 0 });
        }
        self.reference = Some(f);
        Ok(self)
    }

    pub fn with_lift(mut self, lift: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.lift = Some(Arc::new(lift));
        self
    }

    pub fn with_exact(mut self, exact: bool) -> Self {
        self.exact = exact;
        self
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Result<Self, ModelError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ModelError::InvalidBox(lo, hi));
        }
        self.bounds = Some((lo, hi));
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of inequality constraints `s`.
    pub fn s(&self) -> usize {
        self.ineqs.len()
    }

    /// Number of equality constraints `r`.
    pub fn r(&self) -> usize {
        self.eqs.len()
    }

    pub fn dim(&self) -> usize {
        self.n + self.m
    }

    pub fn objective(&self) -> &Component {
        &self.objective
    }

    pub fn ineqs(&self) -> &[Component] {
        &self.ineqs
    }

    pub fn eqs(&self) -> &[Component] {
        &self.eqs
    }

    pub fn reference(&self) -> Option<&Expr> {
        self.reference.as_ref()
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn has_lift(&self) -> bool {
        self.lift.is_some()
    }

    /// Declared sampling box, or [`DEFAULT_BOX`].
    pub fn bounds(&self) -> (f64, f64) {
        self.bounds.unwrap_or(DEFAULT_BOX)
    }

    pub fn declared_bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }

    pub fn check_point(&self, p: &Point) -> Result<(), ModelError> {
        if p.x.len() != self.n || p.y.len() != self.m {
            return Err(ModelError::Dimension { n: self.n, m: self.m, got_n: p.x.len(), got_m: p.y.len() });
        }
        Ok(())
    }

    pub fn values(&self, p: &Point) -> Result<Values, ModelError> {
        self.check_point(p)?;
        self.values_view(p.view())
    }

    pub(crate) fn values_view(&self, v: VarView<'_>) -> Result<Values, ModelError> {
        Ok(Values {
            g: self.objective.value(v)?,
            ineqs: self.ineqs.iter().map(|c| c.value(v)).collect::<Result<_, _>>()?,
            eqs: self.eqs.iter().map(|c| c.value(v)).collect::<Result<_, _>>()?,
        })
    }

    /// Reference objective `f(x)`.
    pub fn reference_value(&self, x: &[f64]) -> Result<f64, ModelError> {
        let f = self.reference.as_ref().ok_or_else(|| ModelError::MissingReference(self.name.clone()))?;
        Ok(f.eval(VarView::new(x, &[]))?)
    }

    /// Lifts `x` to a point of the lifted feasible set.
    pub fn lift(&self, x: &[f64]) -> Result<Point, ModelError> {
        let lift = self.lift.as_ref().ok_or_else(|| ModelError::MissingLift(self.name.clone()))?;
        if x.len() != self.n {
            return Err(ModelError::Dimension { n: self.n, m: self.m, got_n: x.len(), got_m: self.m });
        }
        let y = lift(x);
        if y.len() != self.m {
            return Err(ModelError::LiftDimension { m: self.m, got: y.len() });
        }
        Ok(Point::new(x.to_vec(), y))
    }

    pub fn check_feasible(&self, p: &Point, tol: f64) -> Result<FeasibilityReport, ModelError> {
        let v = self.values(p)?;
        let max_ineq_violation = v.max_ineq_violation();
        let max_eq_residual = v.max_eq_residual();
        let exactness_gap = match &self.reference {
            Some(_) => Some((v.g - self.reference_value(&p.x)?).abs()),
            None => None,
        };
        Ok(FeasibilityReport {
            max_ineq_violation,
            max_eq_residual,
            in_xf: max_ineq_violation <= tol && max_eq_residual <= tol,
            exactness_gap,
        })
    }

    /// Largest `|g(x, lift(x)) − f(x)|` over `samples` uniform draws of `x`
    /// from the problem box.
    pub fn validate_exactness(&self, samples: usize, seed: u64) -> Result<f64, ModelError> {
        if self.reference.is_none() {
            return Err(ModelError::MissingReference(self.name.clone()));
        }
        if self.lift.is_none() {
            return Err(ModelError::MissingLift(self.name.clone()));
        }
        let (lo, hi) = self.bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let x: Vec<f64> = (0..self.n).map(|_| rng.random_range(lo..hi)).collect();
            let p = self.lift(&x)?;
            let g = self.objective.value(p.view())?;
            worst = worst.max((g - self.reference_value(&x)?).abs());
        }
        Ok(worst)
    }

    /// Number of sampled pairs that violate midpoint convexity for at least
    /// one of `g`, `g_i`, `h_j`. Uses `bounds` or the problem box.
    pub fn sample_convexity(&self, samples: usize, seed: u64, bounds: Option<(f64, f64)>) -> usize {
        let (lo, hi) = bounds.unwrap_or_else(|| self.bounds());
        let comps: Vec<&Component> = std::iter::once(&self.objective).chain(&self.ineqs).chain(&self.eqs).collect();
        let n = self.n;
        midpoint_violations(self.dim(), samples, seed, (lo, hi), comps.len(), |z, k| {
            comps[k].value(VarView::from_flat(z, n)).ok()
        })
    }

    /// Serializes the form in the problem text format. The lift map is not
    /// representable and is dropped.
    pub fn to_text(&self) -> String {
        let mut out = format!("problem \"{}\"\nvar x {}\naux y {}\n", self.name, self.n, self.m);
        out += &format!("objective: {}\n", self.objective.expr);
        for c in &self.ineqs {
            out += &format!("ineq: {}\n", c.expr);
        }
        for c in &self.eqs {
            out += &format!("eq: {}\n", c.expr);
        }
        if let Some(f) = &self.reference {
            out += &format!("reference: {f}\n");
        }
        out += &format!("exact: {}\n", self.exact);
        if let Some((lo, hi)) = self.bounds {
            out += &format!("box: {lo} {hi}\n");
        }
        out
    }

    /// Parses the problem text format.
    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        parse_problem(text)
    }
}

/// Counts sampled pairs `(p, q)` in `box^dim` for which some function `k`
/// (of `count`) has `φ((p+q)/2) > (φ(p)+φ(q))/2 + 1e-10·max(1, |φ average|)`.
/// A function that cannot be evaluated at one of the three points counts as
/// a violation.
pub fn midpoint_violations(
    dim: usize,
    samples: usize,
    seed: u64,
    (lo, hi): (f64, f64),
    count: usize,
    mut phi: impl FnMut(&[f64], usize) -> Option<f64>,
) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..samples {
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(lo..hi)).collect();
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(lo..hi)).collect();
        let mid: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        let bad = (0..count).any(|k| match (phi(&p, k), phi(&q, k), phi(&mid, k)) {
            (Some(a), Some(b), Some(c)) => {
                let avg = 0.5 * (a + b);
                c > avg + 1e-10 * avg.abs().max(1.0)
            }
            _ => true,
        });
        if bad {
            violations += 1;
        }
    }
    violations
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> ModelError {
    ModelError::Parse(ParseError { line, col, kind: ParseErrorKind::Syntax(msg.into()) })
}

fn parse_problem(text: &str) -> Result<CnfProblem, ModelError> {
    // (line number, column of the value, keyword, value)
    let mut entries: Vec<(usize, usize, &str, &str)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let trimmed = line.trim_start();
        if trimmed.trim().is_empty() {
            continue;
        }
        let indent = line.len() - trimmed.len();
        let key_end = trimmed.find(|c: char| c == ':' || c.is_whitespace()).unwrap_or(trimmed.len());
        let key = &trimmed[..key_end];
        let mut rest = &trimmed[key_end..];
        if rest.starts_with(':') {
            rest = &rest[1..];
        }
        let value_start = indent + key_end + (trimmed.len() - key_end - rest.len());
        let value = rest.trim_start();
        let col = value_start + (rest.len() - value.len()) + 1;
        entries.push((i + 1, col, key, value.trim_end()));
    }

    let mut name = None;
    let mut n = None;
    let mut m = 0;
    for &(line, col, key, value) in &entries {
        match key {
            "problem" => {
                let v = value.strip_prefix('"').and_then(|v| v.strip_suffix('"'));
                name = Some(v.ok_or_else(|| syntax(line, col, "problem name must be quoted"))?.to_string());
            }
            "var" | "aux" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                let expected = if key == "var" { "x" } else { "y" };
                let size = match parts.as_slice() {
                    [b, k] if *b == expected => k.parse::<usize>().ok(),
                    _ => None,
                }
                .ok_or_else(|| syntax(line, col, format!("expected `{key} {expected} <size>`")))?;
                if key == "var" {
                    n = Some(size);
                } else {
                    m = size;
                }
            }
            _ => {}
        }
    }
    let n = n.ok_or_else(|| syntax(1, 1, "missing `var x <n>` declaration"))?;
    let dims = Dims { n, m };
    let parse_at = |line: usize, col: usize, value: &str, dims: Dims| {
        expr::parse(value, Some(dims)).map_err(|e| {
            ModelError::Parse(ParseError {
                line: line + e.line - 1,
                col: if e.line == 1 { col + e.col - 1 } else { e.col },
                kind: e.kind,
            })
        })
    };

    let mut objective = None;
    let mut ineqs = Vec::new();
    let mut eqs = Vec::new();
    let mut reference = None;
    let mut exact = false;
    let mut bounds = None;
    for &(line, col, key, value) in &entries {
        match key {
            "problem" | "var" | "aux" => {}
            "objective" => objective = Some(parse_at(line, col, value, dims)?),
            "ineq" => ineqs.push(parse_at(line, col, value, dims)?),
            "eq" => eqs.push(parse_at(line, col, value, dims)?),
            "reference" => reference = Some(parse_at(line, col, value, Dims { n, m: 0 })?),
            "exact" => {
                exact = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(syntax(line, col, "expected `true` or `false`")),
                }
            }
            "box" => {
                let parts: Vec<f64> = value
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| syntax(line, col, "expected `box: <lo> <hi>`"))?;
                match parts.as_slice() {
                    [lo, hi] => bounds = Some((*lo, *hi)),
                    _ => return Err(syntax(line, col, "expected `box: <lo> <hi>`")),
                }
            }
            other => return Err(syntax(line, 1, format!("unknown keyword `{other}`"))),
        }
    }
    let objective = objective.ok_or_else(|| syntax(1, 1, "missing `objective:` line"))?;
    let mut prob =
        CnfProblem::new(name.unwrap_or_else(|| "unnamed".into()), n, m, objective, ineqs, eqs)?.with_exact(exact);
    if let Some(f) = reference {
        prob = prob.with_reference(f)?;
    }
    if let Some((lo, hi)) = bounds {
        prob = prob.with_bounds(lo, hi)?;
    }
    Ok(prob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{x, y};

    fn tiny() -> CnfProblem {
        // f(x) = |x1| as min y1 s.t. x1 - y1 <= 0, -x1 - y1 <= 0.
        CnfProblem::new("abs", 1, 1, y(0), vec![x(0) - y(0), -x(0) - y(0)], vec![])
            .unwrap()
            .with_reference(x(0).abs())
            .unwrap()
            .with_lift(|x| vec![x[0].abs()])
            .with_exact(true)
    }

    #[test]
    fn rejects_nonsmooth_components() {
        let err = CnfProblem::new("bad", 1, 0, x(0).abs(), vec![], vec![]).unwrap_err();
        assert!(matches!(err, ModelError::Nonsmooth { node: "abs", .. }));
        let err = CnfProblem::new("bad", 1, 0, y(0), vec![], vec![]).unwrap_err();
        assert!(matches!(err, ModelError::OutOfRange { .. }));
        let prob = CnfProblem::new("p", 1, 1, y(0), vec![], vec![]).unwrap();
        assert!(matches!(prob.with_reference(y(0)), Err(ModelError::ReferenceUsesY)));
    }

    #[test]
    fn unconstrained_problem_is_always_feasible() {
        let prob = CnfProblem::new("q", 2, 0, x(0).pow(2.0) + x(1).pow(2.0), vec![], vec![]).unwrap();
        let rep = prob.check_feasible(&Point::new(vec![3.0, -1.0], vec![]), 1e-8).unwrap();
        assert!(rep.in_xf);
        assert_eq!(rep.max_ineq_violation, 0.0);
        assert_eq!(rep.max_eq_residual, 0.0);
        assert_eq!(rep.exactness_gap, None);
    }

    #[test]
    fn feasibility_report_and_gap() {
        let prob = tiny();
        let rep = prob.check_feasible(&Point::new(vec![-2.0], vec![1.5]), 1e-8).unwrap();
        assert!(!rep.in_xf);
        assert_eq!(rep.max_ineq_violation, 0.5);
        assert_eq!(rep.exactness_gap, Some(0.5));
        let p = prob.lift(&[-2.0]).unwrap();
        assert!(prob.check_feasible(&p, 1e-12).unwrap().in_xf);
        assert!(matches!(prob.check_feasible(&Point::zeros(2, 1), 1e-8), Err(ModelError::Dimension { .. })));
    }

    #[test]
    fn exactness_of_small_lift() {
        assert_eq!(tiny().validate_exactness(100, 7).unwrap(), 0.0);
        let constant = CnfProblem::new("c", 1, 0, constant_expr(4.0), vec![], vec![])
            .unwrap()
            .with_reference(constant_expr(4.0))
            .unwrap()
            .with_lift(|_| vec![]);
        assert_eq!(constant.validate_exactness(10, 1).unwrap(), 0.0);
        let no_lift = CnfProblem::new("c", 1, 0, x(0), vec![], vec![]).unwrap().with_reference(x(0)).unwrap();
        assert!(matches!(no_lift.validate_exactness(1, 1), Err(ModelError::MissingLift(_))));
    }

    fn constant_expr(v: f64) -> Expr {
        Expr::Const(v)
    }

    #[test]
    fn convexity_sampling() {
        assert_eq!(tiny().sample_convexity(200, 3, None), 0);
        let concave = CnfProblem::new("c", 1, 0, x(0), vec![], vec![-(x(0).pow(2.0))]).unwrap();
        assert!(concave.sample_convexity(200, 3, None) > 0);
        let affine = CnfProblem::new("a", 2, 1, 3.0 * x(0) - x(1) + 0.5 * y(0), vec![x(0) - 1.0], vec![]).unwrap();
        assert_eq!(affine.sample_convexity(500, 11, Some((-100.0, 100.0))), 0);
    }

    #[test]
    fn text_round_trip() {
        let prob = tiny().with_bounds(-3.0, 3.0).unwrap();
        let text = prob.to_text();
        let back = CnfProblem::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.s(), 2);
        assert!(back.is_exact());
        assert_eq!(back.bounds(), (-3.0, 3.0));
    }

    #[test]
    fn text_format_details() {
        let text =
            "# comment\nproblem \"demo\"\nvar x 2\n\nobjective: x[1]^2 + x[2]^2  # trailing\neq: x[1] + x[2] - 1\n";
        let prob = CnfProblem::from_text(text).unwrap();
        assert_eq!((prob.n(), prob.m(), prob.s(), prob.r()), (2, 0, 0, 1));
        assert!(!prob.is_exact());
        assert_eq!(prob.bounds(), DEFAULT_BOX);

        let err = CnfProblem::from_text("var x 2\nobjective: x[1] + x[3]\n").unwrap_err();
        match err {
            ModelError::Parse(e) => {
                assert_eq!((e.line, e.col), (2, 19));
                assert!(matches!(e.kind, ParseErrorKind::IndexOutOfRange { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(CnfProblem::from_text("objective: 1\n").is_err());
        assert!(CnfProblem::from_text("var x 1\n").is_err());
        assert!(CnfProblem::from_text("var x 1\nobjective: x[1]\nfoo: 1\n").is_err());
        assert!(CnfProblem::from_text("var x 1\naux y 1\nobjective: y[1]\nreference: y[1]\n").is_err());
        assert!(CnfProblem::from_text("var x 1\nobjective: abs(x[1])\n").is_err());
    }
}
