use std::fmt;

use super::{is_integer_exponent, Expr, VarRef, VarView};

/// Entries with magnitude at or below this value count as zero in `norm0`.
pub const NORM0_THRESHOLD: f64 = 1e-6;

/// Location of a node: the sequence of child positions from the root.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodePath(pub Vec<usize>);

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("root")?;
        for i in &self.0 {
            write!(f, ".{i}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("domain error at node {path}: {reason} (argument {argument})")]
    Domain { path: NodePath, reason: &'static str, argument: f64 },
    #[error("expression is not in the smooth dialect: contains {0}")]
    Nonsmooth(&'static str),
    #[error("variable {var} is outside the point dimensions (n = {n}, m = {m})")]
    UnboundVariable { var: VarRef, n: usize, m: usize },
}

fn domain(path: &[usize], reason: &'static str, argument: f64) -> ExprError {
    ExprError::Domain { path: NodePath(path.to_vec()), reason, argument }
}

fn power(base: f64, exponent: f64, path: &[usize]) -> Result<f64, ExprError> {
    if is_integer_exponent(exponent) {
        if base == 0.0 && exponent < 0.0 {
            return Err(domain(path, "negative power of zero", base));
        }
        Ok(base.powi(exponent as i32))
    } else {
        if base < 0.0 {
            return Err(domain(path, "fractional power of a negative base", base));
        }
        Ok(base.powf(exponent))
    }
}

impl Expr {
    /// Evaluates the expression at `vars`.
    pub fn eval<'a>(&self, vars: impl Into<VarView<'a>>) -> Result<f64, ExprError> {
        let vars = vars.into();
        let mut path = Vec::new();
        self.eval_at(&vars, &mut path)
    }

    fn eval_at(&self, vars: &VarView<'_>, path: &mut Vec<usize>) -> Result<f64, ExprError> {
        let child = |i: usize, e: &Expr, path: &mut Vec<usize>| {
            path.push(i);
            let r = e.eval_at(vars, path);
            path.pop();
            r
        };
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(v) => {
                vars.get(*v).ok_or(ExprError::UnboundVariable { var: *v, n: vars.x.len(), m: vars.y.len() })?
            }
            Expr::Neg(a) => -child(0, a, path)?,
            Expr::Abs(a) => child(0, a, path)?.abs(),
            Expr::Sqrt(a) => {
                let v = child(0, a, path)?;
                if v < 0.0 {
                    return Err(domain(path, "square root of a negative number", v));
                }
                v.sqrt()
            }
            Expr::Add(a, b) => child(0, a, path)? + child(1, b, path)?,
            Expr::Sub(a, b) => child(0, a, path)? - child(1, b, path)?,
            Expr::Mul(a, b) => child(0, a, path)? * child(1, b, path)?,
            Expr::Div(a, b) => {
                let num = child(0, a, path)?;
                let den = child(1, b, path)?;
                if den == 0.0 {
                    return Err(domain(path, "division by zero", den));
                }
                num / den
            }
            Expr::Pow(a, p) => power(child(0, a, path)?, *p, path)?,
            Expr::Sum(terms) => {
                let mut s = 0.0;
                for (i, t) in terms.iter().enumerate() {
                    s += child(i, t, path)?;
                }
                s
            }
            Expr::Max(terms) => {
                let mut best = f64::NEG_INFINITY;
                for (i, t) in terms.iter().enumerate() {
                    best = best.max(child(i, t, path)?);
                }
                best
            }
            Expr::Norm0(block) => vars.block(*block).iter().filter(|v| v.abs() > NORM0_THRESHOLD).count() as f64,
        })
    }

    /// Dense gradient with respect to the flattened `(x, y)` vector, x-block
    /// first. Requires the smooth dialect.
    pub fn gradient<'a>(&self, vars: impl Into<VarView<'a>>) -> Result<Vec<f64>, ExprError> {
        if let Some(node) = self.nonsmooth_node() {
            return Err(ExprError::Nonsmooth(node));
        }
        let vars = vars.into();
        let n = vars.x.len();
        let active: Vec<usize> = (0..n + vars.y.len()).collect();
        Ok(self.eval_with_gradient(vars, &active, n)?.1)
    }

    /// Value together with the partial derivatives with respect to the
    /// flattened indices listed in `active` (sorted ascending). Variables not
    /// listed are treated as constants. The dialect is not re-checked here;
    /// nonsmooth nodes produce [`ExprError::Nonsmooth`] when reached.
    pub fn eval_with_gradient(
        &self,
        vars: VarView<'_>,
        active: &[usize],
        n: usize,
    ) -> Result<(f64, Vec<f64>), ExprError> {
        let mut ctx = Forward { vars, active, n, path: Vec::new() };
        let d = ctx.run(self)?;
        let grad = if d.d.is_empty() { vec![0.0; active.len()] } else { d.d };
        Ok((d.v, grad))
    }
}

/// Value and tangent vector; an empty tangent stands for zero.
struct Dual {
    v: f64,
    d: Vec<f64>,
}

impl Dual {
    fn constant(v: f64) -> Self {
        Dual { v, d: Vec::new() }
    }

    fn scale(mut self, k: f64, v: f64) -> Dual {
        self.d.iter_mut().for_each(|t| *t *= k);
        self.v = v;
        self
    }
}

/// `a*da + b*db`, reusing whichever buffer is non-empty.
fn combine(a: f64, da: Vec<f64>, b: f64, db: Vec<f64>) -> Vec<f64> {
    match (da.is_empty(), db.is_empty()) {
        (true, true) => Vec::new(),
        (false, true) => {
            let mut da = da;
            da.iter_mut().for_each(|t| *t *= a);
            da
        }
        (true, false) => {
            let mut db = db;
            db.iter_mut().for_each(|t| *t *= b);
            db
        }
        (false, false) => {
            let mut da = da;
            for (t, s) in da.iter_mut().zip(&db) {
                *t = a * *t + b * s;
            }
            da
        }
    }
}

struct Forward<'a> {
    vars: VarView<'a>,
    active: &'a [usize],
    n: usize,
    path: Vec<usize>,
}

impl Forward<'_> {
    fn child(&mut self, i: usize, e: &Expr) -> Result<Dual, ExprError> {
        self.path.push(i);
        let r = self.run(e);
        self.path.pop();
        r
    }

    fn run(&mut self, e: &Expr) -> Result<Dual, ExprError> {
        Ok(match e {
            Expr::Const(c) => Dual::constant(*c),
            Expr::Var(v) => {
                let value = self.vars.get(*v).ok_or(ExprError::UnboundVariable {
                    var: *v,
                    n: self.vars.x.len(),
                    m: self.vars.y.len(),
                })?;
                match self.active.binary_search(&v.global(self.n)) {
                    Ok(pos) => {
                        let mut d = vec![0.0; self.active.len()];
                        d[pos] = 1.0;
                        Dual { v: value, d }
                    }
                    Err(_) => Dual::constant(value),
                }
            }
            Expr::Neg(a) => {
                let a = self.child(0, a)?;
                let v = -a.v;
                a.scale(-1.0, v)
            }
            Expr::Sqrt(a) => {
                let a = self.child(0, a)?;
                if a.v < 0.0 || (a.v == 0.0 && !a.d.is_empty()) {
                    return Err(domain(&self.path, "square root not differentiable here", a.v));
                }
                let r = a.v.sqrt();
                let k = if a.d.is_empty() { 0.0 } else { 0.5 / r };
                a.scale(k, r)
            }
            Expr::Add(a, b) => {
                let a = self.child(0, a)?;
                let b = self.child(1, b)?;
                Dual { v: a.v + b.v, d: combine(1.0, a.d, 1.0, b.d) }
            }
            Expr::Sub(a, b) => {
                let a = self.child(0, a)?;
                let b = self.child(1, b)?;
                Dual { v: a.v - b.v, d: combine(1.0, a.d, -1.0, b.d) }
            }
            Expr::Mul(a, b) => {
                let a = self.child(0, a)?;
                let b = self.child(1, b)?;
                Dual { v: a.v * b.v, d: combine(b.v, a.d, a.v, b.d) }
            }
            Expr::Div(a, b) => {
                let a = self.child(0, a)?;
                let b = self.child(1, b)?;
                if b.v == 0.0 {
                    return Err(domain(&self.path, "division by zero", b.v));
                }
                let q = a.v / b.v;
                Dual { v: q, d: combine(1.0 / b.v, a.d, -q / b.v, b.d) }
            }
            Expr::Pow(a, p) => {
                let a = self.child(0, a)?;
                if !is_integer_exponent(*p) {
                    return Err(ExprError::Nonsmooth("fractional power"));
                }
                let v = power(a.v, *p, &self.path)?;
                let k = if *p == 0.0 { 0.0 } else { p * power(a.v, p - 1.0, &self.path)? };
                a.scale(k, v)
            }
            Expr::Sum(terms) => {
                let mut acc = Dual::constant(0.0);
                for (i, t) in terms.iter().enumerate() {
                    let t = self.child(i, t)?;
                    acc = Dual { v: acc.v + t.v, d: combine(1.0, acc.d, 1.0, t.d) };
                }
                acc
            }
            Expr::Abs(_) => return Err(ExprError::Nonsmooth("abs")),
            Expr::Max(_) => return Err(ExprError::Nonsmooth("max")),
            Expr::Norm0(_) => return Err(ExprError::Nonsmooth("norm0")),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{norm0, x, y, Block, Point};

    fn central_difference(e: &Expr, p: &Point, h: f64) -> Vec<f64> {
        let n = p.x.len();
        let z = p.to_flat();
        (0..z.len())
            .map(|i| {
                let mut hi = z.clone();
                let mut lo = z.clone();
                hi[i] += h;
                lo[i] -= h;
                let fh = e.eval(&Point::from_flat(&hi, n)).unwrap();
                let fl = e.eval(&Point::from_flat(&lo, n)).unwrap();
                (fh - fl) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn lifted_objective_vanishes_at_origin() {
        let e = 2.0 * x(0).pow(2.0) - 1.05 * y(0) + (1.0 / 6.0) * y(1) + 0.5 * (x(0) - x(1)).pow(2.0) - 0.5 * y(2)
            + x(1).pow(2.0);
        assert_eq!(e.eval(&Point::zeros(2, 3)).unwrap(), 0.0);
    }

    #[test]
    fn reference_dialect_cube_root() {
        let e = (x(0) * x(1)).abs().pow(1.0 / 3.0) + x(0).pow(2.0) + x(1).pow(2.0);
        let p = Point::new(vec![1.0, 1.0], vec![]);
        assert!((e.eval(&p).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn norm0_counts_nonzeros() {
        let p = Point::new(vec![0.0, 0.0, 2.0], vec![]);
        assert_eq!(norm0(Block::X).eval(&p).unwrap(), 1.0);
        let q = Point::new(vec![1e-7, -3e-7, 2.0e-6], vec![]);
        assert_eq!(norm0(Block::X).eval(&q).unwrap(), 1.0);
    }

    #[test]
    fn square_gradient() {
        let g = x(0).pow(2.0).gradient(&Point::new(vec![3.0], vec![])).unwrap();
        assert_eq!(g, vec![6.0]);
    }

    #[test]
    fn quartic_minus_lifted_gradient_matches_differences() {
        let e = x(0).pow(4.0) - y(0);
        let p = Point::new(vec![2.0], vec![0.0]);
        let fd = central_difference(&e, &p, 1e-6);
        // Frozen from the central-difference oracle above.
        assert!((fd[0] - 32.0).abs() < 1e-5 && (fd[1] + 1.0).abs() < 1e-8);
        let g = e.gradient(&p).unwrap();
        assert_eq!(g, vec![32.0, -1.0]);
    }

    #[test]
    fn mixed_block_gradient_matches_differences() {
        let e = 0.5 * (x(0) + x(1)).pow(2.0) - y(0) - 0.5 * y(1);
        let p = Point::new(vec![1.0, 1.0], vec![0.0, 0.0]);
        let fd = central_difference(&e, &p, 1e-6);
        let expected = [2.0, 2.0, -1.0, -0.5];
        for (a, b) in fd.iter().zip(expected) {
            assert!((a - b).abs() < 1e-7);
        }
        assert_eq!(e.gradient(&p).unwrap(), expected.to_vec());
    }

    #[test]
    fn gradient_rejects_nonsmooth_nodes() {
        let p = Point::new(vec![1.0, 1.0], vec![]);
        assert_eq!((x(0) * x(1)).abs().gradient(&p), Err(ExprError::Nonsmooth("abs")));
        assert_eq!(x(0).pow(0.5).gradient(&p), Err(ExprError::Nonsmooth("fractional power")));
    }

    #[test]
    fn domain_errors_carry_the_node_location() {
        let p = Point::new(vec![0.0, -1.0], vec![]);
        let e = x(1) + 1.0 / x(0);
        match e.eval(&p) {
            Err(ExprError::Domain { path, reason, .. }) => {
                assert_eq!(path, NodePath(vec![1]));
                assert_eq!(reason, "division by zero");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(x(1).sqrt().eval(&p), Err(ExprError::Domain { .. })));
        assert!(matches!(x(1).pow(0.5).eval(&p), Err(ExprError::Domain { .. })));
        assert!(matches!(x(0).pow(-2.0).eval(&p), Err(ExprError::Domain { .. })));
        // Integer powers accept negative bases.
        assert_eq!(x(1).pow(3.0).eval(&p).unwrap(), -1.0);
    }

    #[test]
    fn missing_variable_is_a_dimension_error() {
        let p = Point::new(vec![1.0], vec![]);
        assert!(matches!(y(0).eval(&p), Err(ExprError::UnboundVariable { .. })));
    }

    #[test]
    fn restricted_gradient_ignores_inactive_variables() {
        let e = x(0) * y(0) + x(1).pow(2.0);
        let p = Point::new(vec![2.0, 3.0], vec![5.0]);
        let (v, g) = e.eval_with_gradient(p.view(), &[1, 2], 2).unwrap();
        assert_eq!(v, 19.0);
        assert_eq!(g, vec![6.0, 2.0]);
    }
}
