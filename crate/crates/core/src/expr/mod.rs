//! Scalar expression trees over the two variable blocks `x` (original
//! variables) and `y` (lifted variables).
//!
//! An [`Expr`] is either in the *smooth dialect* (no `abs`, `max`, `norm0`
//! or fractional powers), which is what the lifted objective and constraint
//! functions must use, or in the *reference dialect*, which additionally
//! admits those nonsmooth nodes and is used for the original function `f(x)`.
//!
//! Values are computed by [`Expr::eval`]; derivatives by forward-mode
//! propagation of dual numbers in [`Expr::gradient`] and
//! [`Expr::eval_with_gradient`]. Text is handled by [`parse`] and the
//! [`Display`](std::fmt::Display) implementation, which produces text that
//! parses back to the same tree.

mod display;
mod eval;
mod parse;

use std::fmt;
use std::ops;

use serde::{Deserialize, Serialize};

pub use eval::{ExprError, NodePath, NORM0_THRESHOLD};
pub use parse::{parse, Dims, ParseError, ParseErrorKind};

/// Which variable block a reference points into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Block {
    X,
    Y,
}

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::X => "x",
            Block::Y => "y",
        }
    }
}

/// A reference to one coordinate of a block. `index` is zero-based; the text
/// format uses one-based indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarRef {
    pub block: Block,
    pub index: usize,
}

impl VarRef {
    /// Position of this variable in the flattened `(x, y)` vector.
    pub fn global(self, n: usize) -> usize {
        match self.block {
            Block::X => self.index,
            Block::Y => n + self.index,
        }
    }
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.block.name(), self.index + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(VarRef),
    Neg(Box<Expr>),
    Abs(Box<Expr>),
    Sqrt(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Power with a constant real exponent.
    Pow(Box<Expr>, f64),
    Sum(Vec<Expr>),
    Max(Vec<Expr>),
    /// Number of entries of a block whose magnitude exceeds [`NORM0_THRESHOLD`].
    Norm0(Block),
}

/// `x[i]` with a zero-based index.
pub fn x(index: usize) -> Expr {
    Expr::Var(VarRef { block: Block::X, index })
}

/// `y[i]` with a zero-based index.
pub fn y(index: usize) -> Expr {
    Expr::Var(VarRef { block: Block::Y, index })
}

pub fn constant(value: f64) -> Expr {
    Expr::Const(value)
}

/// Sum of the given terms; an empty iterator yields the constant zero.
pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
    let terms: Vec<Expr> = terms.into_iter().collect();
    match terms.len() {
        0 => Expr::Const(0.0),
        1 => terms.into_iter().next().unwrap(),
        _ => Expr::Sum(terms),
    }
}

pub fn max<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
    Expr::Max(terms.into_iter().collect())
}

pub fn norm0(block: Block) -> Expr {
    Expr::Norm0(block)
}

pub(crate) fn is_integer_exponent(p: f64) -> bool {
    p.fract() == 0.0 && p.abs() <= i32::MAX as f64
}

impl Expr {
    pub fn pow(self, exponent: f64) -> Expr {
        Expr::Pow(Box::new(self), exponent)
    }

    pub fn abs(self) -> Expr {
        Expr::Abs(Box::new(self))
    }

    pub fn sqrt(self) -> Expr {
        Expr::Sqrt(Box::new(self))
    }

    /// Direct children in evaluation order.
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Norm0(_) => Vec::new(),
            Expr::Neg(a) | Expr::Abs(a) | Expr::Sqrt(a) | Expr::Pow(a, _) => vec![a],
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => vec![a, b],
            Expr::Sum(v) | Expr::Max(v) => v.iter().collect(),
        }
    }

    /// The first node (in pre-order) that is not allowed in the smooth
    /// dialect, if any.
    pub fn nonsmooth_node(&self) -> Option<&'static str> {
        match self {
            Expr::Abs(_) => Some("abs"),
            Expr::Max(_) => Some("max"),
            Expr::Norm0(_) => Some("norm0"),
            Expr::Pow(_, p) if !is_integer_exponent(*p) => Some("fractional power"),
            _ => self.children().into_iter().find_map(Expr::nonsmooth_node),
        }
    }

    pub fn is_smooth(&self) -> bool {
        self.nonsmooth_node().is_none()
    }

    /// True when some node references the given block (including `norm0`).
    pub fn references_block(&self, block: Block) -> bool {
        match self {
            Expr::Var(v) => v.block == block,
            Expr::Norm0(b) => *b == block,
            _ => self.children().into_iter().any(|c| c.references_block(block)),
        }
    }

    /// Sorted, deduplicated flattened indices of every variable the
    /// expression depends on, for blocks of sizes `n` and `m`.
    pub fn support(&self, n: usize, m: usize) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_support(n, m, &mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_support(&self, n: usize, m: usize, out: &mut Vec<usize>) {
        match self {
            Expr::Var(v) => out.push(v.global(n)),
            Expr::Norm0(Block::X) => out.extend(0..n),
            Expr::Norm0(Block::Y) => out.extend(n..n + m),
            _ => {
                for c in self.children() {
                    c.collect_support(n, m, out);
                }
            }
        }
    }

    /// Largest one-past-the-end index referenced in each block.
    pub fn max_index(&self) -> (usize, usize) {
        match self {
            Expr::Var(VarRef { block: Block::X, index }) => (index + 1, 0),
            Expr::Var(VarRef { block: Block::Y, index }) => (0, index + 1),
            _ => self.children().into_iter().fold((0, 0), |(a, b), c| {
                let (ca, cb) = c.max_index();
                (a.max(ca), b.max(cb))
            }),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().into_iter().map(Expr::node_count).sum::<usize>()
    }
}

impl From<f64> for Expr {
    fn from(value: f64) -> Self {
        Expr::Const(value)
    }
}

macro_rules! binary_op {
    ($trait:ident, $method:ident, $variant:ident) => {
        impl ops::$trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$variant(Box::new(self), Box::new(rhs))
            }
        }
        impl ops::$trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::$variant(Box::new(self), Box::new(Expr::Const(rhs)))
            }
        }
        impl ops::$trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$variant(Box::new(Expr::Const(self)), Box::new(rhs))
            }
        }
    };
}

binary_op!(Add, add, Add);
binary_op!(Sub, sub, Sub);
binary_op!(Mul, mul, Mul);
binary_op!(Div, div, Div);

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

/// A point `(x, y)` of the lifted space.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Point {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        Point { x, y }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Point { x: vec![0.0; n], y: vec![0.0; m] }
    }

    /// Splits a flattened `(x, y)` vector after the first `n` entries.
    pub fn from_flat(z: &[f64], n: usize) -> Self {
        let (x, y) = z.split_at(n);
        Point { x: x.to_vec(), y: y.to_vec() }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.x.len() + self.y.len());
        z.extend_from_slice(&self.x);
        z.extend_from_slice(&self.y);
        z
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.x.len(), self.y.len())
    }

    pub fn view(&self) -> VarView<'_> {
        VarView { x: &self.x, y: &self.y }
    }
}

/// Borrowed `(x, y)` values used during evaluation.
#[derive(Debug, Clone, Copy)]
pub struct VarView<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
}

impl<'a> VarView<'a> {
    pub fn new(x: &'a [f64], y: &'a [f64]) -> Self {
        VarView { x, y }
    }

    pub fn from_flat(z: &'a [f64], n: usize) -> Self {
        let (x, y) = z.split_at(n);
        VarView { x, y }
    }

    fn block(&self, block: Block) -> &'a [f64] {
        match block {
            Block::X => self.x,
            Block::Y => self.y,
        }
    }

    fn get(&self, v: VarRef) -> Option<f64> {
        self.block(v.block).get(v.index).copied()
    }
}

impl<'a> From<&'a Point> for VarView<'a> {
    fn from(p: &'a Point) -> Self {
        p.view()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_dialect_detection() {
        let smooth = 2.0 * x(0).pow(2.0) - 1.05 * y(0) + (x(0) - x(1)).pow(2.0);
        assert!(smooth.is_smooth());
        assert_eq!((x(0) * x(1)).abs().nonsmooth_node(), Some("abs"));
        assert_eq!(y(3).pow(1.0 / 3.0).nonsmooth_node(), Some("fractional power"));
        assert_eq!(norm0(Block::X).nonsmooth_node(), Some("norm0"));
        assert!(!max([x(0), x(1)]).is_smooth());
        assert!(x(0).sqrt().is_smooth());
    }

    #[test]
    fn support_is_sorted_and_flattened() {
        let e = y(1) * x(2) + x(0) - y(1);
        assert_eq!(e.support(3, 2), vec![0, 2, 4]);
        assert_eq!(norm0(Block::Y).support(2, 3), vec![2, 3, 4]);
        assert_eq!(e.max_index(), (3, 2));
    }

    #[test]
    fn point_flat_round_trip() {
        let p = Point::new(vec![1.0, 2.0], vec![3.0]);
        let z = p.to_flat();
        assert_eq!(z, vec![1.0, 2.0, 3.0]);
        assert_eq!(Point::from_flat(&z, 2), p);
    }
}
