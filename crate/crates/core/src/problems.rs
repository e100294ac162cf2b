//! Builtin catalog of convertible forms with lift maps, reference objectives
//! and known solutions.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alpf::AlpfConfig;
use crate::expr::{max, norm0, sum, x, y, Block, Expr, Point};
use crate::inner::InnerConfig;
use crate::model::{CnfProblem, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum CatalogId {
    /// `|x₁x₂|^(1/3) + x₁² + x₂²` through `½(x₁+x₂)²`.
    Ex1a,
    /// The same function through `¼(x₁+x₂)²` and `(x₁−x₂)²`.
    Ex1b,
    /// `(√|b₁ᵀx| − √|b₂ᵀx|)²` with seeded `b₁, b₂`.
    Ex2 { n: usize, seed: u64 },
    /// `Σ (|aᵢᵀx| − bᵢ)²` over `classes` seeded samples.
    Ex3 { n: usize, classes: usize, seed: u64 },
    /// `λ‖x‖₀ + ‖x − b‖²`.
    Ex4 { n: usize, lambda: f64, b: Vec<f64> },
    /// Same function as `Ex1a`, analysed at the origin.
    Ex5,
    /// Six-hump-camel-like polynomial `2x₁² − 1.05x₁⁴ + x₁⁶/6 − x₁x₂ + x₂²`.
    Ex7,
    /// `n max|xᵢ| − Σ |xᵢ|`.
    Ex8 { n: usize },
    /// `(Σ i·xᵢ − 2n)² + λ‖x‖₀`.
    Ex9 { n: usize, lambda: f64 },
}

impl fmt::Display for CatalogId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CatalogId::Ex1a => write!(f, "ex1a"),
            CatalogId::Ex1b => write!(f, "ex1b"),
            CatalogId::Ex2 { n, seed } => write!(f, "ex2(n={n}, seed={seed})"),
            CatalogId::Ex3 { n, classes, seed } => write!(f, "ex3(n={n}, classes={classes}, seed={seed})"),
            CatalogId::Ex4 { n, lambda, .. } => write!(f, "ex4(n={n}, lambda={lambda})"),
            CatalogId::Ex5 => write!(f, "ex5"),
            CatalogId::Ex7 => write!(f, "ex7"),
            CatalogId::Ex8 { n } => write!(f, "ex8(n={n})"),
            CatalogId::Ex9 { n, lambda } => write!(f, "ex9(n={n}, lambda={lambda})"),
        }
    }
}

/// Optional parameters used when naming an entry by its short name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CatalogParams {
    pub n: Option<usize>,
    pub lambda: Option<f64>,
    pub classes: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("unknown catalog entry '{0}'")]
    UnknownId(String),
    #[error("invalid parameters for {id}: {reason}")]
    InvalidParams { id: String, reason: &'static str },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub const NAMES: [&str; 9] = ["ex1a", "ex1b", "ex2", "ex3", "ex4", "ex5", "ex7", "ex8", "ex9"];

impl CatalogId {
    /// Resolves a short name such as `ex9` with defaults for missing
    /// parameters.
    pub fn from_name(name: &str, params: &CatalogParams) -> Result<Self, CatalogError> {
        let seed = params.seed.unwrap_or(0);
        Ok(match name.to_ascii_lowercase().as_str() {
            "ex1" | "ex1a" => CatalogId::Ex1a,
            "ex1b" => CatalogId::Ex1b,
            "ex2" => CatalogId::Ex2 { n: params.n.unwrap_or(2), seed },
            "ex3" => CatalogId::Ex3 { n: params.n.unwrap_or(3), classes: params.classes.unwrap_or(4), seed },
            "ex4" => {
                let n = params.n.unwrap_or(5);
                CatalogId::Ex4 { n, lambda: params.lambda.unwrap_or(1.0), b: vec![1.0; n] }
            }
            "ex5" => CatalogId::Ex5,
            "ex7" => CatalogId::Ex7,
            "ex8" => CatalogId::Ex8 { n: params.n.unwrap_or(5) },
            "ex9" => CatalogId::Ex9 { n: params.n.unwrap_or(10), lambda: params.lambda.unwrap_or(1.0) },
            _ => return Err(CatalogError::UnknownId(name.to_string())),
        })
    }

    fn check(&self) -> Result<(), CatalogError> {
        let bad = |reason| Err(CatalogError::InvalidParams { id: self.to_string(), reason });
        match self {
            CatalogId::Ex2 { n, .. } | CatalogId::Ex8 { n } if *n == 0 => bad("n must be at least 1"),
            CatalogId::Ex3 { n, classes, .. } if *n == 0 || *classes == 0 => {
                bad("n and the number of classes must be at least 1")
            }
            CatalogId::Ex4 { n, lambda, b } => {
                if *n == 0 {
                    bad("n must be at least 1")
                } else if !(*lambda > 0.0) {
                    bad("lambda must be positive")
                } else if b.len() != *n || b.iter().any(|v| !v.is_finite()) {
                    bad("b must have n finite entries")
                } else {
                    Ok(())
                }
            }
            CatalogId::Ex9 { n, lambda } if *n == 0 || !(*lambda > 0.0) => {
                bad("n must be at least 1 and lambda positive")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownSolution {
    pub description: String,
    pub x: Option<Vec<f64>>,
    pub value: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub id: CatalogId,
    pub problem: CnfProblem,
    pub start: Point,
    /// Solver settings the example was run with.
    pub params: AlpfConfig,
    pub known: Option<KnownSolution>,
    /// Set when `g(x, lift(x))` is known not to reproduce `f(x)`.
    pub expected_discrepancy: bool,
}

impl CatalogEntry {
    /// `Σ yᵢ²` over the indicator variables of the 0-norm entries, the
    /// relaxed count the solver actually drives.
    pub fn surrogate(&self, p: &Point) -> Option<f64> {
        match &self.id {
            CatalogId::Ex4 { n, .. } | CatalogId::Ex9 { n, .. } => Some(p.y[..*n].iter().map(|v| v * v).sum()),
            _ => None,
        }
    }
}

/// Every entry with default parameters.
pub fn all() -> Vec<CatalogEntry> {
    NAMES
        .iter()
        .map(|name| build(&CatalogId::from_name(name, &CatalogParams::default()).expect("builtin name")))
        .collect::<Result<_, _>>()
        .expect("builtin entries build")
}

fn entry_params(eps: f64, rho0: f64, growth: f64, start: &Point) -> AlpfConfig {
    AlpfConfig { eps, rho0, growth, inner: InnerConfig::newton(), start: Some(start.clone()), ..AlpfConfig::default() }
}

fn linear(coeffs: &[f64]) -> Expr {
    sum(coeffs.iter().enumerate().map(|(i, &c)| c * x(i)))
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

pub fn build(id: &CatalogId) -> Result<CatalogEntry, CatalogError> {
    id.check()?;
    let mut expected_discrepancy = false;
    let (problem, start, params, known) = match id {
        CatalogId::Ex1a | CatalogId::Ex1b | CatalogId::Ex5 => {
            let second_square = matches!(id, CatalogId::Ex1b);
            let (name, w, second) = match id {
                CatalogId::Ex1b => ("ex1b", 0.25, (x(0) - x(1)).pow(2.0)),
                CatalogId::Ex5 => ("ex5", 0.5, x(0).pow(2.0) + x(1).pow(2.0)),
                _ => ("ex1a", 0.5, x(0).pow(2.0) + x(1).pow(2.0)),
            };
            let (objective, ineqs, eqs) = cube_root_form(w, second);
            let prob = CnfProblem::new(name, 2, 4, objective, ineqs, eqs)?
                .with_reference((x(0) * x(1)).abs().pow(1.0 / 3.0) + x(0).pow(2.0) + x(1).pow(2.0))?
                .with_exact(true)
                .with_lift(move |x| {
                    let y2 = if second_square { (x[0] - x[1]).powi(2) } else { x[0] * x[0] + x[1] * x[1] };
                    let y1 = x[0] * x[1];
                    let y3 = y1 * y1;
                    vec![y1, y2, y3, y3.powf(1.0 / 6.0)]
                });
            let start = Point::zeros(2, 4);
            let params = entry_params(1e-6, 10.0, 100.0, &start);
            let known = KnownSolution {
                description: "global minimum at the origin".into(),
                x: Some(vec![0.0, 0.0]),
                value: Some(0.0),
            };
            (prob, start, params, Some(known))
        }
        CatalogId::Ex2 { n, seed } => {
            expected_discrepancy = true;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let b1: Vec<f64> = (0..*n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b2: Vec<f64> = (0..*n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let prob = CnfProblem::new(
                "ex2",
                *n,
                4,
                (y(0) - y(1)).pow(2.0),
                vec![-y(0), -y(1)],
                vec![
                    y(0).pow(2.0) - y(2),
                    y(1).pow(2.0) - y(3),
                    linear(&b1).pow(2.0) - y(2),
                    linear(&b2).pow(2.0) - y(3),
                ],
            )?
            .with_reference((linear(&b1).abs().sqrt() - linear(&b2).abs().sqrt()).pow(2.0))?
            .with_exact(false)
            .with_lift(move |x| {
                let (p, q) = (dotv(&b1, x), dotv(&b2, x));
                vec![p.abs(), q.abs(), p * p, q * q]
            });
            let start = Point::zeros(*n, 4);
            let params = entry_params(1e-6, 10.0, 100.0, &start);
            let known = KnownSolution {
                description: "minimum value 0 wherever |b1ᵀx| = |b2ᵀx|".into(),
                x: Some(vec![0.0; *n]),
                value: Some(0.0),
            };
            (prob, start, params, Some(known))
        }
        CatalogId::Ex3 { n, classes, seed } => {
            let (n, count) = (*n, *classes);
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let data: Vec<(Vec<f64>, f64)> = (0..count)
                .map(|_| ((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_range(0.0..2.0)))
                .collect();
            let objective = sum(data.iter().enumerate().map(|(i, (_, b))| (y(i) - *b).pow(2.0)));
            let ineqs = (0..count).map(|i| -y(i)).collect();
            let eqs = (0..count)
                .map(|i| y(i).pow(2.0) - y(i + count))
                .chain(data.iter().enumerate().map(|(i, (a, _))| linear(a).pow(2.0) - y(i + count)))
                .collect();
            let reference = sum(data.iter().map(|(a, b)| (linear(a).abs() - *b).pow(2.0)));
            let lift_data = data.clone();
            let prob = CnfProblem::new("ex3", n, 2 * count, objective, ineqs, eqs)?
                .with_reference(reference)?
                .with_exact(true)
                .with_lift(move |x| {
                    let dots: Vec<f64> = lift_data.iter().map(|(a, _)| dotv(a, x)).collect();
                    dots.iter().map(|d| d.abs()).chain(dots.iter().map(|d| d * d)).collect()
                });
            let start = Point::zeros(n, 2 * count);
            let params = entry_params(1e-6, 10.0, 100.0, &start);
            (prob, start, params, None)
        }
        CatalogId::Ex4 { n, lambda, b } => {
            let n = *n;
            let objective =
                *lambda * sum((0..n).map(y)) + sum(b.iter().enumerate().map(|(i, &bi)| (x(i) - bi).pow(2.0)));
            let ineqs = (0..n).map(|i| -y(i)).chain((0..n).map(|i| y(i) - 1.0)).collect();
            let reference = *lambda * norm0(Block::X) + sum(b.iter().enumerate().map(|(i, &bi)| (x(i) - bi).pow(2.0)));
            let prob = CnfProblem::new("ex4", n, 2 * n, objective, ineqs, zero_norm_eqs(n))?
                .with_reference(reference)?
                .with_exact(false)
                .with_lift(zero_norm_lift);
            let start = Point::zeros(n, 2 * n);
            let params = entry_params(1e-6, 10.0, 10.0, &start);
            (prob, start, params, None)
        }
        CatalogId::Ex7 => {
            let objective = 2.0 * x(0).pow(2.0) - 1.05 * y(0) + y(1) / 6.0 + 0.5 * (x(0) - x(1)).pow(2.0) - 0.5 * y(2)
                + x(1).pow(2.0);
            let prob = CnfProblem::new(
                "ex7",
                2,
                3,
                objective,
                vec![-x(0) - 3.0, x(0) - 3.0, -x(1) - 3.0, x(1) - 3.0],
                vec![x(0).pow(4.0) - y(0), x(0).pow(6.0) - y(1), x(0).pow(2.0) + x(1).pow(2.0) - y(2)],
            )?
            .with_reference(
                2.0 * x(0).pow(2.0) - 1.05 * x(0).pow(4.0) + x(0).pow(6.0) / 6.0 - x(0) * x(1) + x(1).pow(2.0),
            )?
            .with_exact(true)
            .with_bounds(-3.0, 3.0)?
            .with_lift(|x| vec![x[0].powi(4), x[0].powi(6), x[0] * x[0] + x[1] * x[1]]);
            let start = Point::new(vec![2.0; 2], vec![2.0; 3]);
            // Newton steps from this start settle in the local minimum near
            // (1.7476, 0.8738); the long gradient steps do not.
            let params = AlpfConfig { inner: InnerConfig::default(), ..entry_params(1e-6, 10.0, 100.0, &start) };
            let known = KnownSolution {
                description: "global minimum at the origin".into(),
                x: Some(vec![0.0, 0.0]),
                value: Some(0.0),
            };
            (prob, start, params, Some(known))
        }
        CatalogId::Ex8 { n } => {
            let n = *n;
            let t = 2 * n;
            let objective = n as f64 * y(t) - sum((0..n).map(y));
            let ineqs = (0..n).map(|i| -y(i)).chain((0..n).map(|i| y(i) - y(t))).collect();
            let eqs =
                (0..n).map(|i| y(i).pow(2.0) - y(i + n)).chain((0..n).map(|i| x(i).pow(2.0) - y(i + n))).collect();
            let reference = n as f64 * max((0..n).map(|i| x(i).abs())) - sum((0..n).map(|i| x(i).abs()));
            let prob = CnfProblem::new("ex8", n, 2 * n + 1, objective, ineqs, eqs)?
                .with_reference(reference)?
                .with_exact(true)
                .with_lift(move |x| {
                    let top = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                    x.iter().map(|v| v.abs()).chain(x.iter().map(|v| v * v)).chain([top]).collect()
                });
            let flat: Vec<f64> = (1..=3 * n + 1).map(|i| i as f64).collect();
            let start = Point::from_flat(&flat, n);
            let params = entry_params(1e-6, 10.0, 100.0, &start);
            let known = KnownSolution { description: "any x with all |xᵢ| equal".into(), x: None, value: Some(0.0) };
            (prob, start, params, Some(known))
        }
        CatalogId::Ex9 { n, lambda } => {
            let n = *n;
            let weighted = sum((0..n).map(|i| (i + 1) as f64 * x(i))) - 2.0 * n as f64;
            let objective = weighted.clone().pow(2.0) + *lambda * sum((0..n).map(|i| y(i).pow(2.0)));
            let eqs = zero_norm_eqs(n);
            let reference = weighted.pow(2.0) + *lambda * norm0(Block::X);
            let prob = CnfProblem::new("ex9", n, 2 * n, objective, vec![], eqs)?
                .with_reference(reference)?
                .with_exact(false)
                .with_lift(zero_norm_lift);
            let start = Point::zeros(n, 2 * n);
            let params = entry_params(1e-6, 10.0, 10.0, &start);
            let known = KnownSolution {
                description: format!("x = 2e_{n}, one nonzero entry, value {lambda}"),
                x: Some((0..n).map(|i| if i + 1 == n { 2.0 } else { 0.0 }).collect()),
                value: Some(*lambda),
            };
            (prob, start, params, Some(known))
        }
    };
    Ok(CatalogEntry { id: id.clone(), problem, start, params, known, expected_discrepancy })
}

/// Objective, inequality and equalities for `|x₁x₂|^(1/3) + x₁² + x₂²` with
/// `y₁ = x₁x₂` recovered from `w(x₁+x₂)² − y₁ − w·y₂ = 0` and the given
/// expression for `y₂`.
fn cube_root_form(w: f64, second: Expr) -> (Expr, Vec<Expr>, Vec<Expr>) {
    let objective = y(3) + x(0).pow(2.0) + x(1).pow(2.0);
    let eqs =
        vec![w * (x(0) + x(1)).pow(2.0) - y(0) - w * y(1), second - y(1), y(0).pow(2.0) - y(2), y(3).pow(6.0) - y(2)];
    (objective, vec![-y(3)], eqs)
}

/// `(xᵢ + yᵢ − 1)² = y_{i+n}`, `xᵢ² + (yᵢ − 1)² = y_{i+n}`, `yᵢ² = yᵢ`.
fn zero_norm_eqs(n: usize) -> Vec<Expr> {
    let first = (0..n).map(|i| (x(i) + y(i) - 1.0).pow(2.0) - y(i + n));
    let second = (0..n).map(|i| x(i).pow(2.0) + (y(i) - 1.0).pow(2.0) - y(i + n));
    let third = (0..n).map(|i| y(i).pow(2.0) - y(i));
    first.chain(second).chain(third).collect()
}

fn zero_norm_lift(x: &[f64]) -> Vec<f64> {
    let ind: Vec<f64> = x.iter().map(|&v| if v != 0.0 { 1.0 } else { 0.0 }).collect();
    let sq: Vec<f64> = x.iter().zip(&ind).map(|(v, i)| v * v + (i - 1.0) * (i - 1.0)).collect();
    ind.into_iter().chain(sq).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(name: &str, params: CatalogParams) -> CatalogEntry {
        build(&CatalogId::from_name(name, &params).unwrap()).unwrap()
    }

    #[test]
    fn ex7_dimensions_and_optimum() {
        let e = entry("ex7", CatalogParams::default());
        let p = &e.problem;
        assert_eq!((p.n(), p.m(), p.s(), p.r()), (2, 3, 4, 3));
        assert_eq!(p.reference_value(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn ex8_family_has_zero_value() {
        let e = entry("ex8", CatalogParams { n: Some(5), ..Default::default() });
        assert_eq!(e.problem.m(), 11);
        for a in [0.5, -1.25, 3.4366] {
            let x = [a, -a, -a, a, a];
            assert!(e.problem.reference_value(&x).unwrap().abs() < 1e-12);
            let p = e.problem.lift(&x).unwrap();
            assert!(e.problem.values(&p).unwrap().g.abs() < 1e-12);
            assert_eq!(p.y[10], a.abs());
        }
    }

    #[test]
    fn ex5_lift_at_ones() {
        let e = entry("ex5", CatalogParams::default());
        let p = e.problem.lift(&[1.0, 1.0]).unwrap();
        assert_eq!(p.y, vec![1.0, 2.0, 1.0, 1.0]);
        let v = e.problem.values(&p).unwrap();
        assert_eq!(v.g, 3.0);
        assert!(v.eqs.iter().all(|h| *h == 0.0));
    }

    #[test]
    fn ex9_reference_with_two_nonzeros() {
        let e = entry("ex9", CatalogParams { n: Some(10), lambda: Some(1.0), ..Default::default() });
        let mut x = vec![0.0; 10];
        x[8] = -0.9386;
        x[9] = 2.8448;
        let f = e.problem.reference_value(&x).unwrap();
        assert!((f - 2.0002).abs() < 1e-3, "{f}");
    }

    #[test]
    fn ex9_lift_of_origin() {
        let e = entry("ex9", CatalogParams { n: Some(3), ..Default::default() });
        let p = e.problem.lift(&[0.0; 3]).unwrap();
        assert_eq!(p.y, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let v = e.problem.values(&p).unwrap();
        assert_eq!(v.max_eq_residual(), 0.0);
        assert_eq!(v.g, e.problem.reference_value(&[0.0; 3]).unwrap());
        assert_eq!(e.surrogate(&p), Some(0.0));
    }

    #[test]
    fn both_ex1_forms_agree() {
        let a = entry("ex1a", CatalogParams::default());
        let b = entry("ex1b", CatalogParams::default());
        for x in [[0.3, -1.2], [2.0, 0.5], [-0.7, -0.1]] {
            let ga = a.problem.values(&a.problem.lift(&x).unwrap()).unwrap().g;
            let gb = b.problem.values(&b.problem.lift(&x).unwrap()).unwrap().g;
            assert!((ga - gb).abs() < 1e-12);
        }
    }

    #[test]
    fn every_lift_is_feasible() {
        for e in all() {
            let x: Vec<f64> = (0..e.problem.n()).map(|i| 0.5 - 0.3 * i as f64).collect();
            let p = e.problem.lift(&x).unwrap();
            let rep = e.problem.check_feasible(&p, 1e-10).unwrap();
            assert!(rep.in_xf, "{}: {rep:?}", e.id);
        }
    }

    #[test]
    fn entries_are_convex_forms() {
        for e in all() {
            assert_eq!(e.problem.sample_convexity(200, 3, None), 0, "{}", e.id);
        }
    }

    #[test]
    fn bad_params_rejected() {
        assert!(matches!(CatalogId::from_name("ex6", &CatalogParams::default()), Err(CatalogError::UnknownId(_))));
        let id = CatalogId::Ex9 { n: 0, lambda: 1.0 };
        assert!(matches!(build(&id), Err(CatalogError::InvalidParams { .. })));
        let id = CatalogId::Ex4 { n: 2, lambda: 1.0, b: vec![1.0] };
        assert!(matches!(build(&id), Err(CatalogError::InvalidParams { .. })));
    }
}
