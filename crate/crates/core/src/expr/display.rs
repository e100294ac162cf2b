use std::fmt;

use super::Expr;

const ADD: u8 = 1;
const MUL: u8 = 2;
const NEG: u8 = 3;
const POW: u8 = 4;
const ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => ADD,
        Expr::Mul(..) | Expr::Div(..) => MUL,
        Expr::Neg(_) => NEG,
        Expr::Pow(..) => POW,
        _ => ATOM,
    }
}

fn write_at(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if precedence(e) < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

fn write_number(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    if v < 0.0 || (v == 0.0 && v.is_sign_negative()) {
        write!(f, "(-{})", -v)
    } else {
        write!(f, "{v}")
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, items: &[Expr], sep: &str) -> fmt::Result {
    for (i, t) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(sep)?;
        }
        write!(f, "{t}")?;
    }
    Ok(())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write_number(f, *c),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => {
                f.write_str("-")?;
                write_at(f, a, NEG)
            }
            Expr::Abs(a) => write!(f, "abs({a})"),
            Expr::Sqrt(a) => write!(f, "sqrt({a})"),
            Expr::Add(a, b) => {
                write_at(f, a, ADD)?;
                match b.as_ref() {
                    Expr::Neg(inner) => {
                        f.write_str(" - ")?;
                        write_at(f, inner, MUL)
                    }
                    _ => {
                        f.write_str(" + ")?;
                        write_at(f, b, MUL)
                    }
                }
            }
            Expr::Sub(a, b) => {
                write_at(f, a, ADD)?;
                f.write_str(" - ")?;
                write_at(f, b, MUL)
            }
            Expr::Mul(a, b) => {
                write_at(f, a, MUL)?;
                f.write_str("*")?;
                write_at(f, b, NEG)
            }
            Expr::Div(a, b) => {
                write_at(f, a, MUL)?;
                f.write_str("/")?;
                write_at(f, b, NEG)
            }
            Expr::Pow(a, p) => {
                write_at(f, a, ATOM)?;
                f.write_str("^")?;
                write_number(f, *p)
            }
            Expr::Sum(terms) => {
                f.write_str("(")?;
                write_list(f, terms, " + ")?;
                f.write_str(")")
            }
            Expr::Max(terms) => {
                f.write_str("max(")?;
                write_list(f, terms, ", ")?;
                f.write_str(")")
            }
            Expr::Norm0(b) => write!(f, "norm0({})", b.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::expr::{parse, x, y};

    fn round_trip(text: &str) {
        let e = parse(text, None).unwrap();
        let printed = e.to_string();
        assert_eq!(parse(&printed, None).unwrap(), e, "{text} printed as {printed}");
    }

    #[test]
    fn prints_readably() {
        let e = parse("2*x[1]^2 - 1.05*y[1]", None).unwrap();
        assert_eq!(e.to_string(), "2*x[1]^2 - 1.05*y[1]");
        assert_eq!((x(0) + y(1)).pow(2.0).to_string(), "(x[1] + y[2])^2");
        assert_eq!(x(0).pow(-1.0).to_string(), "x[1]^(-1)");
    }

    #[test]
    fn tricky_round_trips() {
        for text in [
            "-(2*x[1])",
            "x[1] - (x[2] - x[3])",
            "x[1] - -x[2]",
            "x[1]*(x[2]*x[3])",
            "x[1]/(x[2]/x[3])",
            "-x[1]*x[2]",
            "(-x[1])^2",
            "(x[1]^2)^3",
            "abs(x[1]*x[2])^(1/3) + x[1]^2",
            "max(x[1], 0.5, -y[1]) + norm0(x)",
            "sqrt(x[1]^2 + 1e-12) / 7",
            "x[1]^-0.5",
            "--x[1]",
        ] {
            round_trip(text);
        }
    }

    #[test]
    fn built_sums_reparse_to_equal_values() {
        let e = crate::expr::sum([x(0), -y(0), 3.0 * x(1)]) - (x(0) - y(0));
        let p = crate::expr::Point::new(vec![1.5, -2.0], vec![0.25]);
        let back = parse(&e.to_string(), None).unwrap();
        assert_eq!(back.eval(&p).unwrap(), e.eval(&p).unwrap());
    }
}
