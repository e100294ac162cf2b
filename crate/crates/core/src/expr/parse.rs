use std::fmt;

use super::{Block, Expr, VarRef, VarView};

/// Declared block sizes used to range-check variable indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    Syntax(String),
    UnknownIdentifier(String),
    IndexOutOfRange { var: String, declared: usize },
    NonConstantExponent,
}

/// Parse failure; `line` and `col` are one-based.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{line}:{col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Syntax(msg) => write!(f, "syntax error: {msg}"),
            ParseErrorKind::UnknownIdentifier(id) => write!(f, "unknown identifier `{id}`"),
            ParseErrorKind::IndexOutOfRange { var, declared } => {
                write!(f, "index out of range: {var} (declared size {declared})")
            }
            ParseErrorKind::NonConstantExponent => f.write_str("exponent must be a constant"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (1, 1);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse::<f64>().map_err(|_| ParseError {
                line: tl,
                col: tc,
                kind: ParseErrorKind::Syntax(format!("malformed number `{s}`")),
            })?;
            out.push(Token { tok: Tok::Num(v), line: tl, col: tc });
        } else if c.is_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            out.push(Token { tok: Tok::Ident(s), line: tl, col: tc });
        } else if "+-*/^()[],".contains(c) {
            i += 1;
            out.push(Token { tok: Tok::Sym(c), line: tl, col: tc });
        } else {
            return Err(ParseError {
                line: tl,
                col: tc,
                kind: ParseErrorKind::Syntax(format!("unexpected character `{c}`")),
            });
        }
        col += i - start;
    }
    out.push(Token { tok: Tok::End, line, col });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    dims: Option<Dims>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        let t = &self.toks[self.pos];
        ParseError { line: t.line, col: t.col, kind }
    }

    fn syntax(&self, msg: impl Into<String>) -> ParseError {
        self.err(ParseErrorKind::Syntax(msg.into()))
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if t != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Sym(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(format!("expected `{c}`, found {}", describe(self.peek()))))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = lhs + self.term()?;
            } else if self.eat('-') {
                lhs = lhs + -self.term()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = lhs * self.unary()?;
            } else if self.eat('/') {
                lhs = lhs / self.unary()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-') {
            Ok(-self.unary()?)
        } else if self.eat('+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if !self.eat('^') {
            return Ok(base);
        }
        let at = self.pos;
        let exponent = self.unary()?;
        let (n, m) = exponent.max_index();
        let value =
            if n == 0 && m == 0 && !has_norm0(&exponent) { exponent.eval(VarView::new(&[], &[])).ok() } else { None };
        match value {
            Some(p) if p.is_finite() => Ok(base.pow(p)),
            _ => {
                let t = &self.toks[at];
                Err(ParseError { line: t.line, col: t.col, kind: ParseErrorKind::NonConstantExponent })
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let at = self.pos;
        match self.next() {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Sym('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(id) => self.identifier(id, at),
            other => {
                self.pos = at;
                Err(self.syntax(format!("expected an operand, found {}", describe(&other))))
            }
        }
    }

    fn identifier(&mut self, id: String, at: usize) -> Result<Expr, ParseError> {
        match id.as_str() {
            "x" | "y" => {
                let block = if id == "x" { Block::X } else { Block::Y };
                self.expect('[')?;
                let idx_at = self.pos;
                let index = match self.next() {
                    Tok::Num(v) if v.fract() == 0.0 && v >= 1.0 => v as usize,
                    _ => {
                        self.pos = idx_at;
                        return Err(self.syntax("expected a positive integer index"));
                    }
                };
                self.expect(']')?;
                let var = VarRef { block, index: index - 1 };
                if let Some(d) = self.dims {
                    let declared = if block == Block::X { d.n } else { d.m };
                    if var.index >= declared {
                        let t = &self.toks[at];
                        return Err(ParseError {
                            line: t.line,
                            col: t.col,
                            kind: ParseErrorKind::IndexOutOfRange { var: var.to_string(), declared },
                        });
                    }
                }
                Ok(Expr::Var(var))
            }
            "abs" | "sqrt" => {
                self.expect('(')?;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(if id == "abs" { e.abs() } else { e.sqrt() })
            }
            "max" => {
                self.expect('(')?;
                let mut args = vec![self.expr()?];
                while self.eat(',') {
                    args.push(self.expr()?);
                }
                self.expect(')')?;
                Ok(Expr::Max(args))
            }
            "norm0" => {
                self.expect('(')?;
                let block = match self.next() {
                    Tok::Ident(b) if b == "x" => Block::X,
                    Tok::Ident(b) if b == "y" => Block::Y,
                    _ => {
                        self.pos -= 1;
                        return Err(self.syntax("norm0 takes a block name, `x` or `y`"));
                    }
                };
                self.expect(')')?;
                Ok(Expr::Norm0(block))
            }
            _ => {
                self.pos = at;
                Err(self.err(ParseErrorKind::UnknownIdentifier(id)))
            }
        }
    }
}

fn has_norm0(e: &Expr) -> bool {
    matches!(e, Expr::Norm0(_)) || e.children().into_iter().any(has_norm0)
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Sym(c) => format!("`{c}`"),
        Tok::End => "end of input".to_string(),
    }
}

/// Parses an expression. When `dims` is given, variable indices are checked
/// against the declared block sizes.
pub fn parse(text: &str, dims: Option<Dims>) -> Result<Expr, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, dims };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.syntax(format!("unexpected {}", describe(p.peek()))));
    }
    Ok(e)
}
