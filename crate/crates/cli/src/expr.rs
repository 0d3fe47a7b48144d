//! The scene expression grammar.
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := unary (("*" | "/") unary)*
//! unary  := ("-" | "+") unary | power
//! power  := atom ("^" unary)?
//! atom   := number | ident | ident "(" expr ")" | "(" expr ")"
//! ```
//!
//! Functions: `sin`, `cos`, `exp`, `log`. Constants: `pi`, `e`.
//! `^` is right associative and binds tighter than unary minus, so `-x^2`
//! is `-(x^2)`.

use lcs_core::{Jet2, LcsError, ModelManifold, ScalarField};
use std::fmt;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Bin(Op, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseError {
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "column {}: {}", self.column, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| ParseError { column: start + 1, message: format!("bad number `{text}`") })?;
            out.push((Tok::Num(v), start + 1));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), start + 1));
        } else if "+-*/^()".contains(c) {
            out.push((Tok::Sym(c), i + 1));
            i += 1;
        } else if c == '−' {
            out.push((Tok::Sym('-'), i + 1));
            i += 1;
        } else {
            return Err(ParseError { column: i + 1, message: format!("unexpected character `{c}`") });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    vars: &'a [&'a str],
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn column(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.1)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { column: self.column(), message: message.into() })
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                Op::Add
            } else if self.eat('-') {
                Op::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                Op::Mul
            } else if self.eat('/') {
                Op::Div
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat('^') {
            return Ok(Expr::Bin(Op::Pow, Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let col = self.column();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return self.err("expected `)`");
                }
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "exp" => Some(Func::Exp),
                    "log" => Some(Func::Log),
                    _ => None,
                };
                if let Some(f) = func {
                    if !self.eat('(') {
                        return self.err(format!("expected `(` after `{name}`"));
                    }
                    let arg = self.expr()?;
                    if !self.eat(')') {
                        return self.err("expected `)`");
                    }
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    "e" => Ok(Expr::Num(std::f64::consts::E)),
                    _ => match self.vars.iter().position(|v| *v == name) {
                        Some(i) => Ok(Expr::Var(i)),
                        None => Err(ParseError {
                            column: col,
                            message: format!("unknown identifier `{name}` (expected one of {})", self.vars.join(", ")),
                        }),
                    },
                }
            }
            Some(Tok::Sym(c)) => self.err(format!("unexpected `{c}`")),
            None => self.err("unexpected end of expression"),
        }
    }
}

/// Parses `src` with the given variable names.
pub fn parse(src: &str, vars: &[&str]) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, vars, end: src.chars().count() + 1 };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(e)
}

impl Expr {
    pub fn eval(&self, x: &[Jet2]) -> lcs_core::Result<Jet2> {
        Ok(match self {
            Expr::Num(v) => Jet2::constant(*v),
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x)?,
            Expr::Call(f, a) => {
                let a = a.eval(x)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Log => a.ln()?,
                }
            }
            Expr::Bin(op, a, b) => {
                if let (Op::Pow, Expr::Num(k)) = (op, b.as_ref()) {
                    let a = a.eval(x)?;
                    return if k.fract() == 0.0 && k.abs() <= 64.0 { Ok(a.powi(*k as i32)) } else { a.powf(*k) };
                }
                let (a, b) = (a.eval(x)?, b.eval(x)?);
                match op {
                    Op::Add => a + b,
                    Op::Sub => a - b,
                    Op::Mul => a * b,
                    Op::Div => {
                        if b.value() == 0.0 {
                            return Err(LcsError::Domain { op: "division", arg: 0.0, point: None });
                        }
                        a / b
                    }
                    Op::Pow => a.pow(&b)?,
                }
            }
        })
    }

    /// True when the expression is a constant.
    pub fn constant(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            Expr::Var(_) => None,
            Expr::Neg(a) => a.constant().map(|v| -v),
            Expr::Call(f, a) => a.constant().map(|v| match f {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Exp => v.exp(),
                Func::Log => v.ln(),
            }),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.constant()?, b.constant()?);
                Some(match op {
                    Op::Add => a + b,
                    Op::Sub => a - b,
                    Op::Mul => a * b,
                    Op::Div => a / b,
                    Op::Pow => a.powf(b),
                })
            }
        }
    }

    pub fn into_field(self, domain: ModelManifold) -> ScalarField {
        let e = Arc::new(self);
        ScalarField::new(domain, move |x| e.eval(x))
    }
}

/// Coordinate names on a torus base of dimension `n`: q1..qn (and q when n = 1).
pub fn base_vars(n: usize) -> Vec<String> {
    indexed("q", n)
}

/// q1..qn, p1..pn (q, p when n = 1), then r = |p|.
pub fn total_vars(n: usize) -> Vec<String> {
    let mut v = indexed("q", n);
    v.extend(indexed("p", n));
    v.push("r".into());
    v
}

/// Parameter names on L: u1..un (u when n = 1).
pub fn param_vars(n: usize) -> Vec<String> {
    indexed("u", n)
}

fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Parses `src` into a field on `domain`, with `names` bound to the coordinates.
/// For one-dimensional names the bare prefix is accepted as an alias.
pub fn field(src: &str, names: &[String], domain: ModelManifold) -> Result<ScalarField, ParseError> {
    let (vars, slots) = aliases(names);
    let refs: Vec<&str> = vars.iter().map(|s| s.as_str()).collect();
    let e = parse(src, &refs)?;
    let e = remap(e, &slots);
    let dim = domain.dim();
    let has_r = names.last().is_some_and(|s| s == "r");
    if has_r {
        let n = dim / 2;
        let e = Arc::new(e);
        return Ok(ScalarField::new(domain, move |x| {
            let r2 = x[n..].iter().fold(Jet2::constant(0.0), |acc, p| acc + *p * *p);
            let r = if r2.value() > 0.0 { r2.sqrt()? } else { Jet2::constant(0.0) };
            let mut ext = x.to_vec();
            ext.push(r);
            e.eval(&ext)
        }));
    }
    Ok(e.into_field(domain))
}

fn aliases(names: &[String]) -> (Vec<String>, Vec<usize>) {
    let mut vars: Vec<String> = names.to_vec();
    let mut slots: Vec<usize> = (0..names.len()).collect();
    for prefix in ["q", "p", "u"] {
        let hits: Vec<usize> = names.iter().enumerate().filter(|(_, s)| s.starts_with(prefix) && s.len() > 1).map(|(i, _)| i).collect();
        if hits.len() == 1 {
            vars.push(prefix.into());
            slots.push(hits[0]);
        }
    }
    (vars, slots)
}

fn remap(e: Expr, slots: &[usize]) -> Expr {
    match e {
        Expr::Var(i) => Expr::Var(slots[i]),
        Expr::Neg(a) => Expr::Neg(Box::new(remap(*a, slots))),
        Expr::Call(f, a) => Expr::Call(f, Box::new(remap(*a, slots))),
        Expr::Bin(op, a, b) => Expr::Bin(op, Box::new(remap(*a, slots)), Box::new(remap(*b, slots))),
        n => n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn val(src: &str, x: &[f64]) -> f64 {
        let e = parse(src, &["x", "y"]).unwrap();
        let j: Vec<Jet2> = x.iter().map(|&v| Jet2::constant(v)).collect();
        e.eval(&j).unwrap().value()
    }

    #[test]
    fn precedence() {
        assert_eq!(val("1 + 2 * 3", &[0.0, 0.0]), 7.0);
        assert_eq!(val("-x^2", &[3.0, 0.0]), -9.0);
        assert_eq!(val("2^3^2", &[0.0, 0.0]), 512.0);
        assert_eq!(val("x / y / 2", &[8.0, 2.0]), 2.0);
        assert!((val("sin(pi/2) + log(e)", &[0.0, 0.0]) - 2.0).abs() < 1e-15);
        assert_eq!(val("1.5e-1 * 2", &[0.0, 0.0]), 0.3);
    }

    #[test]
    fn errors_carry_columns() {
        let err = parse("1 + z", &["x"]).unwrap_err();
        assert_eq!(err.column, 5);
        assert!(parse("sin x", &["x"]).is_err());
        assert!(parse("(1 + x", &["x"]).is_err());
        assert!(parse("1 2", &["x"]).is_err());
        assert_eq!(parse("2 $ 3", &[]).unwrap_err().column, 3);
    }

    #[test]
    fn fields_take_derivatives() {
        let t1 = ModelManifold::torus(1).unwrap();
        let f = field("sin(q)^2", &base_vars(1), t1).unwrap();
        let j = f.eval_jet(&[0.4]).unwrap();
        assert!((j.grad(0) - (0.8f64).sin()).abs() < 1e-14);
    }

    #[test]
    fn radius_variable() {
        let t = ModelManifold::torus(1).unwrap().cotangent();
        let g = field("exp(r^2/2)", &total_vars(1), t).unwrap();
        assert!((g.value(&[0.0, 2.0]).unwrap() - 2.0f64.exp()).abs() < 1e-12);
    }
}
