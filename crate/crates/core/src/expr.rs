//! Scalar arithmetic expressions over named state variables.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := atom ('^' UINT)?
//! atom    := NUMBER | IDENT | FUNC '(' sum ')' | '(' sum ')'
//! FUNC    := 'abs' | 'sign'
//! ```
//!
//! Exponents are non-negative integer literals. Unary minus applies to the
//! whole power, so `-x2^2` is `-(x2^2)`. Chained powers must be
//! parenthesized: `(x^2)^3`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown identifier `{name}` at position {position}")]
    UnknownIdentifier { name: String, position: usize },
    #[error("invalid variable list: {0}")]
    InvalidVariables(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("state has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Expression tree. Immutable once built; variables carry both their index
/// into the state vector and their declared name.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var { index: usize, name: Arc<str> },
    Neg(Box<Expr>),
    Abs(Box<Expr>),
    /// `sign(e)`, with `sign(0) = 0`. Produced by differentiating `abs`.
    Sign(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

/// Result of [`Expr::differentiate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub expr: Expr,
    /// True when an `abs` node was differentiated. The derivative then
    /// contains `sign(..)`, which evaluates to 0 where its argument is 0
    /// (the true derivative does not exist there).
    pub uses_sign_convention: bool,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn var(index: usize, name: &str) -> Expr {
        Expr::Var {
            index,
            name: Arc::from(name),
        }
    }

    /// Parse `text` against the declared variable names.
    pub fn parse<S: AsRef<str>>(text: &str, vars: &[S]) -> Result<Expr, ParseError> {
        let names = check_vars(vars)?;
        Parser::new(text, &names)?.parse_all()
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    /// Largest variable index referenced plus one (0 for constant trees).
    pub fn min_dim(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var { index, .. } => index + 1,
            Expr::Neg(a) | Expr::Abs(a) | Expr::Sign(a) | Expr::Pow(a, _) => a.min_dim(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.min_dim().max(b.min_dim())
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let need = self.min_dim();
        if x.len() < need {
            return Err(EvalError::Dimension {
                expected: need,
                got: x.len(),
            });
        }
        self.eval_unchecked(x)
    }

    fn eval_unchecked(&self, x: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var { index, .. } => x[*index],
            Expr::Neg(a) => -a.eval_unchecked(x)?,
            Expr::Abs(a) => a.eval_unchecked(x)?.abs(),
            Expr::Sign(a) => sign(a.eval_unchecked(x)?),
            Expr::Add(a, b) => a.eval_unchecked(x)? + b.eval_unchecked(x)?,
            Expr::Sub(a, b) => a.eval_unchecked(x)? - b.eval_unchecked(x)?,
            Expr::Mul(a, b) => a.eval_unchecked(x)? * b.eval_unchecked(x)?,
            Expr::Div(a, b) => {
                let den = b.eval_unchecked(x)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                a.eval_unchecked(x)? / den
            }
            Expr::Pow(a, n) => a.eval_unchecked(x)?.powi(*n as i32),
        })
    }

    /// Partial derivative with respect to the state variable at `var`.
    pub fn differentiate(&self, var: usize) -> Derivative {
        let mut flagged = false;
        let expr = self.diff(var, &mut flagged);
        Derivative {
            expr,
            uses_sign_convention: flagged,
        }
    }

    fn diff(&self, var: usize, flagged: &mut bool) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var { index, .. } => Expr::Const(if *index == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.diff(var, flagged)),
            Expr::Abs(a) => {
                let da = a.diff(var, flagged);
                if da.is_zero() {
                    return da;
                }
                *flagged = true;
                mul(Expr::Sign(a.clone()), da)
            }
            Expr::Sign(_) => Expr::Const(0.0),
            Expr::Add(a, b) => add(a.diff(var, flagged), b.diff(var, flagged)),
            Expr::Sub(a, b) => sub(a.diff(var, flagged), b.diff(var, flagged)),
            Expr::Mul(a, b) => {
                let da = a.diff(var, flagged);
                let db = b.diff(var, flagged);
                add(mul(da, (**b).clone()), mul((**a).clone(), db))
            }
            Expr::Div(a, b) => {
                let da = a.diff(var, flagged);
                let db = b.diff(var, flagged);
                if db.is_zero() {
                    return div(da, (**b).clone());
                }
                let num = sub(mul(da, (**b).clone()), mul((**a).clone(), db));
                div(num, pow((**b).clone(), 2))
            }
            Expr::Pow(a, n) => {
                if *n == 0 {
                    return Expr::Const(0.0);
                }
                let da = a.diff(var, flagged);
                mul(
                    mul(Expr::Const(*n as f64), pow((**a).clone(), n - 1)),
                    da,
                )
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Const(c) if c.is_sign_negative() => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }

    fn fmt_at(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let paren = self.precedence() < min_prec;
        if paren {
            f.write_str("(")?;
        }
        match self {
            Expr::Const(c) => write!(f, "{:?}", c)?,
            Expr::Var { name, .. } => f.write_str(name)?,
            Expr::Neg(a) => {
                f.write_str("-")?;
                a.fmt_at(f, 3)?;
            }
            Expr::Abs(a) => {
                f.write_str("abs(")?;
                a.fmt_at(f, 0)?;
                f.write_str(")")?;
            }
            Expr::Sign(a) => {
                f.write_str("sign(")?;
                a.fmt_at(f, 0)?;
                f.write_str(")")?;
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                a.fmt_at(f, 1)?;
                f.write_str(if matches!(self, Expr::Add(..)) { " + " } else { " - " })?;
                b.fmt_at(f, 2)?;
            }
            Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.fmt_at(f, 2)?;
                f.write_str(if matches!(self, Expr::Mul(..)) { "*" } else { "/" })?;
                b.fmt_at(f, 3)?;
            }
            Expr::Pow(a, n) => {
                a.fmt_at(f, 5)?;
                write!(f, "^{}", n)?;
            }
        }
        if paren {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_at(f, 0)
    }
}

// Constructors with light constant folding. They never fold a division by
// zero, so evaluation errors are preserved.

pub fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(Box::new(a)),
    }
}

pub fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x - y),
        (Some(x), _) if x == 0.0 => neg(b),
        (_, Some(y)) if y == 0.0 => a,
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::Const(0.0),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) if y != 0.0 => Expr::Const(x / y),
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

pub fn pow(a: Expr, n: u32) -> Expr {
    match (a.as_const(), n) {
        (_, 0) => Expr::Const(1.0),
        (_, 1) => a,
        (Some(x), n) => Expr::Const(x.powi(n as i32)),
        _ => Expr::Pow(Box::new(a), n),
    }
}

pub fn abs(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(c.abs()),
        a => Expr::Abs(Box::new(a)),
    }
}

fn check_vars<S: AsRef<str>>(vars: &[S]) -> Result<Vec<&str>, ParseError> {
    let mut names: Vec<&str> = Vec::with_capacity(vars.len());
    for v in vars {
        let v = v.as_ref();
        let mut chars = v.chars();
        let ok = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
            && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !ok || is_reserved(v) {
            return Err(ParseError::InvalidVariables(format!(
                "`{}` is not a valid identifier",
                v
            )));
        }
        if names.contains(&v) {
            return Err(ParseError::InvalidVariables(format!("`{}` declared twice", v)));
        }
        names.push(v);
    }
    Ok(names)
}

fn is_reserved(name: &str) -> bool {
    matches!(name, "abs" | "sign")
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64, bool),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
    vars: &'a [&'a str],
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((Tok::Plus, start)),
            b'-' => out.push((Tok::Minus, start)),
            b'*' => out.push((Tok::Star, start)),
            b'/' => out.push((Tok::Slash, start)),
            b'^' => out.push((Tok::Caret, start)),
            b'(' => out.push((Tok::LParen, start)),
            b')' => out.push((Tok::RParen, start)),
            b'0'..=b'9' | b'.' => {
                let mut integral = true;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    integral = false;
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        integral = false;
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| ParseError::Syntax {
                    position: start,
                    message: format!("malformed number `{}`", s),
                })?;
                out.push((Tok::Num(v, integral), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    position: start,
                    message: format!("unexpected character `{}`", ch),
                });
            }
        }
        i += 1;
    }
    Ok(out)
}

impl<'a> Parser<'a> {
    fn new(text: &str, vars: &'a [&'a str]) -> Result<Self, ParseError> {
        let toks = tokenize(text)?;
        if toks.is_empty() {
            return Err(ParseError::Empty);
        }
        Ok(Parser {
            toks,
            pos: 0,
            end: text.len(),
            vars,
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            position: self.here(),
            message: message.into(),
        })
    }

    fn parse_all(mut self) -> Result<Expr, ParseError> {
        let e = self.sum()?;
        if self.pos < self.toks.len() {
            return self.error("unexpected trailing input");
        }
        Ok(e)
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.product()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.product()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::Minus) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Plus) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() != Some(&Tok::Caret) {
            return Ok(base);
        }
        self.pos += 1;
        let exp = match self.peek() {
            Some(Tok::Num(v, true)) if *v <= u32::MAX as f64 => *v as u32,
            _ => return self.error("exponent must be a non-negative integer literal"),
        };
        self.pos += 1;
        if self.peek() == Some(&Tok::Caret) {
            return self.error("chained exponents are ambiguous; use parentheses");
        }
        Ok(Expr::Pow(Box::new(base), exp))
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let position = self.here();
        let tok = match self.toks.get(self.pos) {
            Some((t, _)) => t.clone(),
            None => return self.error("unexpected end of input"),
        };
        self.pos += 1;
        match tok {
            Tok::Num(v, _) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let inner = self.sum()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if is_reserved(&name) {
                    if self.peek() != Some(&Tok::LParen) {
                        return self.error(format!("expected `(` after `{}`", name));
                    }
                    self.pos += 1;
                    let arg = self.sum()?;
                    self.expect_rparen()?;
                    let arg = Box::new(arg);
                    return Ok(if name == "abs" {
                        Expr::Abs(arg)
                    } else {
                        Expr::Sign(arg)
                    });
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(index) => Ok(Expr::Var {
                        index,
                        name: Arc::from(name.as_str()),
                    }),
                    None => Err(ParseError::UnknownIdentifier { name, position }),
                }
            }
            _ => {
                self.pos -= 1;
                self.error("expected a number, variable or `(`")
            }
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if self.peek() == Some(&Tok::RParen) {
            self.pos += 1;
            Ok(())
        } else {
            self.error("expected `)`")
        }
    }
}

/// An ordered list of expressions over a common `n`-dimensional state.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorExpr {
    components: Vec<Expr>,
    state_dim: usize,
}

impl VectorExpr {
    pub fn new(components: Vec<Expr>, state_dim: usize) -> Result<Self, ParseError> {
        if let Some(e) = components.iter().find(|e| e.min_dim() > state_dim) {
            return Err(ParseError::InvalidVariables(format!(
                "`{}` references a variable outside the {}-dimensional state",
                e, state_dim
            )));
        }
        Ok(VectorExpr {
            components,
            state_dim,
        })
    }

    pub fn parse<S: AsRef<str>, T: AsRef<str>>(texts: &[T], vars: &[S]) -> Result<Self, ParseError> {
        let components = texts
            .iter()
            .map(|t| Expr::parse(t.as_ref(), vars))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(VectorExpr {
            components,
            state_dim: vars.len(),
        })
    }

    pub fn zeros(len: usize, state_dim: usize) -> Self {
        VectorExpr {
            components: vec![Expr::Const(0.0); len],
            state_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn is_identically_zero(&self) -> bool {
        self.components.iter().all(Expr::is_zero)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        if x.len() != self.state_dim {
            return Err(EvalError::Dimension {
                expected: self.state_dim,
                got: x.len(),
            });
        }
        self.components.iter().map(|e| e.eval_unchecked(x)).collect()
    }

    /// Symbolic Jacobian; entry `[i][j]` is the derivative of component `i`
    /// with respect to state variable `j`.
    pub fn jacobian(&self) -> Vec<Vec<Expr>> {
        self.components
            .iter()
            .map(|e| (0..self.state_dim).map(|j| e.differentiate(j).expr).collect())
            .collect()
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.components.iter().map(|e| e.to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const XY: [&str; 2] = ["x1", "x2"];

    fn ev(text: &str, x: &[f64]) -> f64 {
        Expr::parse(text, &XY).unwrap().eval(x).unwrap()
    }

    #[test]
    fn parses_and_evaluates_the_open_loop_components() {
        assert_eq!(ev("x2^2 - 6*x2", &[0.0, 4.0]), -8.0);
        assert_eq!(ev("x2^2-6*x2", &[0.0, 8.0]), 16.0);
        assert_eq!(ev("-4*x1", &[1.0, 0.0]), -4.0);
        assert_eq!(ev("7", &[3.0, -2.0]), 7.0);
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("1 + 2*3", &[0.0, 0.0]), 7.0);
        assert_eq!(ev("2*3^2", &[0.0, 0.0]), 18.0);
        assert_eq!(ev("-x2^2", &[0.0, 3.0]), -9.0);
        assert_eq!(ev("(-x2)^2", &[0.0, 3.0]), 9.0);
        assert_eq!(ev("8/2/2", &[0.0, 0.0]), 2.0);
        assert_eq!(ev("5 - 3 - 1", &[0.0, 0.0]), 1.0);
        assert_eq!(ev("2*-3", &[0.0, 0.0]), -6.0);
        assert_eq!(ev("abs(x1 - 5)", &[1.0, 0.0]), 4.0);
        assert_eq!(ev("sign(x1)", &[-0.5, 0.0]), -1.0);
        assert_eq!(ev("1.5e1 + .5", &[0.0, 0.0]), 15.5);
    }

    #[test]
    fn syntax_errors_carry_positions() {
        match Expr::parse("x1 +", &XY) {
            Err(ParseError::Syntax { position, .. }) => assert_eq!(position, 4),
            other => panic!("expected syntax error, got {:?}", other),
        }
        assert!(matches!(
            Expr::parse("x1 * (x2", &XY),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            Expr::parse("x1 ^ 2.5", &XY),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            Expr::parse("x1 ^ 2 ^ 2", &XY),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(Expr::parse("   ", &XY), Err(ParseError::Empty)));
        assert!(matches!(
            Expr::parse("x1 # 2", &XY),
            Err(ParseError::Syntax { position: 3, .. })
        ));
    }

    #[test]
    fn unknown_identifier() {
        assert_eq!(
            Expr::parse("x1 + x3", &XY),
            Err(ParseError::UnknownIdentifier {
                name: "x3".into(),
                position: 5
            })
        );
    }

    #[test]
    fn bad_variable_lists() {
        assert!(Expr::parse("x", &["x", "x"]).is_err());
        assert!(Expr::parse("x", &["1x"]).is_err());
        assert!(Expr::parse("x", &["abs"]).is_err());
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let e = Expr::parse("1/x1", &XY).unwrap();
        assert_eq!(e.eval(&[0.0, 1.0]), Err(EvalError::DivisionByZero));
        assert_eq!(e.eval(&[2.0, 1.0]), Ok(0.5));
    }

    #[test]
    fn derivatives_of_the_example_expressions() {
        let e = Expr::parse("x2^2 - 6*x2", &XY).unwrap();
        let d2 = e.differentiate(1);
        assert_eq!(d2.expr.eval(&[0.0, 4.0]).unwrap(), 2.0);
        assert!(!d2.uses_sign_convention);
        let d1 = e.differentiate(0);
        assert!(d1.expr.is_zero());

        let u = Expr::parse("-10*x2", &XY).unwrap();
        let du = u.differentiate(1).expr;
        for x2 in [-3.0, 0.0, 2.0, 7.0] {
            assert_eq!(du.eval(&[1.0, x2]).unwrap(), -10.0);
        }
    }

    #[test]
    fn abs_derivative_uses_sign_with_zero_at_kink() {
        let e = Expr::parse("abs(x1)", &XY).unwrap();
        let d = e.differentiate(0);
        assert!(d.uses_sign_convention);
        assert_eq!(d.expr.eval(&[-2.0, 0.0]).unwrap(), -1.0);
        assert_eq!(d.expr.eval(&[2.0, 0.0]).unwrap(), 1.0);
        assert_eq!(d.expr.eval(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(!e.differentiate(1).uses_sign_convention);
    }

    #[test]
    fn quotient_rule() {
        let e = Expr::parse("x1/(x2 + 1)", &XY).unwrap();
        let d2 = e.differentiate(1).expr;
        let got = d2.eval(&[3.0, 1.0]).unwrap();
        assert!((got - (-3.0 / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn display_is_readable() {
        let e = Expr::parse("x2^2 - 6*x2", &XY).unwrap();
        assert_eq!(e.to_string(), "x2^2 - 6.0*x2");
        let e = Expr::parse("-(x1 + x2)*(x1 - (x2 - 1))", &XY).unwrap();
        assert_eq!(e.to_string(), "-(x1 + x2)*(x1 - (x2 - 1.0))");
    }

    #[test]
    fn vector_jacobian() {
        let v = VectorExpr::parse(&["-4*x1", "x2^2 - 6*x2"], &XY).unwrap();
        let j = v.jacobian();
        let at = |i: usize, k: usize| j[i][k].eval(&[0.0, 4.0]).unwrap();
        assert_eq!([at(0, 0), at(0, 1), at(1, 0), at(1, 1)], [-4.0, 0.0, 0.0, 2.0]);
        assert_eq!(
            v.eval(&[1.0]),
            Err(EvalError::Dimension {
                expected: 2,
                got: 1
            })
        );
    }
}
