//! Arithmetic expression trees for user-defined game dynamics.
//!
//! The grammar covers vectors of scalar expressions over the state variables
//! `x1..xn`, the players' inputs `u1_1..` and `u2_1..`, and time `t`, with
//! the operators `+ - * / ^`, the functions `sin cos exp sqrt`, and numeric
//! literals. Components are separated by `;`.
//!
//! ```text
//! model   := expr (";" expr)*
//! expr    := term  (("+" | "-") term)*
//! term    := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := primary ("^" unary)?            -- right associative
//! primary := NUMBER | VAR | FUNC "(" expr ")" | "(" expr ")"
//! VAR     := "t" | "x"DIGITS | "u1_"DIGITS | "u2_"DIGITS
//! FUNC    := "sin" | "cos" | "exp" | "sqrt"
//! ```
//!
//! Evaluation is generic over a numeric carrier so the same tree serves
//! plain values, forward-mode dual numbers (Jacobians) and intervals
//! (range and remainder bounds), including dual-over-interval for
//! mean-value forms.

use std::fmt;

use thiserror::Error;

use crate::interval::Interval;

/// Source position, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.col)
    }
}

#[derive(Debug, Error)]
#[error("syntax error at {span}: {msg}")]
pub struct ParseError {
    pub span: Span,
    pub msg: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalErrorKind {
    DivisionByZero,
    DomainViolation,
    NonFinite,
    NonDifferentiable,
}

#[derive(Debug, Error)]
#[error("evaluation error at {span}: {kind:?}")]
pub struct EvalError {
    pub span: Span,
    pub kind: EvalErrorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    /// State component, zero-based.
    X(usize),
    /// Leader input component, zero-based.
    U1(usize),
    /// Follower input component, zero-based.
    U2(usize),
    T,
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X(i) => write!(f, "x{}", i + 1),
            Var::U1(i) => write!(f, "u1_{}", i + 1),
            Var::U2(i) => write!(f, "u2_{}", i + 1),
            Var::T => write!(f, "t"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

impl fmt::Display for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64, Span),
    Var(Var, Span),
    Neg(Box<Expr>, Span),
    Bin(BinOp, Box<Expr>, Box<Expr>, Span),
    Call(Func, Box<Expr>, Span),
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::Const(_, s)
            | Expr::Var(_, s)
            | Expr::Neg(_, s)
            | Expr::Bin(_, _, _, s)
            | Expr::Call(_, _, s) => *s,
        }
    }
}

/// Numeric carrier for generic expression evaluation.
pub trait Num: Clone {
    fn from_f64(c: f64) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Option<Self>;
    fn neg(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn sqrt(&self) -> Option<Self>;
    fn ln(&self) -> Option<Self>;
    fn powi(&self, k: i32) -> Option<Self>;
    fn powf(&self, o: &Self) -> Option<Self>;
    fn is_finite_val(&self) -> bool;
}

impl Num for f64 {
    fn from_f64(c: f64) -> Self {
        c
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Option<Self> {
        if *o == 0.0 {
            None
        } else {
            Some(self / o)
        }
    }
    fn neg(&self) -> Self {
        -self
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn sqrt(&self) -> Option<Self> {
        if *self < 0.0 {
            None
        } else {
            Some(f64::sqrt(*self))
        }
    }
    fn ln(&self) -> Option<Self> {
        if *self <= 0.0 {
            None
        } else {
            Some(f64::ln(*self))
        }
    }
    fn powi(&self, k: i32) -> Option<Self> {
        let r = f64::powi(*self, k);
        if r.is_finite() {
            Some(r)
        } else {
            None
        }
    }
    fn powf(&self, o: &Self) -> Option<Self> {
        let r = f64::powf(*self, *o);
        if r.is_finite() {
            Some(r)
        } else {
            None
        }
    }
    fn is_finite_val(&self) -> bool {
        self.is_finite()
    }
}

impl Num for Interval {
    fn from_f64(c: f64) -> Self {
        Interval::point(c)
    }
    fn add(&self, o: &Self) -> Self {
        Interval::add(self, o)
    }
    fn sub(&self, o: &Self) -> Self {
        Interval::sub(self, o)
    }
    fn mul(&self, o: &Self) -> Self {
        Interval::mul(self, o)
    }
    fn div(&self, o: &Self) -> Option<Self> {
        Interval::div(self, o)
    }
    fn neg(&self) -> Self {
        Interval::neg(self)
    }
    fn sin(&self) -> Self {
        Interval::sin(self)
    }
    fn cos(&self) -> Self {
        Interval::cos(self)
    }
    fn exp(&self) -> Self {
        Interval::exp(self)
    }
    fn sqrt(&self) -> Option<Self> {
        Interval::sqrt(self)
    }
    fn ln(&self) -> Option<Self> {
        Interval::ln(self)
    }
    fn powi(&self, k: i32) -> Option<Self> {
        Interval::powi(self, k)
    }
    fn powf(&self, o: &Self) -> Option<Self> {
        // a^b = exp(b ln a); requires a strictly positive base range
        let ln_a = Interval::ln(self)?;
        Some(Interval::exp(&Interval::mul(o, &ln_a)))
    }
    fn is_finite_val(&self) -> bool {
        self.is_finite()
    }
}

/// Forward-mode dual number over any carrier.
#[derive(Debug, Clone)]
pub struct Dual<S> {
    pub v: S,
    pub d: S,
}

impl<S: Num> Dual<S> {
    pub fn constant(v: S) -> Self {
        Self {
            v,
            d: S::from_f64(0.0),
        }
    }

    pub fn seeded(v: S) -> Self {
        Self {
            v,
            d: S::from_f64(1.0),
        }
    }
}

impl<S: Num> Num for Dual<S> {
    fn from_f64(c: f64) -> Self {
        Dual::constant(S::from_f64(c))
    }
    fn add(&self, o: &Self) -> Self {
        Dual {
            v: self.v.add(&o.v),
            d: self.d.add(&o.d),
        }
    }
    fn sub(&self, o: &Self) -> Self {
        Dual {
            v: self.v.sub(&o.v),
            d: self.d.sub(&o.d),
        }
    }
    fn mul(&self, o: &Self) -> Self {
        Dual {
            v: self.v.mul(&o.v),
            d: self.d.mul(&o.v).add(&self.v.mul(&o.d)),
        }
    }
    fn div(&self, o: &Self) -> Option<Self> {
        let v = self.v.div(&o.v)?;
        let d = self.d.sub(&v.mul(&o.d)).div(&o.v)?;
        Some(Dual { v, d })
    }
    fn neg(&self) -> Self {
        Dual {
            v: self.v.neg(),
            d: self.d.neg(),
        }
    }
    fn sin(&self) -> Self {
        Dual {
            v: self.v.sin(),
            d: self.v.cos().mul(&self.d),
        }
    }
    fn cos(&self) -> Self {
        Dual {
            v: self.v.cos(),
            d: self.v.sin().neg().mul(&self.d),
        }
    }
    fn exp(&self) -> Self {
        let e = self.v.exp();
        Dual {
            d: e.mul(&self.d),
            v: e,
        }
    }
    fn sqrt(&self) -> Option<Self> {
        let r = self.v.sqrt()?;
        let two_r = r.add(&r);
        let d = self.d.div(&two_r)?;
        Some(Dual { v: r, d })
    }
    fn ln(&self) -> Option<Self> {
        let v = self.v.ln()?;
        let d = self.d.div(&self.v)?;
        Some(Dual { v, d })
    }
    fn powi(&self, k: i32) -> Option<Self> {
        let v = self.v.powi(k)?;
        let vk1 = self.v.powi(k - 1)?;
        let d = S::from_f64(k as f64).mul(&vk1).mul(&self.d);
        Some(Dual { v, d })
    }
    fn powf(&self, o: &Self) -> Option<Self> {
        let v = self.v.powf(&o.v)?;
        let ln_a = self.v.ln()?;
        let ratio = self.d.div(&self.v)?;
        let d = v.mul(&o.d.mul(&ln_a).add(&o.v.mul(&ratio)));
        Some(Dual { v, d })
    }
    fn is_finite_val(&self) -> bool {
        self.v.is_finite_val() && self.d.is_finite_val()
    }
}

/// Variable bindings for evaluation.
pub struct Env<'a, S> {
    pub x: &'a [S],
    pub u1: &'a [S],
    pub u2: &'a [S],
    pub t: S,
}

impl Expr {
    pub fn eval<S: Num>(&self, env: &Env<'_, S>) -> Result<S, EvalError> {
        let val = match self {
            Expr::Const(c, _) => S::from_f64(*c),
            Expr::Var(v, _) => match v {
                Var::X(i) => env.x[*i].clone(),
                Var::U1(i) => env.u1[*i].clone(),
                Var::U2(i) => env.u2[*i].clone(),
                Var::T => env.t.clone(),
            },
            Expr::Neg(e, _) => e.eval(env)?.neg(),
            Expr::Bin(op, a, b, span) => {
                let lhs = a.eval(env)?;
                match op {
                    BinOp::Add => lhs.add(&b.eval(env)?),
                    BinOp::Sub => lhs.sub(&b.eval(env)?),
                    BinOp::Mul => lhs.mul(&b.eval(env)?),
                    BinOp::Div => {
                        let rhs = b.eval(env)?;
                        lhs.div(&rhs).ok_or(EvalError {
                            span: *span,
                            kind: EvalErrorKind::DivisionByZero,
                        })?
                    }
                    BinOp::Pow => {
                        // integer literal exponents take the powi path, which
                        // handles negative bases
                        if let Some(k) = int_exponent(b) {
                            lhs.powi(k).ok_or(EvalError {
                                span: *span,
                                kind: EvalErrorKind::DomainViolation,
                            })?
                        } else {
                            let rhs = b.eval(env)?;
                            lhs.powf(&rhs).ok_or(EvalError {
                                span: *span,
                                kind: EvalErrorKind::DomainViolation,
                            })?
                        }
                    }
                }
            }
            Expr::Call(f, arg, span) => {
                let a = arg.eval(env)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Sqrt => a.sqrt().ok_or(EvalError {
                        span: *span,
                        kind: EvalErrorKind::DomainViolation,
                    })?,
                }
            }
        };
        if !val.is_finite_val() {
            return Err(EvalError {
                span: self.span(),
                kind: EvalErrorKind::NonFinite,
            });
        }
        Ok(val)
    }

    /// Largest referenced one-based indices `(x, u1, u2)`.
    pub fn max_indices(&self, acc: &mut (usize, usize, usize)) {
        match self {
            Expr::Const(..) => {}
            Expr::Var(v, _) => match v {
                Var::X(i) => acc.0 = acc.0.max(i + 1),
                Var::U1(i) => acc.1 = acc.1.max(i + 1),
                Var::U2(i) => acc.2 = acc.2.max(i + 1),
                Var::T => {}
            },
            Expr::Neg(e, _) => e.max_indices(acc),
            Expr::Bin(_, a, b, _) => {
                a.max_indices(acc);
                b.max_indices(acc);
            }
            Expr::Call(_, a, _) => a.max_indices(acc),
        }
    }

    /// Structural degree with respect to `(x, u1, u2)`; time counts as a
    /// constant.
    pub fn degree(&self) -> Degree {
        match self {
            Expr::Const(..) | Expr::Var(Var::T, _) => Degree::Constant,
            Expr::Var(..) => Degree::Linear,
            Expr::Neg(e, _) => e.degree(),
            Expr::Bin(op, a, b, _) => {
                let (da, db) = (a.degree(), b.degree());
                match op {
                    BinOp::Add | BinOp::Sub => da.max(db),
                    BinOp::Mul => match (da, db) {
                        (Degree::Constant, d) | (d, Degree::Constant) => d,
                        _ => Degree::Nonlinear,
                    },
                    BinOp::Div => match (da, db) {
                        (d, Degree::Constant) => d,
                        _ => Degree::Nonlinear,
                    },
                    BinOp::Pow => match (da, db) {
                        (Degree::Constant, Degree::Constant) => Degree::Constant,
                        _ => Degree::Nonlinear,
                    },
                }
            }
            Expr::Call(_, a, _) => {
                if a.degree() == Degree::Constant {
                    Degree::Constant
                } else {
                    Degree::Nonlinear
                }
            }
        }
    }
}

fn int_exponent(e: &Expr) -> Option<i32> {
    match e {
        Expr::Const(c, _) if c.fract() == 0.0 && c.abs() <= 64.0 => Some(*c as i32),
        Expr::Neg(inner, _) => int_exponent(inner).map(|k| -k),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Degree {
    Constant,
    Linear,
    Nonlinear,
}

// Precedence-aware printing; parse(print(e)) evaluates identically to e.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn prec(e: &Expr) -> u8 {
            match e {
                Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
                Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
                Expr::Neg(..) => 3,
                Expr::Bin(BinOp::Pow, ..) => 4,
                _ => 5,
            }
        }
        fn wrap(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
            if prec(e) < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Const(c, _) => write!(f, "{c}"),
            Expr::Var(v, _) => write!(f, "{v}"),
            Expr::Neg(e, _) => {
                f.write_str("-")?;
                wrap(f, e, 3)
            }
            Expr::Bin(op, a, b, _) => {
                let (sym, p) = match op {
                    BinOp::Add => ("+", 1),
                    BinOp::Sub => ("-", 1),
                    BinOp::Mul => ("*", 2),
                    BinOp::Div => ("/", 2),
                    BinOp::Pow => ("^", 4),
                };
                if *op == BinOp::Pow {
                    wrap(f, a, p + 1)?;
                    write!(f, "{sym}")?;
                    wrap(f, b, p)
                } else {
                    wrap(f, a, p)?;
                    write!(f, " {sym} ")?;
                    wrap(f, b, p + 1)
                }
            }
            Expr::Call(func, a, _) => write!(f, "{func}({a})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Semi,
    Eof,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> u8 {
        let c = self.src[self.pos];
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        c
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn tokens(mut self) -> Result<Vec<(Tok, Span)>, ParseError> {
        let mut out = Vec::new();
        loop {
            while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
                self.bump();
            }
            let span = Span {
                line: self.line,
                col: self.col,
            };
            let Some(c) = self.peek() else {
                out.push((Tok::Eof, span));
                return Ok(out);
            };
            let tok = match c {
                b'+' => {
                    self.bump();
                    Tok::Plus
                }
                b'-' => {
                    self.bump();
                    Tok::Minus
                }
                b'*' => {
                    self.bump();
                    Tok::Star
                }
                b'/' => {
                    self.bump();
                    Tok::Slash
                }
                b'^' => {
                    self.bump();
                    Tok::Caret
                }
                b'(' => {
                    self.bump();
                    Tok::LParen
                }
                b')' => {
                    self.bump();
                    Tok::RParen
                }
                b',' => {
                    self.bump();
                    Tok::Comma
                }
                b';' => {
                    self.bump();
                    Tok::Semi
                }
                b'0'..=b'9' | b'.' => {
                    let start = self.pos;
                    while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.') {
                        self.bump();
                    }
                    // exponent part like 1e-3
                    if matches!(self.peek(), Some(b'e') | Some(b'E')) {
                        let save = (self.pos, self.line, self.col);
                        self.bump();
                        if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                            self.bump();
                        }
                        if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                                self.bump();
                            }
                        } else {
                            (self.pos, self.line, self.col) = save;
                        }
                    }
                    let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                    let val: f64 = text.parse().map_err(|_| ParseError {
                        span,
                        msg: format!("invalid number literal `{text}`"),
                    })?;
                    Tok::Num(val)
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let start = self.pos;
                    while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                        self.bump();
                    }
                    let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                    Tok::Ident(text.to_string())
                }
                other => {
                    return Err(ParseError {
                        span,
                        msg: format!("unexpected character `{}`", other as char),
                    })
                }
            };
            out.push((tok, span));
        }
    }
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    idx: usize,
}

impl Parser {
    fn peek(&self) -> &(Tok, Span) {
        &self.toks[self.idx]
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.toks[self.idx].clone();
        if self.idx + 1 < self.toks.len() {
            self.idx += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let (tok, span) = self.peek().clone();
            let op = match tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs), span);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let (tok, span) = self.peek().clone();
            let op = match tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs), span);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            (Tok::Minus, span) => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.unary()?), span))
            }
            (Tok::Plus, _) => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if let (Tok::Caret, span) = self.peek().clone() {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp), span));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let (tok, span) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v, span)),
            Tok::LParen => {
                let inner = self.expr()?;
                let (close, cspan) = self.bump();
                if close != Tok::RParen {
                    return Err(ParseError {
                        span: cspan,
                        msg: "expected `)`".into(),
                    });
                }
                Ok(inner)
            }
            Tok::Ident(name) => self.ident(name, span),
            other => Err(ParseError {
                span,
                msg: format!("expected a value, found {other:?}"),
            }),
        }
    }

    fn ident(&mut self, name: String, span: Span) -> Result<Expr, ParseError> {
        let func = match name.as_str() {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        };
        if let Some(func) = func {
            let (open, ospan) = self.bump();
            if open != Tok::LParen {
                return Err(ParseError {
                    span: ospan,
                    msg: format!("expected `(` after function `{func}`"),
                });
            }
            let arg = self.expr()?;
            let (next, nspan) = self.bump();
            match next {
                Tok::RParen => return Ok(Expr::Call(func, Box::new(arg), span)),
                Tok::Comma => {
                    return Err(ParseError {
                        span: nspan,
                        msg: format!("function `{func}` takes exactly one argument"),
                    })
                }
                _ => {
                    return Err(ParseError {
                        span: nspan,
                        msg: "expected `)`".into(),
                    })
                }
            }
        }
        if name == "t" {
            return Ok(Expr::Var(Var::T, span));
        }
        let var = parse_var_name(&name);
        match var {
            Some(v) => Ok(Expr::Var(v, span)),
            None => Err(ParseError {
                span,
                msg: format!("unknown identifier `{name}`"),
            }),
        }
    }
}

fn parse_var_name(name: &str) -> Option<Var> {
    let index = |s: &str| -> Option<usize> {
        let k: usize = s.parse().ok()?;
        if k >= 1 {
            Some(k - 1)
        } else {
            None
        }
    };
    if let Some(rest) = name.strip_prefix("u1_") {
        return index(rest).map(Var::U1);
    }
    if let Some(rest) = name.strip_prefix("u2_") {
        return index(rest).map(Var::U2);
    }
    if let Some(rest) = name.strip_prefix('x') {
        return index(rest).map(Var::X);
    }
    None
}

/// Parses a single scalar expression.
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let toks = Lexer::new(src).tokens()?;
    let mut p = Parser { toks, idx: 0 };
    let e = p.expr()?;
    let (tok, span) = p.peek().clone();
    if tok != Tok::Eof {
        return Err(ParseError {
            span,
            msg: format!("unexpected trailing input {tok:?}"),
        });
    }
    Ok(e)
}

/// Parses a `;`-separated vector of scalar expressions.
pub fn parse_components(src: &str) -> Result<Vec<Expr>, ParseError> {
    let toks = Lexer::new(src).tokens()?;
    let mut p = Parser { toks, idx: 0 };
    let mut out = vec![p.expr()?];
    loop {
        let (tok, span) = p.peek().clone();
        match tok {
            Tok::Semi => {
                p.bump();
                out.push(p.expr()?);
            }
            Tok::Eof => return Ok(out),
            other => {
                return Err(ParseError {
                    span,
                    msg: format!("unexpected trailing input {other:?}"),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_f64(e: &Expr, x: &[f64], u1: &[f64], u2: &[f64], t: f64) -> f64 {
        e.eval(&Env { x, u1, u2, t }).unwrap()
    }

    #[test]
    fn parses_benchmark_dynamics() {
        let comps = parse_components("x1 + 0.5*x2 + u1_1 ; 1.5*x1 + x2 + u2_1").unwrap();
        assert_eq!(comps.len(), 2);
        assert!(comps.iter().all(|c| c.degree() <= Degree::Linear));
        let v = eval_f64(&comps[0], &[1.0, 2.0], &[0.25], &[0.0], 0.0);
        assert!((v - 2.25).abs() < 1e-15);
    }

    #[test]
    fn syntax_error_column() {
        let err = parse_expr("x1*").unwrap_err();
        assert_eq!(err.span.col, 4);
        assert_eq!(err.span.line, 1);
    }

    #[test]
    fn unknown_identifier() {
        let err = parse_expr("x1 + foo").unwrap_err();
        assert!(err.msg.contains("unknown identifier"));
        assert_eq!(err.span.col, 6);
    }

    #[test]
    fn arity_mismatch() {
        let err = parse_expr("sin(x1, x2)").unwrap_err();
        assert!(err.msg.contains("exactly one argument"));
    }

    #[test]
    fn transcendental_is_nonlinear() {
        let comps = parse_components("sin(x1) ; x2").unwrap();
        assert_eq!(comps[0].degree(), Degree::Nonlinear);
        assert_eq!(comps[1].degree(), Degree::Linear);
    }

    #[test]
    fn division_by_zero_reports_span() {
        let e = parse_expr("1/(x1 - 1)").unwrap();
        let err = e
            .eval(&Env {
                x: &[1.0],
                u1: &[],
                u2: &[],
                t: 0.0,
            })
            .unwrap_err();
        assert_eq!(err.kind, EvalErrorKind::DivisionByZero);
    }

    #[test]
    fn dual_derivatives_match_finite_differences() {
        let e = parse_expr("sin(x1)*exp(x2) + x1^3 / (2 + x2)").unwrap();
        let xv = [0.7, -0.3];
        let h = 1e-6;
        for seed in 0..2 {
            let x: Vec<Dual<f64>> = (0..2)
                .map(|i| {
                    if i == seed {
                        Dual::seeded(xv[i])
                    } else {
                        Dual::constant(xv[i])
                    }
                })
                .collect();
            let d = e
                .eval(&Env {
                    x: &x,
                    u1: &[],
                    u2: &[],
                    t: Dual::constant(0.0),
                })
                .unwrap()
                .d;
            let mut xp = xv;
            xp[seed] += h;
            let mut xm = xv;
            xm[seed] -= h;
            let fd = (eval_f64(&e, &xp, &[], &[], 0.0) - eval_f64(&e, &xm, &[], &[], 0.0))
                / (2.0 * h);
            assert!((d - fd).abs() < 1e-8 * (1.0 + fd.abs()), "seed {seed}");
        }
    }

    #[test]
    fn interval_eval_encloses_samples() {
        let e = parse_expr("x1^2 - cos(x2)*x1").unwrap();
        let ix = [Interval::new(-1.0, 2.0), Interval::new(0.0, 3.0)];
        let range = e
            .eval(&Env {
                x: &ix,
                u1: &[],
                u2: &[],
                t: Interval::point(0.0),
            })
            .unwrap();
        for i in 0..=10 {
            for j in 0..=10 {
                let x1 = -1.0 + 3.0 * i as f64 / 10.0;
                let x2 = 3.0 * j as f64 / 10.0;
                assert!(range.contains(eval_f64(&e, &[x1, x2], &[], &[], 0.0)));
            }
        }
    }

    #[test]
    fn print_parse_round_trip() {
        let srcs = [
            "x1 + 0.5*x2 + u1_1",
            "-x1^2",
            "(x1 + x2)*(x1 - x2)",
            "2^-2 * sqrt(x1 + 2)",
            "1.5e-3 * t - x1/(x2 + 4)",
        ];
        for src in srcs {
            let e = parse_expr(src).unwrap();
            let printed = e.to_string();
            let back = parse_expr(&printed).unwrap_or_else(|err| {
                panic!("failed to reparse `{printed}`: {err}");
            });
            let xv = [0.37, 1.21];
            let a = eval_f64(&e, &xv, &[0.5], &[0.5], 0.8);
            let b = eval_f64(&back, &xv, &[0.5], &[0.5], 0.8);
            assert!((a - b).abs() <= 1e-15 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn unary_minus_binds_below_power() {
        let e = parse_expr("-x1^2").unwrap();
        let v = eval_f64(&e, &[3.0], &[], &[], 0.0);
        assert_eq!(v, -9.0);
    }
}
