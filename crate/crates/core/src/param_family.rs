//! Analytic translation expressions `t_j(u)` and their derivatives.
//!
//! Expressions are parsed from a small closed grammar, so every accepted
//! expression is real-analytic wherever it is defined. Derivatives are
//! propagated in Taylor mode and reported as plain derivatives.

use std::f64::consts::PI;
use std::fmt;

use thiserror::Error as ThisError;

use crate::error::{invalid, Error, Result};
use crate::ifs_core::{validate_probability, Ifs, Point, Point2, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        match s {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            _ => None,
        }
    }
}

/// Expression tree in the parameter `u`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Param,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Power with a literal exponent.
    Pow(Box<Expr>, f64),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, ThisError)]
pub enum ParseErrorKind {
    #[error("unexpected character {0:?}")]
    UnexpectedChar(char),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected token")]
    UnexpectedToken,
    #[error("unbalanced parenthesis")]
    Unbalanced,
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("malformed number")]
    BadNumber,
    #[error("exponent must be a numeric literal")]
    ExpectedLiteral,
}

#[derive(Debug, Clone, PartialEq, ThisError)]
#[error("parse error at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
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
}

fn lex(src: &str) -> std::result::Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let single = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(t) = single {
            out.push((t, start));
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => out.push((Tok::Num(v), start)),
                _ => return Err(ParseError { offset: start, kind: ParseErrorKind::BadNumber }),
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
            continue;
        }
        let ch = src[start..].chars().next().unwrap_or('\u{FFFD}');
        return Err(ParseError { offset: start, kind: ParseErrorKind::UnexpectedChar(ch) });
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, o)| *o)
    }

    fn fail<T>(&self, kind: ParseErrorKind) -> std::result::Result<T, ParseError> {
        Err(ParseError { offset: self.offset(), kind })
    }

    fn unexpected<T>(&self) -> std::result::Result<T, ParseError> {
        match self.peek() {
            None => self.fail(ParseErrorKind::UnexpectedEnd),
            Some(Tok::RParen) => self.fail(ParseErrorKind::Unbalanced),
            Some(_) => self.fail(ParseErrorKind::UnexpectedToken),
        }
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_close(&mut self) -> std::result::Result<(), ParseError> {
        if self.eat(&Tok::RParen) {
            Ok(())
        } else if self.peek().is_none() {
            self.fail(ParseErrorKind::Unbalanced)
        } else {
            self.fail(ParseErrorKind::UnexpectedToken)
        }
    }

    fn sum(&mut self) -> std::result::Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            if self.eat(&Tok::Plus) {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.product()?));
            } else if self.eat(&Tok::Minus) {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.product()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn product(&mut self) -> std::result::Result<Expr, ParseError> {
        let mut lhs = self.power()?;
        loop {
            if self.eat(&Tok::Star) {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.power()?));
            } else if self.eat(&Tok::Slash) {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.power()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn power(&mut self) -> std::result::Result<Expr, ParseError> {
        let mut base = self.unary()?;
        while self.eat(&Tok::Caret) {
            let r = self.literal()?;
            base = Expr::Pow(Box::new(base), r);
        }
        Ok(base)
    }

    fn unary(&mut self) -> std::result::Result<Expr, ParseError> {
        if self.eat(&Tok::Minus) {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn literal(&mut self) -> std::result::Result<f64, ParseError> {
        let sign = if self.eat(&Tok::Minus) {
            -1.0
        } else {
            self.eat(&Tok::Plus);
            1.0
        };
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(sign * v)
            }
            None => self.fail(ParseErrorKind::UnexpectedEnd),
            _ => self.fail(ParseErrorKind::ExpectedLiteral),
        }
    }

    fn atom(&mut self) -> std::result::Result<Expr, ParseError> {
        let at = self.offset();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.sum()?;
                self.expect_close()?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "u" => Ok(Expr::Param),
                    "pi" => Ok(Expr::Num(PI)),
                    "pow" => {
                        if !self.eat(&Tok::LParen) {
                            return self.unexpected();
                        }
                        let base = self.sum()?;
                        if !self.eat(&Tok::Comma) {
                            return self.unexpected();
                        }
                        let r = self.literal()?;
                        self.expect_close()?;
                        Ok(Expr::Pow(Box::new(base), r))
                    }
                    other => match Func::from_name(other) {
                        Some(f) => {
                            if !self.eat(&Tok::LParen) {
                                return self.unexpected();
                            }
                            let arg = self.sum()?;
                            self.expect_close()?;
                            Ok(Expr::Call(f, Box::new(arg)))
                        }
                        None => Err(ParseError {
                            offset: at,
                            kind: ParseErrorKind::UnknownIdentifier(other.to_string()),
                        }),
                    },
                }
            }
            _ => self.unexpected(),
        }
    }
}

/// Parses an expression in `u`.
pub fn parse_expr(src: &str) -> std::result::Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, end: src.len() };
    let e = p.sum()?;
    if p.pos < p.toks.len() {
        return p.unexpected();
    }
    Ok(e)
}

fn fmt_num(v: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if v < 0.0 || (v == 0.0 && v.is_sign_negative()) {
        write!(f, "(-{})", -v)
    } else {
        write!(f, "{v}")
    }
}

/// Canonical, fully parenthesised form; parses back to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => fmt_num(*v, f),
            Expr::Param => write!(f, "u"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, r) => write!(f, "pow({a}, {r})"),
            Expr::Call(g, a) => write!(f, "{}({a})", g.name()),
        }
    }
}

fn domain_err<T>(e: &Expr, reason: &'static str) -> Result<T> {
    Err(Error::Domain { location: e.to_string(), reason })
}

fn integer_exponent(r: f64) -> Option<i32> {
    (r.fract() == 0.0 && r.abs() <= 64.0).then_some(r as i32)
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    /// Whether `u` occurs anywhere in the expression.
    pub fn depends_on_param(&self) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Param => true,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.depends_on_param(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on_param() || b.depends_on_param()
            }
        }
    }

    /// Plain evaluation at `u`.
    pub fn eval(&self, u: f64) -> Result<f64> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Param => u,
            Expr::Neg(a) => -a.eval(u)?,
            Expr::Add(a, b) => a.eval(u)? + b.eval(u)?,
            Expr::Sub(a, b) => a.eval(u)? - b.eval(u)?,
            Expr::Mul(a, b) => a.eval(u)? * b.eval(u)?,
            Expr::Div(a, b) => {
                let d = b.eval(u)?;
                if d == 0.0 {
                    return domain_err(self, "division by zero");
                }
                a.eval(u)? / d
            }
            Expr::Pow(a, r) => {
                let x = a.eval(u)?;
                match integer_exponent(*r) {
                    Some(k) if k < 0 && x == 0.0 => {
                        return domain_err(self, "negative power of zero")
                    }
                    Some(k) => x.powi(k),
                    None if x <= 0.0 => return domain_err(self, "non-integer power of a nonpositive base"),
                    None => x.powf(*r),
                }
            }
            Expr::Call(g, a) => {
                let x = a.eval(u)?;
                match g {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Log if x <= 0.0 => return domain_err(self, "log of a nonpositive argument"),
                    Func::Log => x.ln(),
                }
            }
        };
        if !v.is_finite() {
            return domain_err(self, "non-finite value");
        }
        Ok(v)
    }

    /// Value and derivatives up to order `order` at `u`.
    pub fn eval_jet(&self, u: f64, order: usize) -> Result<Jet> {
        Ok(Jet::from_taylor(self.taylor(u, order)?))
    }

    fn taylor(&self, u: f64, k: usize) -> Result<Vec<f64>> {
        let n = k + 1;
        let c = match self {
            Expr::Num(v) => {
                let mut c = vec![0.0; n];
                c[0] = *v;
                c
            }
            Expr::Param => {
                let mut c = vec![0.0; n];
                c[0] = u;
                if k >= 1 {
                    c[1] = 1.0;
                }
                c
            }
            Expr::Neg(a) => a.taylor(u, k)?.into_iter().map(|x| -x).collect(),
            Expr::Add(a, b) => zip_with(a.taylor(u, k)?, &b.taylor(u, k)?, |x, y| x + y),
            Expr::Sub(a, b) => zip_with(a.taylor(u, k)?, &b.taylor(u, k)?, |x, y| x - y),
            Expr::Mul(a, b) => t_mul(&a.taylor(u, k)?, &b.taylor(u, k)?),
            Expr::Div(a, b) => {
                let den = b.taylor(u, k)?;
                if den[0] == 0.0 {
                    return domain_err(self, "division by zero");
                }
                t_div(&a.taylor(u, k)?, &den)
            }
            Expr::Pow(a, r) => {
                let base = a.taylor(u, k)?;
                match integer_exponent(*r) {
                    Some(p) if p >= 0 => t_powi(&base, p as u32),
                    Some(p) => {
                        if base[0] == 0.0 {
                            return domain_err(self, "negative power of zero");
                        }
                        let mut one = vec![0.0; n];
                        one[0] = 1.0;
                        t_div(&one, &t_powi(&base, (-p) as u32))
                    }
                    None => {
                        if base[0] <= 0.0 {
                            return domain_err(self, "non-integer power of a nonpositive base");
                        }
                        t_powf(&base, *r)
                    }
                }
            }
            Expr::Call(g, a) => {
                let x = a.taylor(u, k)?;
                match g {
                    Func::Sin => t_sincos(&x).0,
                    Func::Cos => t_sincos(&x).1,
                    Func::Exp => t_exp(&x),
                    Func::Log => {
                        if x[0] <= 0.0 {
                            return domain_err(self, "log of a nonpositive argument");
                        }
                        t_log(&x)
                    }
                }
            }
        };
        if c.iter().any(|v| !v.is_finite()) {
            return domain_err(self, "non-finite value");
        }
        Ok(c)
    }
}

fn zip_with(mut a: Vec<f64>, b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    for (x, &y) in a.iter_mut().zip(b) {
        *x = f(*x, y);
    }
    a
}

fn t_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.len()).map(|k| (0..=k).map(|j| a[j] * b[k - j]).sum()).collect()
}

fn t_div(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; a.len()];
    for k in 0..a.len() {
        let s: f64 = (1..=k).map(|j| b[j] * c[k - j]).sum();
        c[k] = (a[k] - s) / b[0];
    }
    c
}

fn t_powi(a: &[f64], p: u32) -> Vec<f64> {
    let mut acc = vec![0.0; a.len()];
    acc[0] = 1.0;
    for _ in 0..p {
        acc = t_mul(&acc, a);
    }
    acc
}

fn t_powf(a: &[f64], r: f64) -> Vec<f64> {
    let mut p = vec![0.0; a.len()];
    p[0] = a[0].powf(r);
    for k in 1..a.len() {
        let s: f64 = (1..=k).map(|j| (r * j as f64 - (k - j) as f64) * a[j] * p[k - j]).sum();
        p[k] = s / (k as f64 * a[0]);
    }
    p
}

fn t_exp(a: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; a.len()];
    e[0] = a[0].exp();
    for k in 1..a.len() {
        let s: f64 = (1..=k).map(|j| j as f64 * a[j] * e[k - j]).sum();
        e[k] = s / k as f64;
    }
    e
}

fn t_log(a: &[f64]) -> Vec<f64> {
    let mut l = vec![0.0; a.len()];
    l[0] = a[0].ln();
    for k in 1..a.len() {
        let s: f64 = (1..k).map(|j| j as f64 * l[j] * a[k - j]).sum();
        l[k] = (a[k] - s / k as f64) / a[0];
    }
    l
}

fn t_sincos(a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = a.len();
    let (mut s, mut c) = (vec![0.0; n], vec![0.0; n]);
    s[0] = a[0].sin();
    c[0] = a[0].cos();
    for k in 1..n {
        let mut ss = 0.0;
        let mut cc = 0.0;
        for j in 1..=k {
            ss += j as f64 * a[j] * c[k - j];
            cc += j as f64 * a[j] * s[k - j];
        }
        s[k] = ss / k as f64;
        c[k] = -cc / k as f64;
    }
    (s, c)
}

/// Value and plain derivatives `d⁰ … d^K` at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    derivs: Vec<f64>,
}

impl Jet {
    pub fn zero(order: usize) -> Jet {
        Jet { derivs: vec![0.0; order + 1] }
    }

    pub fn constant(v: f64, order: usize) -> Jet {
        let mut j = Jet::zero(order);
        j.derivs[0] = v;
        j
    }

    pub fn from_derivatives(derivs: Vec<f64>) -> Jet {
        assert!(!derivs.is_empty(), "a jet has at least a value");
        Jet { derivs }
    }

    fn from_taylor(mut c: Vec<f64>) -> Jet {
        let mut fact = 1.0;
        for (k, x) in c.iter_mut().enumerate().skip(1) {
            fact *= k as f64;
            *x *= fact;
        }
        Jet { derivs: c }
    }

    pub fn order(&self) -> usize {
        self.derivs.len() - 1
    }

    pub fn value(&self) -> f64 {
        self.derivs[0]
    }

    pub fn derivative(&self, k: usize) -> f64 {
        self.derivs[k]
    }

    pub fn derivatives(&self) -> &[f64] {
        &self.derivs
    }

    /// `max_k |d^k|`.
    pub fn max_abs(&self) -> f64 {
        self.derivs.iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    /// `self += a·other`.
    pub fn axpy(&mut self, a: f64, other: &Jet) {
        for (x, y) in self.derivs.iter_mut().zip(&other.derivs) {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: f64) -> Jet {
        Jet { derivs: self.derivs.iter().map(|x| a * x).collect() }
    }
}

/// The parameter interval `U = [lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
    /// The family is periodic with period `hi − lo` (e.g. projection angles).
    pub periodic: bool,
}

impl Domain {
    pub fn new(lo: f64, hi: f64, periodic: bool) -> Result<Domain> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return invalid(format!("domain [{lo}, {hi}] is not a proper interval"));
        }
        Ok(Domain { lo, hi, periodic })
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.lo && u <= self.hi
    }

    /// `n + 1` equally spaced points including both endpoints.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        let n = n.max(1);
        (0..=n).map(|k| self.lo + self.len() * k as f64 / n as f64).collect()
    }
}

/// Translation expressions that freeze to a point of the ambient space.
pub trait TranslationExpr: Clone + fmt::Debug + Send + Sync {
    type Point: Point;
    fn eval_at(&self, u: f64) -> Result<Self::Point>;
}

impl TranslationExpr for Expr {
    type Point = f64;
    fn eval_at(&self, u: f64) -> Result<f64> {
        self.eval(u)
    }
}

impl TranslationExpr for [Expr; 2] {
    type Point = Point2;
    fn eval_at(&self, u: f64) -> Result<Point2> {
        Ok([self[0].eval(u)?, self[1].eval(u)?])
    }
}

/// A family `Ψ_u = {λ_j x + t_j(u)}` with constant ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamIfs<T> {
    lambdas: Vec<f64>,
    translations: Vec<T>,
    weights: Vec<f64>,
    domain: Domain,
}

/// A one-dimensional family.
pub type ParamIfs1 = ParamIfs<Expr>;

impl<T: TranslationExpr> ParamIfs<T> {
    pub fn new(lambdas: Vec<f64>, translations: Vec<T>, weights: Vec<f64>, domain: Domain) -> Result<Self> {
        if lambdas.is_empty() {
            return invalid("a family needs at least one map");
        }
        if lambdas.len() != translations.len() || lambdas.len() != weights.len() {
            return invalid(format!(
                "{} ratios, {} translations and {} weights",
                lambdas.len(),
                translations.len(),
                weights.len()
            ));
        }
        if let Some(l) = lambdas.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
            return invalid(format!("ratio {l} outside (0,1)"));
        }
        validate_probability(&weights)?;
        Ok(ParamIfs { lambdas, translations, weights, domain })
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn translations(&self) -> &[T] {
        &self.translations
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// The concrete system `Ψ_u`.
    pub fn freeze(&self, u: f64) -> Result<Ifs<T::Point>> {
        let t = self.translations.iter().map(|e| e.eval_at(u)).collect::<Result<Vec<_>>>()?;
        Ifs::from_parts(&self.lambdas, &t, self.weights.clone())
    }
}

impl ParamIfs1 {
    /// Jets of every translation at `u`.
    pub fn translation_jets(&self, u: f64, order: usize) -> Result<Vec<Jet>> {
        self.translations.iter().map(|e| e.eval_jet(u, order)).collect()
    }
}

fn check_words(m: usize, i: &Word, j: &Word) -> Result<()> {
    if i.len() != j.len() {
        return invalid(format!("word lengths differ: {} vs {}", i.len(), j.len()));
    }
    if let Some(s) = i.symbols().iter().chain(j.symbols()).find(|&&s| s >= m) {
        return invalid(format!("symbol {s} out of range for {m} maps"));
    }
    Ok(())
}

/// Assembles the jet of `Δ_{i,j}` from precomputed translation jets.
pub fn delta_jet_from(jets: &[Jet], lambdas: &[f64], i: &Word, j: &Word) -> Result<Jet> {
    check_words(lambdas.len(), i, j)?;
    let mut out = Jet::zero(jets[0].order());
    let (mut si, mut sj) = (1.0, 1.0);
    for (&a, &b) in i.symbols().iter().zip(j.symbols()) {
        if a != b || si != sj {
            out.axpy(si, &jets[a]);
            out.axpy(-sj, &jets[b]);
        }
        si *= lambdas[a];
        sj *= lambdas[b];
    }
    Ok(out)
}

/// Jet of `Δ_{i,j}(u) = ψ_{u,i}(0) − ψ_{u,j}(0)`.
pub fn family_delta_jet(fam: &ParamIfs1, i: &Word, j: &Word, u: f64, order: usize) -> Result<Jet> {
    check_words(fam.len(), i, j)?;
    let jets = fam.translation_jets(u, order)?;
    delta_jet_from(&jets, &fam.lambdas, i, j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> Expr {
        parse_expr(s).unwrap()
    }

    #[test]
    fn parse_examples() {
        assert_eq!(p("cos(u)"), Expr::Call(Func::Cos, Box::new(Expr::Param)));
        assert_eq!(
            p("0.5*u + sin(2*u)"),
            Expr::Add(
                Box::new(Expr::Mul(Box::new(Expr::Num(0.5)), Box::new(Expr::Param))),
                Box::new(Expr::Call(
                    Func::Sin,
                    Box::new(Expr::Mul(Box::new(Expr::Num(2.0)), Box::new(Expr::Param)))
                ))
            )
        );
        assert_eq!(p("pi"), Expr::Num(PI));
        assert_eq!(p("1.5e-3"), Expr::Num(1.5e-3));
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let e = parse_expr("cos(").unwrap_err();
        assert_eq!(e.offset, 4);
        let e = parse_expr("u + foo(u)").unwrap_err();
        assert_eq!(e.offset, 4);
        assert!(matches!(e.kind, ParseErrorKind::UnknownIdentifier(_)));
        assert_eq!(parse_expr("(u + 1").unwrap_err().kind, ParseErrorKind::Unbalanced);
        assert_eq!(parse_expr("u + 1)").unwrap_err().offset, 5);
        assert_eq!(parse_expr("u $ 1").unwrap_err().offset, 2);
        assert_eq!(parse_expr("u ^ u").unwrap_err().kind, ParseErrorKind::ExpectedLiteral);
    }

    #[test]
    fn precedence() {
        // unary minus binds tighter than the power
        assert_eq!(p("-u^2").eval(3.0).unwrap(), 9.0);
        assert_eq!(p("2*u^2").eval(3.0).unwrap(), 18.0);
        assert_eq!(p("1 - 2 - 3").eval(0.0).unwrap(), -4.0);
        assert_eq!(p("8 / 4 / 2").eval(0.0).unwrap(), 1.0);
        assert_eq!(p("pow(u, -1)").eval(4.0).unwrap(), 0.25);
    }

    #[test]
    fn printer_round_trips() {
        for s in ["cos(u)", "0.5*u + sin(2*u)", "-u^2", "pow(exp(u), 0.5) / (1 + u*u)", "log(2 - cos(u))"] {
            let e = p(s);
            assert_eq!(p(&e.to_string()), e, "{s}");
        }
    }

    #[test]
    fn jet_examples() {
        assert_eq!(p("sin(u)").eval_jet(0.0, 2).unwrap().derivatives(), &[0.0, 1.0, 0.0]);
        assert_eq!(p("u*u").eval_jet(3.0, 2).unwrap().derivatives(), &[9.0, 6.0, 2.0]);
        let j = p("exp(2*u)").eval_jet(0.0, 4).unwrap();
        assert_eq!(j.derivatives(), &[1.0, 2.0, 4.0, 8.0, 16.0]);
        let j = p("log(u)").eval_jet(1.0, 3).unwrap();
        for (a, b) in j.derivatives().iter().zip([0.0, 1.0, -1.0, 2.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn domain_errors() {
        let e = p("1 + log(u - 1)").eval_jet(0.5, 2).unwrap_err();
        match e {
            Error::Domain { location, .. } => assert_eq!(location, "log((u - 1))"),
            other => panic!("{other:?}"),
        }
        assert!(p("1 / (u - 2)").eval(2.0).is_err());
        assert!(p("pow(u, 0.5)").eval_jet(-1.0, 1).is_err());
    }

    #[test]
    fn projection_family_derivative_is_rotation() {
        let lam = vec![1.0 / 3.0; 3];
        let tx = [0.0, 1.0, 2.0];
        let ty = [0.0, 2.0, 1.0];
        let t: Vec<Expr> =
            (0..3).map(|k| p(&format!("{} * cos(u) + {} * sin(u)", tx[k], ty[k]))).collect();
        let fam = ParamIfs::new(lam, t, vec![1.0 / 3.0; 3], Domain::new(0.0, PI, false).unwrap()).unwrap();
        let (i, j) = (Word::new(vec![1, 0]), Word::new(vec![2, 2]));
        for u in [0.1, 0.7, 1.3] {
            let d = family_delta_jet(&fam, &i, &j, u, 1).unwrap();
            let rotated = fam.freeze(u + PI / 2.0).unwrap().pairwise_delta(&i, &j).unwrap();
            assert!((d.derivative(1) - rotated).abs() < 1e-12);
            let plain = fam.freeze(u).unwrap().pairwise_delta(&i, &j).unwrap();
            assert!((d.value() - plain).abs() < 1e-14);
        }
        let z = family_delta_jet(&fam, &i, &i, 0.3, 2).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-3.0f64..3.0).prop_map(|v| Expr::Num((v * 100.0).round() / 100.0)),
            Just(Expr::Param),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
                inner.clone().prop_map(|a| Expr::Call(Func::Sin, Box::new(a))),
                inner.clone().prop_map(|a| Expr::Call(Func::Cos, Box::new(a))),
                inner.clone().prop_map(|a| Expr::Call(Func::Exp, Box::new(Expr::Call(Func::Sin, Box::new(a))))),
                inner.clone().prop_map(|a| Expr::Call(
                    Func::Log,
                    Box::new(Expr::Add(Box::new(Expr::Num(2.0)), Box::new(Expr::Call(Func::Cos, Box::new(a)))))
                )),
                inner.clone().prop_map(|a| Expr::Div(
                    Box::new(a.clone()),
                    Box::new(Expr::Add(Box::new(Expr::Num(1.5)), Box::new(Expr::Call(Func::Sin, Box::new(a)))))
                )),
                inner.clone().prop_map(|a| Expr::Pow(Box::new(a), 3.0)),
                inner.prop_map(|a| Expr::Pow(
                    Box::new(Expr::Add(Box::new(Expr::Num(2.0)), Box::new(Expr::Call(Func::Sin, Box::new(a))))),
                    0.5
                )),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_idempotent(e in arb_expr()) {
            let once = parse_expr(&e.to_string()).unwrap();
            let twice = parse_expr(&once.to_string()).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn order_zero_is_plain_eval(e in arb_expr(), u in -2.0f64..2.0) {
            if let Ok(v) = e.eval(u) {
                let j = e.eval_jet(u, 0).unwrap();
                prop_assert!((j.value() - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }

        #[test]
        fn jets_match_finite_differences(e in arb_expr(), u in -1.5f64..1.5) {
            let Ok(j) = e.eval_jet(u, 4) else { return Ok(()) };
            // derivative k against a central difference of derivative k−1
            let h = 1e-5;
            for k in 1..=3 {
                let (Ok(a), Ok(b)) = (e.eval_jet(u + h, k - 1), e.eval_jet(u - h, k - 1)) else {
                    return Ok(());
                };
                let fd = (a.derivative(k - 1) - b.derivative(k - 1)) / (2.0 * h);
                let scale = j.derivative(k).abs().max(1.0);
                // truncation error is h²/6 · d^{k+2}
                let slack = j.derivative((k + 1).min(4)).abs().max(1.0) * 1e-9 + 1e-5 * scale;
                prop_assert!(
                    (fd - j.derivative(k)).abs() <= slack.max(1e-5 * scale) ,
                    "k={} fd={} jet={}", k, fd, j.derivative(k)
                );
            }
        }

        #[test]
        fn jets_are_linear(a in arb_expr(), b in arb_expr(), s in -2.0f64..2.0, u in -1.0f64..1.0) {
            let combo = Expr::Add(Box::new(Expr::Mul(Box::new(Expr::Num(s)), Box::new(a.clone()))), Box::new(b.clone()));
            if let (Ok(ja), Ok(jb), Ok(jc)) = (a.eval_jet(u, 3), b.eval_jet(u, 3), combo.eval_jet(u, 3)) {
                let mut lin = jb.clone();
                lin.axpy(s, &ja);
                for k in 0..=3 {
                    let tol = 1e-10 * (1.0 + jc.derivative(k).abs());
                    prop_assert!((lin.derivative(k) - jc.derivative(k)).abs() <= tol);
                }
            }
        }
    }
}
