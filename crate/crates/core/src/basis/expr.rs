//! Product-form scalar expressions over the state, e.g. `2*x1*x2` or `x2*cos(2*x1)`.

use std::fmt;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Factor {
    /// `x_var ^ exp`, `var` zero-based.
    Pow { var: usize, exp: u32 },
    /// `cos(freq * x_var)`
    Cos { var: usize, freq: f64 },
    /// `sin(freq * x_var)`
    Sin { var: usize, freq: f64 },
}

impl Factor {
    fn var(&self) -> usize {
        match *self {
            Factor::Pow { var, .. } | Factor::Cos { var, .. } | Factor::Sin { var, .. } => var,
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Factor::Pow { var, exp } => x[var].powi(exp as i32),
            Factor::Cos { var, freq } => (freq * x[var]).cos(),
            Factor::Sin { var, freq } => (freq * x[var]).sin(),
        }
    }

    fn derivative(&self, x: &[f64]) -> f64 {
        match *self {
            Factor::Pow { exp: 0, .. } => 0.0,
            Factor::Pow { var, exp } => exp as f64 * x[var].powi(exp as i32 - 1),
            Factor::Cos { var, freq } => -freq * (freq * x[var]).sin(),
            Factor::Sin { var, freq } => freq * (freq * x[var]).cos(),
        }
    }
}

/// A coefficient times a product of factors. An empty product is a constant.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub factors: Vec<Factor>,
}

impl Term {
    pub fn constant(c: f64) -> Self {
        Term {
            coeff: c,
            factors: Vec::new(),
        }
    }

    /// `coeff * x_i^a * x_j^b ...` from (var, exponent) pairs.
    pub fn monomial(coeff: f64, powers: &[(usize, u32)]) -> Self {
        Term {
            coeff,
            factors: powers
                .iter()
                .map(|&(var, exp)| Factor::Pow { var, exp })
                .collect(),
        }
    }

    pub fn with_factor(mut self, f: Factor) -> Self {
        self.factors.push(f);
        self
    }

    pub fn max_var(&self) -> Option<usize> {
        self.factors.iter().map(Factor::var).max()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.coeff == 0.0 {
            return 0.0;
        }
        self.factors
            .iter()
            .fold(self.coeff, |acc, f| acc * f.value(x))
    }

    /// Adds `scale * d(term)/dx` into `out`.
    pub fn accumulate_gradient(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        if self.coeff == 0.0 {
            return;
        }
        let values: Vec<f64> = self.factors.iter().map(|f| f.value(x)).collect();
        for (j, f) in self.factors.iter().enumerate() {
            let d = f.derivative(x);
            if d == 0.0 {
                continue;
            }
            let rest: f64 = values
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, v)| v)
                .product();
            out[f.var()] += scale * self.coeff * d * rest;
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        self.accumulate_gradient(x.as_slice(), 1.0, g.as_mut_slice());
        g
    }

    fn exponents(&self, n: usize) -> Option<Vec<u32>> {
        let mut e = vec![0u32; n];
        for f in &self.factors {
            match *f {
                Factor::Pow { var, exp } if var < n => e[var] += exp,
                _ => return None,
            }
        }
        Some(e)
    }

    /// `Some((i, j, c))` when the term is the pure quadratic monomial `c * x_i * x_j`, `i <= j`.
    pub fn as_quadratic(&self, n: usize) -> Option<(usize, usize, f64)> {
        let e = self.exponents(n)?;
        if e.iter().sum::<u32>() != 2 {
            return None;
        }
        let vars: Vec<usize> = e
            .iter()
            .enumerate()
            .flat_map(|(i, &k)| std::iter::repeat_n(i, k as usize))
            .collect();
        Some((vars[0], vars[1], self.coeff))
    }

    /// `Some((i, c))` when the term is `c * x_i`.
    pub fn as_linear(&self, n: usize) -> Option<(usize, f64)> {
        let e = self.exponents(n)?;
        if e.iter().sum::<u32>() != 1 {
            return None;
        }
        let i = e.iter().position(|&k| k == 1)?;
        Some((i, self.coeff))
    }

    pub fn parse(src: &str, state_dim: usize) -> Result<Term> {
        Parser::new(src, state_dim).term()
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Factor::Pow { var, exp: 1 } => write!(f, "x{}", var + 1),
            Factor::Pow { var, exp } => write!(f, "x{}^{}", var + 1, exp),
            Factor::Cos { var, freq: 1.0 } => write!(f, "cos(x{})", var + 1),
            Factor::Cos { var, freq } => write!(f, "cos({}*x{})", freq, var + 1),
            Factor::Sin { var, freq: 1.0 } => write!(f, "sin(x{})", var + 1),
            Factor::Sin { var, freq } => write!(f, "sin({}*x{})", freq, var + 1),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factors.is_empty() || self.coeff == 0.0 {
            return write!(f, "{}", self.coeff);
        }
        let mut first = true;
        if self.coeff == -1.0 {
            write!(f, "-")?;
        } else if self.coeff != 1.0 {
            write!(f, "{}", self.coeff)?;
            first = false;
        }
        for fac in &self.factors {
            if !first {
                write!(f, "*")?;
            }
            write!(f, "{fac}")?;
            first = false;
        }
        Ok(())
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    n: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, n: usize) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            n,
        }
    }

    fn err<T>(&self, at: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::BasisParse {
            column: at + 1,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        match self.peek() {
            Some(b) if b == c => {
                self.pos += 1;
                Ok(())
            }
            Some(b) => self.err(self.pos, format!("expected `{}`, found `{}`", c as char, b as char)),
            None => self.err(self.pos, format!("expected `{}`, found end of input", c as char)),
        }
    }

    fn term(&mut self) -> Result<Term> {
        let mut term = Term::constant(1.0);
        if self.peek() == Some(b'-') {
            self.pos += 1;
            term.coeff = -1.0;
        }
        if self.peek().is_none() {
            return self.err(self.pos, "empty term");
        }
        loop {
            self.factor(&mut term)?;
            match self.peek() {
                Some(b'*') => self.pos += 1,
                None => break,
                Some(c) => return self.err(self.pos, format!("unexpected `{}`", c as char)),
            }
        }
        Ok(term)
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            let exp_sign = (c == b'-' || c == b'+')
                && self.pos > start
                && matches!(self.bytes[self.pos - 1], b'e' | b'E');
            if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = &self.src[start..self.pos];
        text.parse::<f64>()
            .or_else(|_| self.err(start, format!("invalid number `{text}`")))
    }

    fn ident(&mut self) -> (usize, &'a str) {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        (start, &self.src[start..self.pos])
    }

    fn variable(&mut self) -> Result<usize> {
        let (start, name) = self.ident();
        self.resolve_var(start, name)
    }

    fn resolve_var(&self, start: usize, name: &str) -> Result<usize> {
        if let Some(idx) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            if idx >= 1 && idx <= self.n {
                return Ok(idx - 1);
            }
            return self.err(
                start,
                format!("undefined symbol `{name}` (state dimension is {})", self.n),
            );
        }
        if name.is_empty() {
            return self.err(start, "expected a variable");
        }
        self.err(start, format!("undefined symbol `{name}`"))
    }

    fn factor(&mut self, term: &mut Term) -> Result<()> {
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                term.coeff *= self.number()?;
                Ok(())
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let (start, name) = self.ident();
                match name {
                    "cos" | "sin" => {
                        self.expect(b'(')?;
                        let (freq, var) = self.trig_argument()?;
                        self.expect(b')')?;
                        term.factors.push(if name == "cos" {
                            Factor::Cos { var, freq }
                        } else {
                            Factor::Sin { var, freq }
                        });
                        Ok(())
                    }
                    _ => {
                        let var = self.resolve_var(start, name)?;
                        let mut exp = 1;
                        if self.peek() == Some(b'^') {
                            self.pos += 1;
                            let at = self.pos;
                            let e = self.number()?;
                            if e < 0.0 || e.fract() != 0.0 || e > 64.0 {
                                return self.err(at, "exponent must be a non-negative integer");
                            }
                            exp = e as u32;
                        }
                        term.factors.push(Factor::Pow { var, exp });
                        Ok(())
                    }
                }
            }
            Some(c) => self.err(self.pos, format!("unexpected `{}`", c as char)),
            None => self.err(self.pos, "unexpected end of term"),
        }
    }

    /// `a*xi`, `xi*a`, `xi`, or `-a*xi`.
    fn trig_argument(&mut self) -> Result<(f64, usize)> {
        let mut sign = 1.0;
        if self.peek() == Some(b'-') {
            self.pos += 1;
            sign = -1.0;
        }
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let a = self.number()?;
                self.expect(b'*')?;
                let var = self.variable()?;
                Ok((sign * a, var))
            }
            _ => {
                let var = self.variable()?;
                if self.peek() == Some(b'*') {
                    self.pos += 1;
                    let a = self.number()?;
                    Ok((sign * a, var))
                } else {
                    Ok((sign, var))
                }
            }
        }
    }
}

/// Splits a comma-separated list, returning each item with its byte offset.
pub(crate) fn split_items(src: &str, sep: char) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in src.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push((start, &src[start..i]));
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    out.push((start, &src[start..]));
    out
}

pub fn parse_terms(src: &str, state_dim: usize) -> Result<Vec<Term>> {
    split_items(src, ',')
        .into_iter()
        .map(|(off, item)| {
            Term::parse(item, state_dim).map_err(|e| match e {
                Error::BasisParse { column, message } => Error::BasisParse {
                    column: column + off,
                    message,
                },
                other => other,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn parses_products_and_trig_atoms() {
        let t = Term::parse("x2*cos(2*x1)", 2).unwrap();
        assert_eq!(
            t.factors,
            vec![Factor::Pow { var: 1, exp: 1 }, Factor::Cos { var: 0, freq: 2.0 }]
        );
        let q = Term::parse("2*x1*x2", 2).unwrap();
        assert_eq!(q.as_quadratic(2), Some((0, 1, 2.0)));
        let s = Term::parse("x1^2", 2).unwrap();
        assert_eq!(s.as_quadratic(2), Some((0, 0, 1.0)));
        assert_eq!(Term::parse("-x2", 2).unwrap().as_linear(2), Some((1, -1.0)));
        assert_eq!(Term::parse("0", 2).unwrap().eval(&[1.0, 2.0]), 0.0);
    }

    #[test]
    fn undefined_symbols_are_named() {
        let err = parse_terms("x1^2, x3*x1", 2).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`x3`"), "{msg}");
        let err = parse_terms("tan(x1)", 2).unwrap_err();
        assert!(err.to_string().contains("`tan`"));
    }

    #[test]
    fn display_round_trips() {
        for src in ["x1^2", "2*x1*x2", "x2*cos(2*x1)", "sin(x3)", "-x1", "1", "0.5*x1^3"] {
            let t = Term::parse(src, 3).unwrap();
            let again = Term::parse(&t.to_string(), 3).unwrap();
            assert_eq!(t, again, "{src}");
        }
    }

    #[test]
    fn gradient_matches_hand_derivative() {
        // d/dx of x2*cos(2 x1) = (-2 x2 sin(2 x1), cos(2 x1))
        let t = Term::parse("x2*cos(2*x1)", 2).unwrap();
        let p = x(&[0.3, -1.2]);
        let g = t.gradient(&p);
        assert!((g[0] - (-2.0 * -1.2 * (0.6f64).sin())).abs() < 1e-15);
        assert!((g[1] - (0.6f64).cos()).abs() < 1e-15);
    }
}
