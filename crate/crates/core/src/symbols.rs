//! Polynomial symbols `Σ c · k^{-l} · z̄^γ z^δ`, their parser and printer,
//! circle averaging, principal-symbol evaluation and the Poisson bracket.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::WeightVector;

/// Exponent data of one monomial `k^{-l} z̄^γ z^δ`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TermKey {
    pub gamma: Vec<u32>,
    pub delta: Vec<u32>,
    pub l: u32,
}

impl TermKey {
    pub fn degree(&self) -> u32 {
        self.gamma.iter().chain(&self.delta).sum()
    }

    /// `<p, δ − γ>`, the circle weight of the monomial.
    pub fn weight(&self, p: &WeightVector) -> i64 {
        let diff: Vec<i64> = self.delta.iter().zip(&self.gamma).map(|(&d, &g)| d as i64 - g as i64).collect();
        p.pair_i64(&diff)
    }

    pub fn is_diagonal(&self) -> bool {
        self.gamma == self.delta
    }
}

/// Finite polynomial symbol on `C^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySymbol {
    n: usize,
    terms: BTreeMap<TermKey, Complex64>,
}

impl PolySymbol {
    pub fn zero(n: usize) -> Self {
        Self { n, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, c: Complex64) -> Self {
        let mut s = Self::zero(n);
        s.add_term(TermKey { gamma: vec![0; n], delta: vec![0; n], l: 0 }, c);
        s
    }

    pub fn one(n: usize) -> Self {
        Self::constant(n, Complex64::new(1.0, 0.0))
    }

    /// Single monomial `c · k^{-l} z̄^γ z^δ`.
    pub fn monomial(gamma: Vec<u32>, delta: Vec<u32>, l: u32, c: Complex64) -> Self {
        assert_eq!(gamma.len(), delta.len());
        let mut s = Self::zero(gamma.len());
        s.add_term(TermKey { gamma, delta, l }, c);
        s
    }

    /// The action variable `s_i = |z_i|²` (0-based index).
    pub fn action(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        Self::monomial(e.clone(), e, 0, Complex64::new(1.0, 0.0))
    }

    pub fn z(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        Self::monomial(vec![0; n], e, 0, Complex64::new(1.0, 0.0))
    }

    pub fn zb(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        Self::monomial(e, vec![0; n], 0, Complex64::new(1.0, 0.0))
    }

    pub fn kinv(n: usize) -> Self {
        Self::monomial(vec![0; n], vec![0; n], 1, Complex64::new(1.0, 0.0))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&TermKey, &Complex64)> {
        self.terms.iter()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(TermKey::degree).max().unwrap_or(0)
    }

    pub fn max_l(&self) -> u32 {
        self.terms.keys().map(|t| t.l).max().unwrap_or(0)
    }

    pub fn add_term(&mut self, key: TermKey, c: Complex64) {
        assert_eq!(key.gamma.len(), self.n);
        let entry = self.terms.entry(key).or_insert(Complex64::new(0.0, 0.0));
        *entry += c;
        // Drop exact cancellations so no zero coefficient is ever stored.
        self.terms.retain(|_, v| *v != Complex64::new(0.0, 0.0));
    }

    fn check_n(&self, other: &Self) {
        assert_eq!(self.n, other.n, "symbols live on different dimensions");
    }

    pub fn add(&self, other: &Self) -> Self {
        self.check_n(other);
        let mut out = self.clone();
        for (k, c) in &other.terms {
            *out.terms.entry(k.clone()).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        out.terms.retain(|_, v| *v != Complex64::new(0.0, 0.0));
        out
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = Self::zero(self.n);
        if c == Complex64::new(0.0, 0.0) {
            return out;
        }
        out.terms = self.terms.iter().map(|(k, v)| (k.clone(), v * c)).collect();
        out.terms.retain(|_, v| *v != Complex64::new(0.0, 0.0));
        out
    }

    pub fn neg(&self) -> Self {
        self.scale(Complex64::new(-1.0, 0.0))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.check_n(other);
        let mut acc: BTreeMap<TermKey, Complex64> = BTreeMap::new();
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                let key = TermKey {
                    gamma: a.gamma.iter().zip(&b.gamma).map(|(x, y)| x + y).collect(),
                    delta: a.delta.iter().zip(&b.delta).map(|(x, y)| x + y).collect(),
                    l: a.l + b.l,
                };
                *acc.entry(key).or_insert(Complex64::new(0.0, 0.0)) += ca * cb;
            }
        }
        acc.retain(|_, v| *v != Complex64::new(0.0, 0.0));
        Self { n: self.n, terms: acc }
    }

    pub fn pow(&self, e: u32) -> Self {
        let mut out = Self::one(self.n);
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    /// `∂/∂z_i` (0-based).
    pub fn d_z(&self, i: usize) -> Self {
        let mut out = Self::zero(self.n);
        for (k, c) in &self.terms {
            if k.delta[i] > 0 {
                let mut key = k.clone();
                key.delta[i] -= 1;
                out.add_term(key, c * k.delta[i] as f64);
            }
        }
        out
    }

    /// `∂/∂z̄_i` (0-based).
    pub fn d_zb(&self, i: usize) -> Self {
        let mut out = Self::zero(self.n);
        for (k, c) in &self.terms {
            if k.gamma[i] > 0 {
                let mut key = k.clone();
                key.gamma[i] -= 1;
                out.add_term(key, c * k.gamma[i] as f64);
            }
        }
        out
    }

    /// Complex conjugate symbol: swaps `γ ↔ δ` and conjugates coefficients.
    /// Its Toeplitz matrix is the adjoint of the original one.
    pub fn adjoint(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(k, c)| (TermKey { gamma: k.delta.clone(), delta: k.gamma.clone(), l: k.l }, c.conj()))
            .collect();
        Self { n: self.n, terms }
    }

    /// Real-valued symbol, up to a relative rounding tolerance.
    pub fn is_hermitian(&self) -> bool {
        let scale = self.terms.values().map(|c| c.norm()).fold(0.0, f64::max);
        let adj = self.adjoint();
        self.terms.iter().all(|(k, c)| match adj.terms.get(k) {
            Some(d) => (c - d).norm() <= 1e-14 * scale.max(1.0),
            None => false,
        }) && adj.terms.len() == self.terms.len()
    }

    /// Keeps only the monomials with `<p, δ − γ> = 0`.
    pub fn average_circle(&self, weights: &WeightVector) -> Self {
        let terms = self.terms.iter().filter(|(k, _)| k.weight(weights) == 0).map(|(k, c)| (k.clone(), *c)).collect();
        Self { n: self.n, terms }
    }

    pub fn is_invariant(&self, weights: &WeightVector) -> bool {
        self.terms.keys().all(|k| k.weight(weights) == 0)
    }

    /// Part of order `k^{-l}`, returned with `l = 0`.
    pub fn order(&self, l: u32) -> Self {
        let terms = self
            .terms
            .iter()
            .filter(|(k, _)| k.l == l)
            .map(|(k, c)| (TermKey { gamma: k.gamma.clone(), delta: k.delta.clone(), l: 0 }, *c))
            .collect();
        Self { n: self.n, terms }
    }

    /// Principal part with only the angle-free (`γ = δ`) monomials, as
    /// coefficients on `s^γ`.
    pub fn diagonal_principal(&self) -> Vec<(Vec<u32>, Complex64)> {
        self.terms.iter().filter(|(k, _)| k.l == 0 && k.is_diagonal()).map(|(k, c)| (k.gamma.clone(), *c)).collect()
    }

    /// Evaluates the full symbol at `z` for a given `k`.
    pub fn eval(&self, z: &[Complex64], k: f64) -> Complex64 {
        assert_eq!(z.len(), self.n);
        self.terms
            .iter()
            .map(|(key, c)| {
                let mut v = *c * k.powi(-(key.l as i32));
                for ((zi, &g), &d) in z.iter().zip(&key.gamma).zip(&key.delta) {
                    v *= zi.conj().powu(g) * zi.powu(d);
                }
                v
            })
            .sum()
    }

    /// Principal symbol at a reduced point: `l = 0` terms evaluated at
    /// `z_i = √s_i e^{iθ_i}` with the lift `θ = (φ, 0)`.
    pub fn eval_principal(&self, point: &ReducedPoint) -> Complex64 {
        assert_eq!(point.s.len(), self.n);
        let mut theta = point.phi.clone();
        theta.push(0.0);
        self.terms
            .iter()
            .filter(|(k, _)| k.l == 0)
            .map(|(key, c)| {
                let mut modulus = 1.0;
                let mut angle = 0.0;
                for (((&g, &d), &s), &th) in key.gamma.iter().zip(&key.delta).zip(&point.s).zip(&theta) {
                    if g + d > 0 {
                        modulus *= s.powf((g + d) as f64 / 2.0);
                    }
                    angle += (d as f64 - g as f64) * th;
                }
                *c * Complex64::from_polar(modulus, angle)
            })
            .sum()
    }

    /// `{f, g} = i Σ_j (∂_{z_j} f ∂_{z̄_j} g − ∂_{z̄_j} f ∂_{z_j} g)`.
    ///
    /// With this sign `{s, z} = −i z`, which makes `k [T_f, T_g]` have
    /// principal symbol `i {f, g}`.
    pub fn poisson_bracket(&self, other: &Self) -> Self {
        self.check_n(other);
        let mut out = Self::zero(self.n);
        for j in 0..self.n {
            let a = self.d_z(j).mul(&other.d_zb(j));
            let b = self.d_zb(j).mul(&other.d_z(j));
            out = out.add(&a.sub(&b));
        }
        out.scale(Complex64::new(0.0, 1.0))
    }

    /// Largest coefficient difference, for approximate comparisons.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.sub(other).terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Parses the symbol grammar with variables indexed `1..=n`.
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        Parser::new(text, SymbolCtx { n }).parse()
    }

    /// Printer whose output [`PolySymbol::parse`] maps back to `self`.
    pub fn render(&self) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        let mut out = String::new();
        for (idx, (key, c)) in self.terms.iter().enumerate() {
            let mut factors = Vec::new();
            if key.l > 0 {
                factors.push(power("kinv", key.l));
            }
            for i in 0..self.n {
                let pair = key.gamma[i].min(key.delta[i]);
                if pair > 0 {
                    factors.push(power(&format!("s({})", i + 1), pair));
                }
                if key.gamma[i] > pair {
                    factors.push(power(&format!("zb({})", i + 1), key.gamma[i] - pair));
                }
                if key.delta[i] > pair {
                    factors.push(power(&format!("z({})", i + 1), key.delta[i] - pair));
                }
            }
            let (negative, coeff) = render_coefficient(*c);
            if idx == 0 {
                if negative {
                    out.push('-');
                }
            } else {
                out.push_str(if negative { " - " } else { " + " });
            }
            match (coeff.as_str(), factors.is_empty()) {
                ("1", false) => out.push_str(&factors.join("*")),
                (_, true) => out.push_str(&coeff),
                _ => {
                    let _ = write!(out, "{}*{}", coeff, factors.join("*"));
                }
            }
        }
        out
    }
}

fn power(base: &str, e: u32) -> String {
    if e == 1 {
        base.to_string()
    } else {
        format!("{base}^{e}")
    }
}

/// Returns (sign, magnitude text). Real coefficients print bare, complex
/// ones as a parenthesised `(a+bi)`.
fn render_coefficient(c: Complex64) -> (bool, String) {
    if c.im == 0.0 {
        return (c.re < 0.0, format!("{}", c.re.abs()));
    }
    if c.re == 0.0 {
        let im = c.im.abs();
        let text = if im == 1.0 { "i".to_string() } else { format!("{im}i") };
        return (c.im < 0.0, text);
    }
    let sign = if c.im < 0.0 { '-' } else { '+' };
    (false, format!("({}{}{}i)", c.re, sign, c.im.abs()))
}

/// Real polynomial `Σ a_j x^j` used as a spectral test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealPoly {
    coeffs: Vec<f64>,
}

impl RealPoly {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Self { coeffs }
    }

    pub fn one() -> Self {
        Self::new(vec![1.0])
    }

    pub fn identity() -> Self {
        Self::new(vec![0.0, 1.0])
    }

    pub fn monomial(j: usize) -> Self {
        let mut c = vec![0.0; j + 1];
        c[j] = 1.0;
        Self::new(c)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &a| acc * x + a)
    }

    /// `f(g)` as a symbol.
    pub fn compose(&self, g: &PolySymbol) -> PolySymbol {
        let mut out = PolySymbol::zero(g.n());
        for &a in self.coeffs.iter().rev() {
            out = out.mul(g).add(&PolySymbol::constant(g.n(), Complex64::new(a, 0.0)));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        Parser::new(text, PolyCtx).parse()
    }

    pub fn render(&self) -> String {
        let mut parts = Vec::new();
        for (j, &a) in self.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let mag = a.abs();
            let body = match j {
                0 => format!("{mag}"),
                _ => {
                    let x = power("x", j as u32);
                    if mag == 1.0 {
                        x
                    } else {
                        format!("{mag}*{x}")
                    }
                }
            };
            parts.push((a < 0.0, body));
        }
        if parts.is_empty() {
            return "0".into();
        }
        let mut out = String::new();
        for (idx, (neg, body)) in parts.into_iter().enumerate() {
            if idx == 0 {
                if neg {
                    out.push('-');
                }
            } else {
                out.push_str(if neg { " - " } else { " + " });
            }
            out.push_str(&body);
        }
        out
    }

    fn add(&self, other: &Self) -> Self {
        let len = self.coeffs.len().max(other.coeffs.len());
        let c = (0..len)
            .map(|j| self.coeffs.get(j).copied().unwrap_or(0.0) + other.coeffs.get(j).copied().unwrap_or(0.0))
            .collect();
        Self::new(c)
    }

    fn mul(&self, other: &Self) -> Self {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return Self::new(vec![]);
        }
        let mut c = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Self::new(c)
    }
}

/// Point of the reduced space in action-angle form: actions on the weighted
/// simplex `Σ p_i s_i = 1` and `n − 1` residual angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedPoint {
    pub s: Vec<f64>,
    pub phi: Vec<f64>,
}

impl ReducedPoint {
    pub fn new(s: Vec<f64>, phi: Vec<f64>, weights: &WeightVector) -> Result<Self> {
        if s.len() != weights.n() {
            return Err(Error::DimensionMismatch { expected: weights.n(), found: s.len() });
        }
        if phi.len() + 1 != weights.n() {
            return Err(Error::DimensionMismatch { expected: weights.n() - 1, found: phi.len() });
        }
        if s.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument("actions must be finite and non-negative".into()));
        }
        let level: f64 = s.iter().zip(weights.as_slice()).map(|(si, &p)| si * p as f64).sum();
        if (level - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("point is off the level set: <p, s> = {level}")));
        }
        let phi = phi.into_iter().map(|a| a.rem_euclid(2.0 * PI)).collect();
        Ok(Self { s, phi })
    }

    /// Point with all residual angles zero.
    pub fn from_actions(s: Vec<f64>, weights: &WeightVector) -> Result<Self> {
        let n = weights.n();
        Self::new(s, vec![0.0; n.saturating_sub(1)], weights)
    }

    /// The representative `z_i = √s_i e^{iθ_i}` with `θ = (φ, 0)`.
    pub fn lift(&self) -> Vec<Complex64> {
        let mut theta = self.phi.clone();
        theta.push(0.0);
        self.s.iter().zip(&theta).map(|(&s, &t)| Complex64::from_polar(s.sqrt(), t)).collect()
    }
}

// ---------------------------------------------------------------------------
// Recursive-descent parser shared by symbols and test polynomials.

trait Algebra: Sized + Clone {
    fn constant(&self, c: Complex64, offset: usize) -> Result<Self::Value>;
    fn variable(&self, name: &str, index: Option<(usize, usize)>, offset: usize) -> Result<Self::Value>;
    type Value: Clone;
    fn add(a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn mul(a: &Self::Value, b: &Self::Value) -> Self::Value;
    fn neg(a: &Self::Value) -> Self::Value;
    fn one(&self) -> Self::Value;
}

#[derive(Clone)]
struct SymbolCtx {
    n: usize,
}

impl Algebra for SymbolCtx {
    type Value = PolySymbol;

    fn constant(&self, c: Complex64, _offset: usize) -> Result<PolySymbol> {
        Ok(PolySymbol::constant(self.n, c))
    }

    fn variable(&self, name: &str, index: Option<(usize, usize)>, offset: usize) -> Result<PolySymbol> {
        let idx = |index: Option<(usize, usize)>| -> Result<usize> {
            let (i, at) = index.ok_or_else(|| Error::Syntax { offset, message: format!("`{name}` needs an index") })?;
            if i == 0 || i > self.n {
                return Err(Error::IndexOutOfRange { offset: at, index: i, n: self.n });
            }
            Ok(i - 1)
        };
        match name {
            "z" => Ok(PolySymbol::z(self.n, idx(index)?)),
            "zb" => Ok(PolySymbol::zb(self.n, idx(index)?)),
            "s" => Ok(PolySymbol::action(self.n, idx(index)?)),
            "kinv" if index.is_none() => Ok(PolySymbol::kinv(self.n)),
            _ => Err(Error::Syntax { offset, message: format!("unknown factor `{name}`") }),
        }
    }

    fn add(a: &PolySymbol, b: &PolySymbol) -> PolySymbol {
        a.add(b)
    }

    fn mul(a: &PolySymbol, b: &PolySymbol) -> PolySymbol {
        a.mul(b)
    }

    fn neg(a: &PolySymbol) -> PolySymbol {
        a.neg()
    }

    fn one(&self) -> PolySymbol {
        PolySymbol::one(self.n)
    }
}

#[derive(Clone)]
struct PolyCtx;

impl Algebra for PolyCtx {
    type Value = RealPoly;

    fn constant(&self, c: Complex64, offset: usize) -> Result<RealPoly> {
        if c.im != 0.0 {
            return Err(Error::Syntax { offset, message: "test functions must have real coefficients".into() });
        }
        Ok(RealPoly::new(vec![c.re]))
    }

    fn variable(&self, name: &str, index: Option<(usize, usize)>, offset: usize) -> Result<RealPoly> {
        match (name, index) {
            ("x", None) => Ok(RealPoly::identity()),
            _ => Err(Error::Syntax { offset, message: format!("unknown factor `{name}`; the variable is `x`") }),
        }
    }

    fn add(a: &RealPoly, b: &RealPoly) -> RealPoly {
        a.add(b)
    }

    fn mul(a: &RealPoly, b: &RealPoly) -> RealPoly {
        a.mul(b)
    }

    fn neg(a: &RealPoly) -> RealPoly {
        RealPoly::new(a.coeffs.iter().map(|c| -c).collect())
    }

    fn one(&self) -> RealPoly {
        RealPoly::one()
    }
}

struct Parser<'a, A: Algebra> {
    src: &'a [u8],
    pos: usize,
    ctx: A,
}

impl<'a, A: Algebra> Parser<'a, A> {
    fn new(text: &'a str, ctx: A) -> Self {
        Self { src: text.as_bytes(), pos: 0, ctx }
    }

    fn parse(mut self) -> Result<A::Value> {
        self.skip_ws();
        if self.pos == self.src.len() {
            return Err(self.error("empty expression"));
        }
        let v = self.expr()?;
        self.skip_ws();
        if self.pos != self.src.len() {
            return Err(self.error(&format!("unexpected `{}`", self.src[self.pos] as char)));
        }
        Ok(v)
    }

    fn error(&self, message: &str) -> Error {
        Error::Syntax { offset: self.pos, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<A::Value> {
        let negate = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                true
            }
            Some(b'+') => {
                self.pos += 1;
                false
            }
            _ => false,
        };
        let first = self.term()?;
        let mut acc = if negate { A::neg(&first) } else { first };
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let t = self.term()?;
                    acc = A::add(&acc, &t);
                }
                Some(b'-') => {
                    self.pos += 1;
                    let t = self.term()?;
                    acc = A::add(&acc, &A::neg(&t));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<A::Value> {
        let mut acc = self.power()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            let f = self.power()?;
            acc = A::mul(&acc, &f);
        }
        Ok(acc)
    }

    fn power(&mut self) -> Result<A::Value> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let (e, _) = self.uint()?;
            let mut acc = self.ctx.one();
            for _ in 0..e {
                acc = A::mul(&acc, &base);
            }
            return Ok(acc);
        }
        Ok(base)
    }

    fn uint(&mut self) -> Result<(usize, usize)> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected a non-negative integer"));
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        let v = text.parse::<usize>().map_err(|_| Error::Syntax { offset: start, message: "integer too large".into() })?;
        Ok((v, start))
    }

    fn atom(&mut self) -> Result<A::Value> {
        let start = match self.peek() {
            Some(_) => self.pos,
            None => return Err(self.error("unexpected end of input")),
        };
        let c = self.src[start];
        if c == b'(' {
            self.pos += 1;
            let v = self.expr()?;
            self.expect(b')')?;
            return Ok(v);
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number();
        }
        if c.is_ascii_alphabetic() {
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphabetic() {
                self.pos += 1;
            }
            let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii letters").to_string();
            if name == "i" {
                return self.ctx.constant(Complex64::new(0.0, 1.0), start);
            }
            let index = if self.peek() == Some(b'(') {
                self.pos += 1;
                self.skip_ws();
                let idx = self.uint()?;
                self.expect(b')')?;
                Some(idx)
            } else {
                None
            };
            return self.ctx.variable(&name, index, start);
        }
        Err(self.error(&format!("unexpected `{}`", c as char)))
    }

    fn number(&mut self) -> Result<A::Value> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            digits(self);
        }
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-') {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(self);
            if exp_start == self.pos {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii number");
        let value: f64 = text.parse().map_err(|_| Error::Syntax { offset: start, message: format!("bad number `{text}`") })?;
        // A trailing `i` (not the start of an identifier) makes it imaginary.
        let imaginary = self.pos < self.src.len()
            && self.src[self.pos] == b'i'
            && !self.src.get(self.pos + 1).is_some_and(|c| c.is_ascii_alphabetic());
        if imaginary {
            self.pos += 1;
            return self.ctx.constant(Complex64::new(0.0, value), start);
        }
        self.ctx.constant(Complex64::new(value, 0.0), start)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn parse_examples() {
        let f = PolySymbol::parse("zb(1)*z(2)", 2).unwrap();
        assert_eq!(f, PolySymbol::monomial(vec![1, 0], vec![0, 1], 0, c(1.0)));

        let f = PolySymbol::parse("s(1)", 2).unwrap();
        assert_eq!(f, PolySymbol::monomial(vec![1, 0], vec![1, 0], 0, c(1.0)));

        let f = PolySymbol::parse("2*kinv*s(1) + s(2)", 2).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f.terms().filter(|(k, _)| k.l == 1).count(), 1);

        let f = PolySymbol::parse("(1+2i)*z(1)^2 - i", 1).unwrap();
        assert_eq!(f.len(), 2);
        let g = PolySymbol::parse("z(1)*z(1)*(2i+1) + (-1)*i", 1).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        match PolySymbol::parse("s(1) + z(3)", 2) {
            Err(Error::IndexOutOfRange { offset, index: 3, n: 2 }) => assert_eq!(offset, 9),
            other => panic!("{other:?}"),
        }
        match PolySymbol::parse("s(1) + + z(1)", 2) {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 7),
            other => panic!("{other:?}"),
        }
        assert!(matches!(PolySymbol::parse("w(1)", 2), Err(Error::Syntax { offset: 0, .. })));
        assert!(matches!(PolySymbol::parse("s(1", 2), Err(Error::Syntax { offset: 3, .. })));
        assert!(matches!(PolySymbol::parse("", 2), Err(Error::Syntax { .. })));
        assert!(matches!(PolySymbol::parse("s(0)", 2), Err(Error::IndexOutOfRange { index: 0, .. })));
    }

    #[test]
    fn real_poly_parse_and_eval() {
        let f = RealPoly::parse("x^2 - 3*x + 0.5").unwrap();
        assert_eq!(f.coeffs(), &[0.5, -3.0, 1.0]);
        assert_eq!(f.eval(2.0), -1.5);
        assert_eq!(RealPoly::parse("1").unwrap(), RealPoly::one());
        assert!(RealPoly::parse("2i").is_err());
        assert!(RealPoly::parse("s(1)").is_err());
        assert_eq!(RealPoly::parse(&f.render()).unwrap(), f);
    }

    #[test]
    fn averaging_examples() {
        let p11 = WeightVector::new(vec![1, 1]).unwrap();
        let p12 = WeightVector::new(vec![1, 2]).unwrap();
        let f = PolySymbol::parse("zb(1)*z(2)", 2).unwrap();
        assert_eq!(f.average_circle(&p11), f);
        assert!(f.average_circle(&p12).is_zero());
        assert!(PolySymbol::parse("z(1)", 2).unwrap().average_circle(&p11).is_zero());
    }

    #[test]
    fn principal_examples() {
        let p = WeightVector::new(vec![1, 2]).unwrap();
        let pt = ReducedPoint::from_actions(vec![0.3, 0.35], &p).unwrap();
        let f = PolySymbol::parse("s(1)", 2).unwrap();
        assert!((f.eval_principal(&pt) - c(0.3)).norm() < 1e-15);
        assert_eq!(PolySymbol::one(2).eval_principal(&pt), c(1.0));
        let pt = ReducedPoint::from_actions(vec![0.5, 0.25], &p).unwrap();
        let g = PolySymbol::parse("s(1)*s(2)", 2).unwrap();
        assert!((g.eval_principal(&pt) - c(0.125)).norm() < 1e-15);
        // Subleading terms are not part of the principal symbol.
        let h = PolySymbol::parse("s(1) + 7*kinv", 2).unwrap();
        assert!((h.eval_principal(&pt) - c(0.5)).norm() < 1e-15);
        assert!(ReducedPoint::from_actions(vec![0.5, 0.3], &p).is_err());
    }

    #[test]
    fn bracket_examples() {
        let s1 = PolySymbol::action(2, 0);
        let s2 = PolySymbol::action(2, 1);
        assert!(s1.poisson_bracket(&s2).is_zero());
        let z1 = PolySymbol::z(2, 0);
        let b = s1.poisson_bracket(&z1);
        assert_eq!(b, z1.scale(Complex64::new(0.0, -1.0)));
        let f = PolySymbol::parse("zb(1)^2*z(2) + zb(2)*z(1)^2", 2).unwrap();
        assert!(f.poisson_bracket(&f).is_zero());
    }

    fn rk4_flow(h: &PolySymbol, z0: &[Complex64], t: f64, steps: usize) -> Vec<Complex64> {
        // Hamiltonian flow ż_j = −i ∂h/∂z̄_j, with the Wirtinger derivative
        // taken numerically from point evaluations of h.
        let field = |z: &[Complex64]| -> Vec<Complex64> {
            let eps = 1e-6;
            (0..z.len())
                .map(|j| {
                    let mut zp = z.to_vec();
                    let mut zm = z.to_vec();
                    zp[j] += eps;
                    zm[j] -= eps;
                    let dx = (h.eval(&zp, 1.0) - h.eval(&zm, 1.0)) / (2.0 * eps);
                    let mut yp = z.to_vec();
                    let mut ym = z.to_vec();
                    yp[j] += Complex64::new(0.0, eps);
                    ym[j] -= Complex64::new(0.0, eps);
                    let dy = (h.eval(&yp, 1.0) - h.eval(&ym, 1.0)) / (2.0 * eps);
                    let d_zb = (dx + Complex64::new(0.0, 1.0) * dy) * 0.5;
                    Complex64::new(0.0, -1.0) * d_zb
                })
                .collect()
        };
        let axpy = |z: &[Complex64], k: &[Complex64], a: f64| -> Vec<Complex64> {
            z.iter().zip(k).map(|(x, y)| x + y * a).collect()
        };
        let dt = t / steps as f64;
        let mut z = z0.to_vec();
        for _ in 0..steps {
            let k1 = field(&z);
            let k2 = field(&axpy(&z, &k1, dt / 2.0));
            let k3 = field(&axpy(&z, &k2, dt / 2.0));
            let k4 = field(&axpy(&z, &k3, dt));
            for j in 0..z.len() {
                z[j] += (k1[j] + k2[j] * 2.0 + k3[j] * 2.0 + k4[j]) * (dt / 6.0);
            }
        }
        z
    }

    /// d/dt g(Φ_t z) at t = 0 by Richardson-extrapolated central differences.
    fn flow_derivative(f: &PolySymbol, g: &PolySymbol, z: &[Complex64]) -> Complex64 {
        let central = |h: f64| {
            let plus = g.eval(&rk4_flow(f, z, h, 4), 1.0);
            let minus = g.eval(&rk4_flow(f, z, -h, 4), 1.0);
            (plus - minus) / (2.0 * h)
        };
        (central(1e-3) * 4.0 - central(2e-3)) / 3.0
    }

    #[test]
    fn bracket_matches_flow_finite_differences() {
        // {f, g}(z) = d/dt g(Φ_t z) at t = 0, Φ the flow of the real symbol f.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let f = PolySymbol::action(2, 0);
        let g = PolySymbol::z(2, 0);
        let bracket = f.poisson_bracket(&g);
        for _ in 0..5 {
            let z: Vec<Complex64> =
                (0..2).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let fd = flow_derivative(&f, &g, &z);
            let exact = bracket.eval(&z, 1.0);
            assert!((fd - exact).norm() <= 1e-6 * exact.norm(), "fd {fd} vs {exact}");
        }
        // A non-diagonal real pair as well.
        let f = PolySymbol::parse("zb(1)^2*z(2) + zb(2)*z(1)^2 + s(2)^2", 2).unwrap();
        let g = PolySymbol::parse("s(1)*z(2) + zb(1)", 2).unwrap();
        let bracket = f.poisson_bracket(&g);
        for _ in 0..5 {
            let z: Vec<Complex64> =
                (0..2).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let fd = flow_derivative(&f, &g, &z);
            let exact = bracket.eval(&z, 1.0);
            assert!((fd - exact).norm() <= 1e-6 * exact.norm().max(1e-3), "fd {fd} vs {exact}");
        }
    }

    #[test]
    fn render_prints_action_pairs() {
        let f = PolySymbol::parse("zb(1)^2*z(1)*z(2) - 2*kinv + (0.5-1.5i)*zb(2)", 2).unwrap();
        let text = f.render();
        assert!(text.contains("s(1)*zb(1)*z(2)"), "{text}");
        assert_eq!(PolySymbol::parse(&text, 2).unwrap(), f);
    }

    #[test]
    fn compose_expands_powers() {
        let g = PolySymbol::parse("s(1) + s(2)", 2).unwrap();
        let f = RealPoly::parse("x^2 + 1").unwrap();
        let h = f.compose(&g);
        let expected = PolySymbol::parse("s(1)^2 + 2*s(1)*s(2) + s(2)^2 + 1", 2).unwrap();
        assert!(h.max_abs_diff(&expected) < 1e-15);
    }

    fn arb_symbol(n: usize) -> impl Strategy<Value = PolySymbol> {
        let term = (
            proptest::collection::vec(0u32..3, n),
            proptest::collection::vec(0u32..3, n),
            0u32..2,
            -4i32..5,
            -4i32..5,
        );
        proptest::collection::vec(term, 0..6).prop_map(move |terms| {
            let mut f = PolySymbol::zero(n);
            for (g, d, l, re, im) in terms {
                f.add_term(TermKey { gamma: g, delta: d, l }, Complex64::new(re as f64 * 0.25, im as f64 * 0.5));
            }
            f
        })
    }

    proptest! {
        #[test]
        fn parse_render_roundtrip(f in arb_symbol(3)) {
            prop_assert_eq!(PolySymbol::parse(&f.render(), 3).unwrap(), f);
        }

        #[test]
        fn averaging_is_a_hermitian_preserving_projection(f in arb_symbol(3)) {
            let p = WeightVector::new(vec![1, 2, 3]).unwrap();
            let h = f.add(&f.adjoint());
            prop_assert!(h.is_hermitian());
            let a = h.average_circle(&p);
            prop_assert!(a.is_hermitian());
            prop_assert_eq!(a.average_circle(&p), a.clone());
            prop_assert!(a.is_invariant(&p));
        }

        #[test]
        fn diagonal_hermitian_symbols_are_real(f in arb_symbol(2), s1 in 0.0f64..0.5, a in 0.0f64..6.3) {
            let p = WeightVector::new(vec![2, 1]).unwrap();
            let h = f.add(&f.adjoint());
            let mut diag = PolySymbol::zero(2);
            for (k, c) in h.terms().filter(|(k, _)| k.is_diagonal()) {
                diag.add_term(k.clone(), *c);
            }
            let pt = ReducedPoint::new(vec![s1, 1.0 - 2.0 * s1], vec![a], &p).unwrap();
            prop_assert!(diag.eval_principal(&pt).im.abs() < 1e-12);
        }

        #[test]
        fn bracket_is_antisymmetric_and_bilinear(f in arb_symbol(2), g in arb_symbol(2), h in arb_symbol(2)) {
            let fg = f.poisson_bracket(&g);
            let gf = g.poisson_bracket(&f);
            prop_assert!(fg.add(&gf).max_abs_diff(&PolySymbol::zero(2)) < 1e-12);
            let lhs = f.add(&h).poisson_bracket(&g);
            let rhs = fg.add(&h.poisson_bracket(&g));
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-11);
        }
    }
}
