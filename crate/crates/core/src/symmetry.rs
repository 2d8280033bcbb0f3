//! Point symmetries `v = ξ ∂x + η ∂t + ζ ∂P` with exact rational polynomial
//! coefficients.
//!
//! Brackets and Jacobi identities are computed exactly. Flows `exp(ε v)` are
//! evaluated through the exponential of a 4×4 affine matrix when the
//! generator is affine in `(x, t, P)`, and by adaptive integration otherwise.
//! [`transform_solution`] pushes a sampled solution through a flow, and
//! [`invariance_residual`] measures how the PDE residual of the pushed field
//! grows with `ε`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{fitted_order, FieldHistory, SpaceTimeGrid};
use crate::ode::{integrate, OdeOptions};
use crate::solvers::{residual, PdeKind};

pub type Rational = BigRational;

/// Largest total degree a coefficient polynomial may reach.
pub const MAX_DEGREE: u32 = 3;
/// Tolerance of the adaptive flow integrator.
pub const FLOW_TOLERANCE: f64 = 1e-12;

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

fn rat_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn fmt_rat(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parse `"3"`, `"-2/3"`, `"0.125"` or `"1.5e-3"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::Parameter(format!("not a rational number: {s:?}"));
    if let Some((n, d)) = s.split_once('/') {
        let n = parse_rational(n)?;
        let d = parse_rational(d)?;
        if d.is_zero() {
            return Err(Error::Parameter(format!("zero denominator in {s:?}")));
        }
        return Ok(n / d);
    }
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(k) => (&s[..k], s[k + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    if int.is_empty() && frac.is_empty() || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let all: String = format!("{int}{frac}");
    let numer: BigInt = all.parse().map_err(|_| bad())?;
    let scale = exp - frac.len() as i32;
    let ten = BigInt::from(10);
    let mut r = Rational::from_integer(numer);
    if scale >= 0 {
        r *= Rational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        r /= Rational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Ok(if neg { -r } else { r })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    X,
    T,
    P,
}

impl Var {
    fn index(self) -> usize {
        self as usize
    }
}

/// Sparse polynomial in `(x, t, P)` with rational coefficients, total
/// degree at most [`MAX_DEGREE`]. Terms are kept sorted by exponent and
/// zero coefficients are never stored.
#[derive(Clone, PartialEq, Eq, Default, Hash)]
pub struct PolyCoeff {
    terms: BTreeMap<[u32; 3], Rational>,
}

impl PolyCoeff {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: Rational) -> Self {
        let mut p = Self::zero();
        p.insert([0, 0, 0], c);
        p
    }

    pub fn var(v: Var) -> Self {
        let mut e = [0; 3];
        e[v.index()] = 1;
        let mut p = Self::zero();
        p.insert(e, Rational::one());
        p
    }

    pub fn monomial(coef: Rational, exps: [u32; 3]) -> Result<Self> {
        let degree: u32 = exps.iter().sum();
        if degree > MAX_DEGREE {
            return Err(Error::UnsupportedDegree { degree, cap: MAX_DEGREE });
        }
        let mut p = Self::zero();
        p.insert(exps, coef);
        Ok(p)
    }

    fn insert(&mut self, e: [u32; 3], c: Rational) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(e).or_insert_with(Rational::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.remove(&e);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32; 3], &Rational)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    /// The constant value, when the polynomial has no other terms.
    pub fn as_constant(&self) -> Option<Rational> {
        match self.terms.len() {
            0 => Some(Rational::zero()),
            1 => self.terms.get(&[0, 0, 0]).cloned(),
            _ => None,
        }
    }

    pub fn depends_on(&self, v: Var) -> bool {
        self.terms.keys().any(|e| e[v.index()] > 0)
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.insert(*e, c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        self.scale(&-Rational::one())
    }

    pub fn scale(&self, k: &Rational) -> Self {
        let mut out = Self::zero();
        for (e, c) in &self.terms {
            out.insert(*e, c * k);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        let mut out = Self::zero();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                out.insert([ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]], ca * cb);
            }
        }
        out.check_degree()?;
        Ok(out)
    }

    fn check_degree(&self) -> Result<()> {
        let degree = self.degree();
        if degree > MAX_DEGREE {
            return Err(Error::UnsupportedDegree { degree, cap: MAX_DEGREE });
        }
        Ok(())
    }

    pub fn pow(&self, k: u32) -> Result<Self> {
        let mut out = Self::constant(Rational::one());
        for _ in 0..k {
            out = out.mul(self)?;
        }
        Ok(out)
    }

    pub fn partial(&self, v: Var) -> Self {
        let k = v.index();
        let mut out = Self::zero();
        for (e, c) in &self.terms {
            if e[k] > 0 {
                let mut d = *e;
                d[k] -= 1;
                out.insert(d, c * Rational::from_integer(BigInt::from(e[k])));
            }
        }
        out
    }

    pub fn eval(&self, p: [f64; 3]) -> f64 {
        self.to_float().eval(p)
    }

    fn to_float(&self) -> FloatPoly {
        FloatPoly { terms: self.terms.iter().map(|(e, c)| (*e, rat_to_f64(c))).collect() }
    }

    /// `[d/dx, d/dt, d/dP, constant]` when the degree is at most one.
    fn affine_row(&self) -> Option<[f64; 4]> {
        if self.degree() > 1 {
            return None;
        }
        let mut row = [0.0; 4];
        for (e, c) in &self.terms {
            let c = rat_to_f64(c);
            match e {
                [1, 0, 0] => row[0] = c,
                [0, 1, 0] => row[1] = c,
                [0, 0, 1] => row[2] = c,
                _ => row[3] = c,
            }
        }
        Some(row)
    }

    /// Parse a polynomial such as `"2/m*(P + b) - x^2*t"`. Identifiers other
    /// than `x`, `t` and `P` must be bound in `params`.
    pub fn parse(text: &str, params: &BTreeMap<String, Rational>) -> Result<Self> {
        let tokens = tokenize(text)?;
        let mut parser = PolyParser { tokens: &tokens, pos: 0, params };
        let p = parser.expr()?;
        if parser.pos != tokens.len() {
            return Err(Error::Parameter(format!("unexpected {:?} in {text:?}", tokens[parser.pos])));
        }
        Ok(p)
    }
}

impl fmt::Display for PolyCoeff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        for (k, (e, c)) in self.terms.iter().rev().enumerate() {
            let neg = c.is_negative();
            let mag = c.abs();
            if k == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, "{}", if neg { " - " } else { " + " })?;
            }
            let mut factors = Vec::new();
            for (name, p) in ["x", "t", "P"].iter().zip(e) {
                match p {
                    0 => {}
                    1 => factors.push(name.to_string()),
                    p => factors.push(format!("{name}^{p}")),
                }
            }
            if factors.is_empty() {
                write!(f, "{}", fmt_rat(&mag))?;
            } else if mag.is_one() {
                write!(f, "{}", factors.join("*"))?;
            } else {
                write!(f, "{}*{}", fmt_rat(&mag), factors.join("*"))?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for PolyCoeff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PolyCoeff({self})")
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(Rational),
    Ident(String),
    Op(char),
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
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
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '-' || chars[i] == '+') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let s: String = chars[start..i].iter().collect();
            out.push(Token::Num(parse_rational(&s)?));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else {
            return Err(Error::Parameter(format!("unexpected character {c:?} in {text:?}")));
        }
    }
    Ok(out)
}

struct PolyParser<'a> {
    tokens: &'a [Token],
    pos: usize,
    params: &'a BTreeMap<String, Rational>,
}

impl PolyParser<'_> {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Token::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<PolyCoeff> {
        let mut acc = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = if op == '+' { acc.add(&rhs) } else { acc.sub(&rhs) };
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<PolyCoeff> {
        let mut acc = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            acc = if op == '*' {
                acc.mul(&rhs)?
            } else {
                match rhs.as_constant() {
                    Some(c) if !c.is_zero() => acc.scale(&(Rational::one() / c)),
                    _ => return Err(Error::Parameter("division by a non-constant or zero".into())),
                }
            };
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<PolyCoeff> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(self.unary()?.neg())
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<PolyCoeff> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = match self.tokens.get(self.pos) {
                Some(Token::Num(n)) if n.denom().is_one() && !n.is_negative() => n.to_integer().to_u32(),
                _ => None,
            };
            let Some(k) = exp else {
                return Err(Error::Parameter("exponent must be a non-negative integer".into()));
            };
            self.pos += 1;
            return base.pow(k);
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<PolyCoeff> {
        let tok = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        match tok {
            Some(Token::Num(n)) => Ok(PolyCoeff::constant(n)),
            Some(Token::Ident(name)) => match name.as_str() {
                "x" => Ok(PolyCoeff::var(Var::X)),
                "t" => Ok(PolyCoeff::var(Var::T)),
                "P" => Ok(PolyCoeff::var(Var::P)),
                other => match self.params.get(other) {
                    Some(v) => Ok(PolyCoeff::constant(v.clone())),
                    None => Err(Error::Parameter(format!("unbound parameter {other:?}"))),
                },
            },
            Some(Token::Op('(')) => {
                let inner = self.expr()?;
                if self.peek_op() != Some(')') {
                    return Err(Error::Parameter("missing ')'".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            other => Err(Error::Parameter(format!("unexpected {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
/// Floating-point copy of a [`PolyCoeff`] for fast evaluation.
pub struct FloatPoly {
    terms: Vec<([u32; 3], f64)>,
}

impl FloatPoly {
    fn eval(&self, p: [f64; 3]) -> f64 {
        self.terms.iter().map(|(e, c)| c * p[0].powi(e[0] as i32) * p[1].powi(e[1] as i32) * p[2].powi(e[2] as i32)).sum()
    }
}

/// Vector field `ξ ∂x + η ∂t + ζ ∂P`.
#[derive(Clone, PartialEq, Eq)]
pub struct SymmetryGenerator {
    pub xi: PolyCoeff,
    pub eta: PolyCoeff,
    pub zeta: PolyCoeff,
    pub label: String,
}

impl fmt::Debug for SymmetryGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {self}", self.label)
    }
}

impl fmt::Display for SymmetryGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = [(&self.xi, "d/dx"), (&self.eta, "d/dt"), (&self.zeta, "d/dP")]
            .iter()
            .filter(|(c, _)| !c.is_zero())
            .map(|(c, d)| format!("({c}) {d}"))
            .collect();
        if parts.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", parts.join(" + "))
        }
    }
}

impl SymmetryGenerator {
    pub fn new(label: &str, xi: PolyCoeff, eta: PolyCoeff, zeta: PolyCoeff) -> Self {
        Self { xi, eta, zeta, label: label.to_string() }
    }

    /// Build from polynomial strings, e.g. `("v3", "x", "2*t", "0", &params)`.
    pub fn parse(label: &str, xi: &str, eta: &str, zeta: &str, params: &BTreeMap<String, Rational>) -> Result<Self> {
        Ok(Self::new(label, PolyCoeff::parse(xi, params)?, PolyCoeff::parse(eta, params)?, PolyCoeff::parse(zeta, params)?))
    }

    pub fn zero() -> Self {
        Self::new("0", PolyCoeff::zero(), PolyCoeff::zero(), PolyCoeff::zero())
    }

    pub fn is_zero(&self) -> bool {
        self.xi.is_zero() && self.eta.is_zero() && self.zeta.is_zero()
    }

    /// `v(f) = ξ f_x + η f_t + ζ f_P`.
    pub fn apply(&self, f: &PolyCoeff) -> Result<PolyCoeff> {
        let a = self.xi.mul(&f.partial(Var::X))?;
        let b = self.eta.mul(&f.partial(Var::T))?;
        let c = self.zeta.mul(&f.partial(Var::P))?;
        Ok(a.add(&b).add(&c))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::new(
            &format!("{} + {}", self.label, other.label),
            self.xi.add(&other.xi),
            self.eta.add(&other.eta),
            self.zeta.add(&other.zeta),
        )
    }

    pub fn scale(&self, k: &Rational) -> Self {
        Self::new(&format!("{}*{}", fmt_rat(k), self.label), self.xi.scale(k), self.eta.scale(k), self.zeta.scale(k))
    }

    /// Same vector field (labels are ignored).
    pub fn same_field(&self, other: &Self) -> bool {
        self.xi == other.xi && self.eta == other.eta && self.zeta == other.zeta
    }

    pub fn is_affine(&self) -> bool {
        self.xi.degree() <= 1 && self.eta.degree() <= 1 && self.zeta.degree() <= 1
    }

    /// `(ξ, η, ζ)` at a point.
    pub fn eval(&self, p: [f64; 3]) -> [f64; 3] {
        [self.xi.eval(p), self.eta.eval(p), self.zeta.eval(p)]
    }

    fn to_float(&self) -> [FloatPoly; 3] {
        [self.xi.to_float(), self.eta.to_float(), self.zeta.to_float()]
    }
}

/// Lie bracket `[v, w]` with components `v(w_i) − w(v_i)`.
pub fn commutator(v: &SymmetryGenerator, w: &SymmetryGenerator) -> Result<SymmetryGenerator> {
    let comp = |vi: &PolyCoeff, wi: &PolyCoeff| -> Result<PolyCoeff> { Ok(v.apply(wi)?.sub(&w.apply(vi)?)) };
    Ok(SymmetryGenerator::new(&format!("[{}, {}]", v.label, w.label), comp(&v.xi, &w.xi)?, comp(&v.eta, &w.eta)?, comp(&v.zeta, &w.zeta)?))
}

/// `[[u, v], w] + [[v, w], u] + [[w, u], v]`.
pub fn jacobi_sum(u: &SymmetryGenerator, v: &SymmetryGenerator, w: &SymmetryGenerator) -> Result<SymmetryGenerator> {
    let a = commutator(&commutator(u, v)?, w)?;
    let b = commutator(&commutator(v, w)?, u)?;
    let c = commutator(&commutator(w, u)?, v)?;
    Ok(a.add(&b).add(&c))
}

/// Rational linear combination of the generators of a table.
pub type Combination = Vec<(usize, Rational)>;

/// Generators together with their expected bracket relations. Pairs that
/// are not declared are expected to commute.
#[derive(Debug, Clone)]
pub struct AlgebraTable {
    pub name: String,
    pub generators: Vec<SymmetryGenerator>,
    expected: BTreeMap<(usize, usize), Combination>,
}

impl AlgebraTable {
    pub fn new(name: &str, generators: Vec<SymmetryGenerator>) -> Self {
        Self { name: name.to_string(), generators, expected: BTreeMap::new() }
    }

    /// Declare `[v_i, v_j] = Σ c_k v_k` (0-based indices). Declaring `(j, i)`
    /// stores the negated combination under `(i, j)`.
    pub fn bracket(mut self, i: usize, j: usize, combo: Combination) -> Result<Self> {
        self.set_bracket(i, j, combo)?;
        Ok(self)
    }

    fn set_bracket(&mut self, i: usize, j: usize, combo: Combination) -> Result<()> {
        let n = self.generators.len();
        if i >= n || j >= n || combo.iter().any(|(k, _)| *k >= n) {
            return Err(Error::Parameter(format!("bracket ({i}, {j}) references an undeclared generator")));
        }
        if i == j {
            return Err(Error::Parameter(format!("bracket of generator {i} with itself is always zero")));
        }
        let (key, combo) = if i < j { ((i, j), combo) } else { ((j, i), combo.into_iter().map(|(k, c)| (k, -c)).collect()) };
        self.expected.insert(key, combo);
        Ok(())
    }

    pub fn expected(&self, i: usize, j: usize) -> Combination {
        self.expected.get(&(i, j)).cloned().unwrap_or_default()
    }

    fn combine(&self, combo: &Combination) -> SymmetryGenerator {
        combo.iter().fold(SymmetryGenerator::zero(), |acc, (k, c)| acc.add(&self.generators[*k].scale(c)))
    }

    fn describe(&self, combo: &Combination) -> String {
        let parts: Vec<String> = combo
            .iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|(k, c)| {
                let name = &self.generators[*k].label;
                if c.is_one() {
                    name.clone()
                } else {
                    format!("{}*{name}", fmt_rat(c))
                }
            })
            .collect();
        if parts.is_empty() {
            "0".into()
        } else {
            parts.join(" + ")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BracketCheck {
    pub left: String,
    pub right: String,
    pub expected: String,
    pub computed: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgebraReport {
    pub algebra: String,
    pub pairs: Vec<BracketCheck>,
    pub pairs_passed: usize,
    pub jacobi_triples: usize,
    /// Triples whose Jacobi sum is not exactly zero.
    pub jacobi_failures: Vec<String>,
    pub all_pass: bool,
}

/// Compute every pairwise bracket exactly, compare with the table, and
/// check the Jacobi identity on every triple. Mismatches are reported, not
/// raised.
pub fn verify_algebra(table: &AlgebraTable) -> AlgebraReport {
    let g = &table.generators;
    let mut pairs = Vec::new();
    for i in 0..g.len() {
        for j in i + 1..g.len() {
            let combo = table.expected(i, j);
            let expected = table.combine(&combo);
            let (computed, pass) = match commutator(&g[i], &g[j]) {
                Ok(b) => {
                    let pass = b.same_field(&expected);
                    (b.to_string(), pass)
                }
                Err(e) => (e.to_string(), false),
            };
            pairs.push(BracketCheck {
                left: g[i].label.clone(),
                right: g[j].label.clone(),
                expected: table.describe(&combo),
                computed,
                pass,
            });
        }
    }
    let mut jacobi_failures = Vec::new();
    let mut triples = 0;
    for i in 0..g.len() {
        for j in i + 1..g.len() {
            for k in j + 1..g.len() {
                triples += 1;
                let ok = jacobi_sum(&g[i], &g[j], &g[k]).map(|s| s.is_zero()).unwrap_or(false);
                if !ok {
                    jacobi_failures.push(format!("({}, {}, {})", g[i].label, g[j].label, g[k].label));
                }
            }
        }
    }
    let pairs_passed = pairs.iter().filter(|p| p.pass).count();
    let all_pass = pairs_passed == pairs.len() && jacobi_failures.is_empty();
    AlgebraReport { algebra: table.name.clone(), pairs, pairs_passed, jacobi_triples: triples, jacobi_failures, all_pass }
}

fn gen(label: &str, xi: PolyCoeff, eta: PolyCoeff, zeta: PolyCoeff) -> SymmetryGenerator {
    SymmetryGenerator::new(label, xi, eta, zeta)
}

fn one() -> Rational {
    Rational::one()
}

/// `∂x`, `∂t`, `x ∂x + 2t ∂t`: symmetries of `P_t = f(P)^k P_xx` for any `f`.
pub fn heat_algebra() -> AlgebraTable {
    let z = PolyCoeff::zero;
    let c = |n: i64| PolyCoeff::constant(rat(n, 1));
    let g = vec![
        gen("v1", c(1), z(), z()),
        gen("v2", z(), c(1), z()),
        gen("v3", PolyCoeff::var(Var::X), PolyCoeff::var(Var::T).scale(&rat(2, 1)), z()),
    ];
    AlgebraTable::new("heat", g).bracket(0, 2, vec![(0, one())]).and_then(|t| t.bracket(1, 2, vec![(1, rat(2, 1))])).expect("static table")
}

/// Symmetries of `P_t = C (P + b)^m P_xx` (`m` is the exponent of the full
/// coefficient): translations, `x ∂x + (2/m)(P + b) ∂P` and
/// `t ∂t − ((P + b)/m) ∂P`.
pub fn power_law_algebra(m: &Rational, b: &Rational) -> Result<AlgebraTable> {
    if m.is_zero() {
        return Err(Error::Parameter("power-law algebra needs m != 0".into()));
    }
    let z = PolyCoeff::zero;
    let shifted = PolyCoeff::var(Var::P).add(&PolyCoeff::constant(b.clone()));
    let g = vec![
        gen("v1", PolyCoeff::constant(one()), z(), z()),
        gen("v2", z(), PolyCoeff::constant(one()), z()),
        gen("v3", PolyCoeff::var(Var::X), z(), shifted.scale(&(rat(2, 1) / m))),
        gen("v4", z(), PolyCoeff::var(Var::T), shifted.scale(&(-one() / m))),
    ];
    AlgebraTable::new("power-law", g).bracket(0, 2, vec![(0, one())])?.bracket(1, 3, vec![(1, one())])
}

/// Translations and the hyperbolic rotation `v² t ∂x + x ∂t`.
pub fn nonlinear_telegrapher_algebra(v: &Rational) -> Result<AlgebraTable> {
    let z = PolyCoeff::zero;
    let v2 = v * v;
    let g = vec![
        gen("v1", PolyCoeff::constant(one()), z(), z()),
        gen("v2", z(), PolyCoeff::constant(one()), z()),
        gen("v3", PolyCoeff::var(Var::T).scale(&v2), PolyCoeff::var(Var::X), z()),
    ];
    AlgebraTable::new("nonlinear-telegrapher", g).bracket(0, 2, vec![(1, one())])?.bracket(1, 2, vec![(0, v2)])
}

/// Symmetries of `P_tt − v² P_xx + 2a P_t = 0`: translations, `P ∂P` and
/// the damped boost `v² t ∂x + x ∂t − a x P ∂P`.
pub fn telegrapher_algebra(v: &Rational, a: &Rational) -> Result<AlgebraTable> {
    let z = PolyCoeff::zero;
    let v2 = v * v;
    let xp = PolyCoeff::var(Var::X).mul(&PolyCoeff::var(Var::P))?;
    let g = vec![
        gen("v1", PolyCoeff::constant(one()), z(), z()),
        gen("v2", z(), PolyCoeff::constant(one()), z()),
        gen("v3", z(), z(), PolyCoeff::var(Var::P)),
        gen("v4", PolyCoeff::var(Var::T).scale(&v2), PolyCoeff::var(Var::X), xp.scale(&-a.clone())),
    ];
    AlgebraTable::new("telegrapher", g).bracket(0, 3, vec![(1, one()), (2, -a.clone())])?.bracket(1, 3, vec![(0, v2)])
}

/// Names accepted by [`builtin_algebra`].
pub const BUILTIN_ALGEBRAS: [&str; 4] = ["heat", "power-law", "nonlinear-telegrapher", "telegrapher"];

/// Built-in table by name. Parameters used: `m`, `b` (power-law), `v`
/// (telegrapher families), `a` (telegrapher).
pub fn builtin_algebra(name: &str, params: &BTreeMap<String, Rational>) -> Result<AlgebraTable> {
    let get = |k: &str| params.get(k).cloned().ok_or_else(|| Error::Parameter(format!("algebra {name:?} needs parameter {k:?}")));
    match name {
        "heat" => Ok(heat_algebra()),
        "power-law" => power_law_algebra(&get("m")?, &get("b")?),
        "nonlinear-telegrapher" => nonlinear_telegrapher_algebra(&get("v")?),
        "telegrapher" => telegrapher_algebra(&get("v")?, &get("a")?),
        other => Err(Error::Parameter(format!("unknown algebra {other:?}; known: {}", BUILTIN_ALGEBRAS.join(", ")))),
    }
}

/// Parse the declarative generator format:
///
/// ```text
/// # comment
/// algebra power-law
/// param m = 2
/// param b = 1/2
/// generator v1: xi = 1; eta = 0; zeta = 0
/// generator v3: xi = x; eta = 0; zeta = 2/m*(P + b)
/// bracket v1 v3 = v1
/// bracket v1 v4 = v2 - a*v3
/// ```
///
/// Undeclared bracket pairs are expected to commute.
pub fn parse_algebra(text: &str) -> Result<AlgebraTable> {
    let mut name = String::from("custom");
    let mut params: BTreeMap<String, Rational> = BTreeMap::new();
    let mut generators: Vec<SymmetryGenerator> = Vec::new();
    let mut brackets: Vec<(usize, String, String, String)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let perr = |message: String| Error::Parse { line: line_no, message };
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match head {
            "algebra" => {
                if rest.is_empty() {
                    return Err(perr("algebra needs a name".into()));
                }
                name = rest.to_string();
            }
            "param" => {
                let (key, value) = rest.split_once('=').ok_or_else(|| perr("expected `param NAME = VALUE`".into()))?;
                let key = key.trim();
                if !key.chars().all(|c| c.is_alphanumeric() || c == '_') || key.is_empty() || ["x", "t", "P"].contains(&key) {
                    return Err(perr(format!("invalid parameter name {key:?}")));
                }
                let value = PolyCoeff::parse(value, &params)
                    .map_err(|e| perr(e.to_string()))?
                    .as_constant()
                    .ok_or_else(|| perr("parameter values must be constant".into()))?;
                params.insert(key.to_string(), value);
            }
            "generator" => {
                let (label, body) =
                    rest.split_once(':').ok_or_else(|| perr("expected `generator NAME: xi = ..; eta = ..; zeta = ..`".into()))?;
                let label = label.trim();
                if label.is_empty() || generators.iter().any(|g| g.label == label) {
                    return Err(perr(format!("missing or duplicate generator name {label:?}")));
                }
                let mut parts: BTreeMap<&str, PolyCoeff> = BTreeMap::new();
                for piece in body.split(';') {
                    let (key, value) =
                        piece.split_once('=').ok_or_else(|| perr(format!("expected `key = polynomial`, got {:?}", piece.trim())))?;
                    let key = key.trim();
                    if !["xi", "eta", "zeta"].contains(&key) || parts.contains_key(key) {
                        return Err(perr(format!("unknown or repeated component {key:?}")));
                    }
                    parts.insert(key, PolyCoeff::parse(value, &params).map_err(|e| perr(e.to_string()))?);
                }
                let mut take = |k: &str| parts.remove(k).ok_or_else(|| perr(format!("component {k:?} missing")));
                let (xi, eta, zeta) = (take("xi")?, take("eta")?, take("zeta")?);
                generators.push(SymmetryGenerator::new(label, xi, eta, zeta));
            }
            "bracket" => {
                let (lhs, rhs) = rest.split_once('=').ok_or_else(|| perr("expected `bracket A B = combination`".into()))?;
                let names: Vec<&str> = lhs.split_whitespace().collect();
                if names.len() != 2 {
                    return Err(perr("bracket needs two generator names".into()));
                }
                brackets.push((line_no, names[0].to_string(), names[1].to_string(), rhs.trim().to_string()));
            }
            other => return Err(perr(format!("unknown directive {other:?}"))),
        }
    }
    if generators.is_empty() {
        return Err(Error::Parse { line: text.lines().count().max(1), message: "no generators declared".into() });
    }
    let index = |n: &str| generators.iter().position(|g| g.label == n);
    let mut table = AlgebraTable::new(&name, generators.clone());
    for (line, a, b, rhs) in brackets {
        let perr = |message: String| Error::Parse { line, message };
        let i = index(&a).ok_or_else(|| perr(format!("undeclared generator {a:?}")))?;
        let j = index(&b).ok_or_else(|| perr(format!("undeclared generator {b:?}")))?;
        let combo = parse_combination(&rhs, &generators, &params).map_err(|e| perr(e.to_string()))?;
        table.set_bracket(i, j, combo).map_err(|e| perr(e.to_string()))?;
    }
    Ok(table)
}

/// `"v2 - a*v3"` → `[(1, 1), (2, -a)]`.
fn parse_combination(text: &str, gens: &[SymmetryGenerator], params: &BTreeMap<String, Rational>) -> Result<Combination> {
    let mut terms: Vec<(bool, String)> = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    let mut neg = false;
    for c in text.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if depth == 0 && (c == '+' || c == '-') && !cur.trim().is_empty() && !cur.trim_end().ends_with(['*', '/', '^']) {
            terms.push((neg, std::mem::take(&mut cur)));
            neg = c == '-';
        } else if depth == 0 && (c == '+' || c == '-') && cur.trim().is_empty() {
            if c == '-' {
                neg = !neg;
            }
        } else {
            cur.push(c);
        }
    }
    terms.push((neg, cur));
    let mut combo: BTreeMap<usize, Rational> = BTreeMap::new();
    for (neg, term) in terms {
        let term = term.trim();
        if term.is_empty() {
            return Err(Error::Parameter(format!("empty term in {text:?}")));
        }
        let (coef_text, name) = match term.rfind('*') {
            Some(k) => (Some(&term[..k]), term[k + 1..].trim()),
            None => (None, term),
        };
        let Some(idx) = gens.iter().position(|g| g.label == name) else {
            let c = PolyCoeff::parse(term, params)?.as_constant();
            if c.as_ref().is_some_and(|c| c.is_zero()) {
                continue;
            }
            return Err(Error::Parameter(format!("term {term:?} does not end in a generator name")));
        };
        let coef = match coef_text {
            Some(c) => {
                PolyCoeff::parse(c, params)?.as_constant().ok_or_else(|| Error::Parameter(format!("coefficient {c:?} is not constant")))?
            }
            None => one(),
        };
        *combo.entry(idx).or_insert_with(Rational::zero) += if neg { -coef } else { coef };
    }
    Ok(combo.into_iter().filter(|(_, c)| !c.is_zero()).collect())
}

/// Flow `exp(ε v)`.
#[derive(Debug, Clone)]
pub struct GroupElement {
    pub generator: SymmetryGenerator,
    pub epsilon: f64,
}

impl GroupElement {
    pub fn new(generator: SymmetryGenerator, epsilon: f64) -> Self {
        Self { generator, epsilon }
    }

    pub fn inverse(&self) -> Self {
        Self { generator: self.generator.clone(), epsilon: -self.epsilon }
    }

    /// Pre-compute the map once for repeated evaluation.
    pub fn compile(&self) -> Result<FlowMap> {
        if !self.epsilon.is_finite() {
            return Err(Error::Parameter(format!("epsilon must be finite, got {}", self.epsilon)));
        }
        if self.generator.is_affine() {
            let rows = [self.generator.xi.affine_row(), self.generator.eta.affine_row(), self.generator.zeta.affine_row()];
            let mut a = [[0.0; 4]; 4];
            for (r, row) in rows.iter().enumerate() {
                a[r] = row.expect("affine generator");
            }
            for row in a.iter_mut().take(3) {
                for v in row.iter_mut() {
                    *v *= self.epsilon;
                }
            }
            Ok(FlowMap::Affine(expm4(&a)))
        } else {
            Ok(FlowMap::Integrated { field: Box::new(self.generator.to_float()), epsilon: self.epsilon })
        }
    }

    pub fn apply(&self, point: [f64; 3]) -> Result<[f64; 3]> {
        self.compile()?.apply(point)
    }
}

/// `exp(ε v)` applied to `(x, t, P)`.
pub fn flow(g: &GroupElement, point: [f64; 3]) -> Result<[f64; 3]> {
    g.apply(point)
}

#[derive(Debug, Clone)]
pub enum FlowMap {
    /// Homogeneous 4×4 matrix acting on `(x, t, P, 1)`.
    Affine([[f64; 4]; 4]),
    Integrated {
        field: Box<[FloatPoly; 3]>,
        epsilon: f64,
    },
}

impl FlowMap {
    pub fn apply(&self, p: [f64; 3]) -> Result<[f64; 3]> {
        match self {
            FlowMap::Affine(m) => {
                let v = [p[0], p[1], p[2], 1.0];
                let mut out = [0.0; 3];
                for (r, o) in out.iter_mut().enumerate() {
                    *o = (0..4).map(|c| m[r][c] * v[c]).sum();
                }
                Ok(out)
            }
            FlowMap::Integrated { field, epsilon } => {
                if *epsilon == 0.0 {
                    return Ok(p);
                }
                let rhs = |_: f64, y: &[f64], d: &mut [f64]| {
                    let q = [y[0], y[1], y[2]];
                    for k in 0..3 {
                        d[k] = field[k].eval(q);
                        if !d[k].is_finite() {
                            return Err(Error::Flow(format!("vector field not finite at {q:?}")));
                        }
                    }
                    Ok(())
                };
                let opts = OdeOptions::with_tolerance(FLOW_TOLERANCE);
                let y = integrate(&rhs, 0.0, &p, *epsilon, &opts).map_err(|e| match e {
                    Error::Flow(m) => Error::Flow(m),
                    other => Error::Flow(format!("flow integration from {p:?} failed: {other}")),
                })?;
                Ok([y[0], y[1], y[2]])
            }
        }
    }
}

fn matmul4(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut r = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            r[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    r
}

/// Matrix exponential by scaling and squaring with a Taylor kernel.
fn expm4(a: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let norm = a.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scale = 0.5f64.powi(squarings);
    let s = a.map(|r| r.map(|v| v * scale));
    let mut sum = [[0.0; 4]; 4];
    for (i, row) in sum.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut term = sum;
    for k in 1..=20 {
        term = matmul4(&term, &s).map(|r| r.map(|v| v / k as f64));
        for i in 0..4 {
            for j in 0..4 {
                sum[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        sum = matmul4(&sum, &sum);
    }
    sum
}

/// Closed-form one-parameter groups, used as independent references for
/// [`flow`].
pub mod closed_form {
    use crate::error::{Error, Result};

    /// Groups of `∂x`, `∂t`, `x ∂x + 2t ∂t` (index 1..=3).
    pub fn heat(index: usize, eps: f64, [x, t, p]: [f64; 3]) -> Result<[f64; 3]> {
        match index {
            1 => Ok([x + eps, t, p]),
            2 => Ok([x, t + eps, p]),
            3 => Ok([eps.exp() * x, (2.0 * eps).exp() * t, p]),
            _ => Err(Error::Parameter(format!("heat group index {index} out of 1..=3"))),
        }
    }

    /// Groups of the power-law generators (index 1..=4) with coefficient
    /// exponent `m` and shift `b`.
    pub fn power_law(index: usize, eps: f64, m: f64, b: f64, [x, t, p]: [f64; 3]) -> Result<[f64; 3]> {
        match index {
            1 => Ok([x + eps, t, p]),
            2 => Ok([x, t + eps, p]),
            3 => Ok([eps.exp() * x, t, (p + b) * (2.0 * eps / m).exp() - b]),
            4 => Ok([x, eps.exp() * t, (p + b) * (-eps / m).exp() - b]),
            _ => Err(Error::Parameter(format!("power-law group index {index} out of 1..=4"))),
        }
    }

    /// Exact hyperbolic rotation generated by `v² t ∂x + x ∂t`.
    pub fn boost(v: f64, eps: f64, [x, t, p]: [f64; 3]) -> [f64; 3] {
        let (c, s) = ((v * eps).cosh(), (v * eps).sinh());
        [x * c + v * t * s, t * c + x / v * s, p]
    }

    /// First-order truncation `(x + v² ε t, t + ε x, P)` of [`boost`].
    pub fn boost_first_order(v: f64, eps: f64, [x, t, p]: [f64; 3]) -> [f64; 3] {
        [x + v * v * eps * t, t + eps * x, p]
    }

    /// Flow of `v² t ∂x + x ∂t − a x P ∂P`.
    pub fn damped_boost(v: f64, a: f64, eps: f64, point: [f64; 3]) -> [f64; 3] {
        let [_, t, p] = point;
        let [x1, t1, _] = boost(v, eps, point);
        [x1, t1, p * (-a * (t1 - t)).exp()]
    }
}

/// How a group element acts on points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MapOrder {
    /// The flow `exp(ε v)`.
    #[default]
    Exact,
    /// The linearized map `(x, t, P) + ε (ξ, η, ζ)`. Solutions are mapped to
    /// solutions up to `O(ε²)` exactly when `v` is a symmetry.
    FirstOrder,
}

/// Base-point inverse and fibre lift of a group element.
enum PointMap {
    Flow { back: Box<FlowMap>, fwd: Box<FlowMap> },
    Linear { field: Box<[FloatPoly; 3]>, epsilon: f64 },
}

impl PointMap {
    fn new(g: &GroupElement, order: MapOrder) -> Result<Self> {
        check_transformable(&g.generator)?;
        match order {
            MapOrder::Exact => Ok(PointMap::Flow { back: Box::new(g.inverse().compile()?), fwd: Box::new(g.compile()?) }),
            MapOrder::FirstOrder => {
                if !g.epsilon.is_finite() {
                    return Err(Error::Parameter(format!("epsilon must be finite, got {}", g.epsilon)));
                }
                Ok(PointMap::Linear { field: Box::new(g.generator.to_float()), epsilon: g.epsilon })
            }
        }
    }

    /// `(x, t)` with image `(x1, t1)`.
    fn preimage(&self, x1: f64, t1: f64) -> Result<(f64, f64)> {
        match self {
            PointMap::Flow { back, .. } => {
                let [x, t, _] = back.apply([x1, t1, 0.0])?;
                Ok((x, t))
            }
            PointMap::Linear { field, epsilon } => {
                // fixed point of (x, t) = (x1, t1) − ε (ξ, η)(x, t)
                let (mut x, mut t) = (x1, t1);
                for _ in 0..100 {
                    let nx = x1 - epsilon * field[0].eval([x, t, 0.0]);
                    let nt = t1 - epsilon * field[1].eval([x, t, 0.0]);
                    let step = (nx - x).abs().max((nt - t).abs());
                    (x, t) = (nx, nt);
                    if step <= 1e-15 * (1.0 + x.abs().max(t.abs())) {
                        return Ok((x, t));
                    }
                }
                Err(Error::Flow(format!("linearized map is not invertible near ({x1}, {t1})")))
            }
        }
    }

    fn lift(&self, x: f64, t: f64, p: f64) -> Result<f64> {
        match self {
            PointMap::Flow { fwd, .. } => Ok(fwd.apply([x, t, p])?[2]),
            PointMap::Linear { field, epsilon } => Ok(p + epsilon * field[2].eval([x, t, p])),
        }
    }
}

/// Push a sampled solution through `g` onto `target`: the value at a target
/// node `(x1, t1)` is obtained by mapping `(x1, t1)` back with the inverse
/// flow, reading `P` there and mapping `(x, t, P)` forward. `ξ` and `η` must
/// not depend on `P`. Target nodes whose preimage leaves the sampled
/// rectangle are a domain error; see [`admissible_subgrid`].
pub fn transform_solution(sol: &FieldHistory, g: &GroupElement, target: &SpaceTimeGrid) -> Result<FieldHistory> {
    transform_solution_with(sol, g, target, MapOrder::Exact)
}

/// [`transform_solution`] with a choice of point map.
pub fn transform_solution_with(sol: &FieldHistory, g: &GroupElement, target: &SpaceTimeGrid, order: MapOrder) -> Result<FieldHistory> {
    if sol.components() != 1 || sol.is_complex() {
        return Err(Error::Dimension("transform_solution needs a real scalar field".into()));
    }
    let map = PointMap::new(g, order)?;
    let src = *sol.grid();
    let mut out = FieldHistory::real(*target, 1)?;
    let mut clipped: Vec<(f64, f64)> = Vec::new();
    for n in 0..target.nt() {
        for i in 0..target.nx() {
            let (x1, t1) = (target.x(i), target.t(n));
            let (x, t) = map.preimage(x1, t1)?;
            if !src.contains(x, t) {
                clipped.push((x1, t1));
                continue;
            }
            let p = interpolate6(sol, x, t);
            out.set(0, n, i, map.lift(x, t, p)?);
        }
    }
    if !clipped.is_empty() {
        let bounds = clipped.iter().fold((f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY), |b, (x, t)| {
            (b.0.min(*x), b.1.max(*x), b.2.min(*t), b.3.max(*t))
        });
        return Err(Error::Domain(format!(
            "{} target node(s) map outside the solution domain; clipped region x in [{}, {}], t in [{}, {}]",
            clipped.len(),
            bounds.0,
            bounds.1,
            bounds.2,
            bounds.3
        )));
    }
    Ok(out)
}

fn check_transformable(v: &SymmetryGenerator) -> Result<()> {
    if v.xi.depends_on(Var::P) || v.eta.depends_on(Var::P) {
        return Err(Error::Parameter(format!("generator {} moves (x, t) depending on P; not supported", v.label)));
    }
    Ok(())
}

/// Sixth-order tensor Lagrange interpolation of a real scalar field. Exact
/// at nodes.
fn interpolate6(f: &FieldHistory, x: f64, t: f64) -> f64 {
    let g = f.grid();
    let (wx_start, wx) = stencil6((x - g.x_min()) / g.dx(), g.nx());
    let (wt_start, wt) = stencil6((t - g.t0()) / g.dt(), g.nt());
    let mut acc = 0.0;
    for (a, wa) in wt.iter().enumerate() {
        if *wa == 0.0 {
            continue;
        }
        let row = f.slice(0, wt_start + a);
        acc += wa * wx.iter().enumerate().map(|(b, wb)| wb * row[wx_start + b]).sum::<f64>();
    }
    acc
}

fn stencil6(s: f64, n: usize) -> (usize, Vec<f64>) {
    let s = s.clamp(0.0, (n - 1) as f64);
    let r = s.round();
    if (s - r).abs() < 1e-9 {
        let mut w = vec![0.0; 1];
        w[0] = 1.0;
        return (r as usize, w);
    }
    let width = n.min(6);
    let start = (s.floor() as isize - (width as isize / 2 - 1)).clamp(0, (n - width) as isize) as usize;
    let weights = (0..width)
        .map(|j| {
            let xj = (start + j) as f64;
            (0..width)
                .filter(|&k| k != j)
                .map(|k| {
                    let xk = (start + k) as f64;
                    (s - xk) / (xj - xk)
                })
                .product()
        })
        .collect();
    (start, weights)
}

/// Largest index rectangle `(i0, i1, n0, n1)` of `grid` whose nodes all map
/// back inside `grid` under every element of `elements`. Boundary rows and
/// columns are peeled greedily, the side with most violations first.
pub fn admissible_subgrid(grid: &SpaceTimeGrid, elements: &[GroupElement]) -> Result<(usize, usize, usize, usize)> {
    admissible_subgrid_with(grid, elements, MapOrder::Exact)
}

/// [`admissible_subgrid`] with a choice of point map.
pub fn admissible_subgrid_with(grid: &SpaceTimeGrid, elements: &[GroupElement], order: MapOrder) -> Result<(usize, usize, usize, usize)> {
    let maps = elements.iter().map(|g| PointMap::new(g, order)).collect::<Result<Vec<_>>>()?;
    let ok = |i: usize, n: usize| -> Result<bool> {
        for m in &maps {
            let (x, t) = m.preimage(grid.x(i), grid.t(n))?;
            if !grid.contains(x, t) {
                return Ok(false);
            }
        }
        Ok(true)
    };
    let (mut i0, mut i1, mut n0, mut n1) = (0usize, grid.nx() - 1, 0usize, grid.nt() - 1);
    loop {
        if i1 < i0 + 2 || n1 < n0 + 2 {
            return Err(Error::Domain("no admissible sub-grid: the flows move every node off the domain".into()));
        }
        let mut bad = [0usize; 4];
        for n in n0..=n1 {
            bad[0] += !ok(i0, n)? as usize;
            bad[1] += !ok(i1, n)? as usize;
        }
        for i in i0..=i1 {
            bad[2] += !ok(i, n0)? as usize;
            bad[3] += !ok(i, n1)? as usize;
        }
        if bad.iter().all(|b| *b == 0) {
            // edges are clean; interior nodes of a rectangle between clean
            // edges are checked once at the end
            break;
        }
        // normalise by edge length so long edges are not favoured
        let frac = [
            bad[0] as f64 / (n1 - n0 + 1) as f64,
            bad[1] as f64 / (n1 - n0 + 1) as f64,
            bad[2] as f64 / (i1 - i0 + 1) as f64,
            bad[3] as f64 / (i1 - i0 + 1) as f64,
        ];
        let worst = (0..4).max_by(|a, b| frac[*a].total_cmp(&frac[*b])).unwrap();
        match worst {
            0 => i0 += 1,
            1 => i1 -= 1,
            2 => n0 += 1,
            _ => n1 -= 1,
        }
    }
    for n in n0..=n1 {
        for i in i0..=i1 {
            if !ok(i, n)? {
                return Err(Error::Domain(format!("node ({}, {}) of the admissible rectangle maps outside", grid.x(i), grid.t(n))));
            }
        }
    }
    Ok((i0, i1, n0, n1))
}

/// Outcome of an invariance fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Residual stays within [`EXACT_RATIO`] of the larger of the
    /// untransformed residual and its truncation estimate.
    Exact,
    /// Baseline-subtracted residual grows at least like `ε^`[`SYMMETRY_ORDER`].
    Infinitesimal,
    /// Baseline-subtracted residual grows no faster than `ε^`[`NON_SYMMETRY_ORDER`].
    NotSymmetric,
    Inconclusive,
}

pub const EXACT_RATIO: f64 = 2.0;
pub const SYMMETRY_ORDER: f64 = 1.8;
pub const NON_SYMMETRY_ORDER: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceFit {
    pub equation: String,
    pub map_order: MapOrder,
    pub generator: String,
    pub epsilons: Vec<f64>,
    /// Sup residual of the untransformed field on the common sub-grid.
    pub baseline: f64,
    /// Truncation estimate of the untransformed field on the same sub-grid.
    pub truncation: f64,
    /// Sup residual of each transformed field.
    pub residuals: Vec<f64>,
    /// Sup over nodes of `|residual(ε) − residual(0)|`.
    pub excess: Vec<f64>,
    /// Least-squares slope of `log excess` against `log |ε|`.
    pub fitted_order: f64,
    /// `max residual / max(baseline, truncation)`.
    pub max_ratio: f64,
    pub verdict: Verdict,
}

impl InvarianceFit {
    pub fn is_symmetry(&self) -> bool {
        matches!(self.verdict, Verdict::Exact | Verdict::Infinitesimal)
    }
}

/// Transform `sol` by `exp(ε g)` for each `ε`, evaluate the residual of
/// `kind` on a common admissible sub-grid and fit the growth of the
/// baseline-subtracted residual in `ε`.
pub fn invariance_residual(kind: &PdeKind, sol: &FieldHistory, g: &SymmetryGenerator, epsilons: &[f64]) -> Result<InvarianceFit> {
    invariance_residual_with(kind, sol, g, epsilons, MapOrder::Exact)
}

/// [`invariance_residual`] with a choice of point map.
pub fn invariance_residual_with(
    kind: &PdeKind,
    sol: &FieldHistory,
    g: &SymmetryGenerator,
    epsilons: &[f64],
    order: MapOrder,
) -> Result<InvarianceFit> {
    if epsilons.len() < 2 || epsilons.iter().any(|e| *e == 0.0 || !e.is_finite()) {
        return Err(Error::Parameter("need at least two finite non-zero epsilons".into()));
    }
    let elements: Vec<GroupElement> = epsilons.iter().map(|e| GroupElement::new(g.clone(), *e)).collect();
    let (i0, i1, n0, n1) = admissible_subgrid_with(sol.grid(), &elements, order)?;
    let target = sol.grid().sub_grid(i0, i1, n0, n1)?;
    let base = sol.restrict(i0, i1, n0, n1)?;
    let base_res = residual(kind, &base)?;
    let baseline = crate::solvers::field_sup(&base_res);
    let truncation = crate::solvers::truncation_estimate(kind, &base)?;
    let reference = baseline.max(truncation);
    let mut residuals = Vec::new();
    let mut excess = Vec::new();
    for el in &elements {
        let moved = transform_solution_with(sol, el, &target, order)?;
        let res = residual(kind, &moved)?;
        residuals.push(crate::solvers::field_sup(&res));
        let diff = res.real_values().iter().zip(base_res.real_values()).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        excess.push(diff);
    }
    let hs: Vec<f64> = epsilons.iter().map(|e| e.abs()).collect();
    let fitted_order = if excess.iter().all(|e| *e > 0.0) { fitted_order(&hs, &excess) } else { f64::NAN };
    let max_ratio = residuals.iter().fold(0.0f64, |m, r| m.max(*r)) / reference.max(f64::MIN_POSITIVE);
    let verdict = if max_ratio <= EXACT_RATIO {
        Verdict::Exact
    } else if fitted_order >= SYMMETRY_ORDER {
        Verdict::Infinitesimal
    } else if fitted_order <= NON_SYMMETRY_ORDER {
        Verdict::NotSymmetric
    } else {
        Verdict::Inconclusive
    };
    Ok(InvarianceFit {
        equation: kind.name().to_string(),
        map_order: order,
        generator: format!("{}: {}", g.label, g),
        epsilons: epsilons.to_vec(),
        baseline,
        truncation,
        residuals,
        excess,
        fitted_order,
        max_ratio,
        verdict,
    })
}

/// Distinct labels of a set of generators, used by reports.
pub fn labels(gens: &[SymmetryGenerator]) -> BTreeSet<String> {
    gens.iter().map(|g| g.label.clone()).collect()
}
