//! Finite fields `F_q` built as a tower of quadratic extensions
//! `F_{q'} ⊂ F_{q'}(α₁) ⊂ … ⊂ F_{q'}(α₁,…,α_L)` over a base field `F_{q'} = F_{p^{r₀}}`.
//!
//! Elements are stored as their canonical index: the coordinates of the element over
//! `F_p` with respect to the product basis `β^j · Π α_i^{e_i}` read as base-`p` digits,
//! least significant digit first. An element therefore lies in the level-`i` subfield
//! exactly when its index is below `|F_{q'}(α₁,…,α_i)|`, and the index order is the
//! canonical enumeration order used by the dense backend.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("{0} is not a prime power")]
    InvalidPrimePower(u64),
    #[error("field order p^{degree} with p = {prime} does not fit in 128 bits")]
    TooLarge { prime: u32, degree: usize },
    #[error("no irreducible polynomial found for level {0}")]
    NoIrreducible(usize),
    #[error("inversion of zero")]
    InverseOfZero,
    #[error("element index {index} is not in a field of order {order} (tower mismatch?)")]
    OutOfRange { index: u128, order: u128 },
    #[error("invalid tower description: {0}")]
    InvalidDescription(String),
    #[error("cannot parse field element {0:?}")]
    Parse(String),
}

/// Element of a finite field, identified by its canonical index.
///
/// The owning [`FieldTower`] is passed alongside for every operation; an index that is
/// out of range for a tower is reported as [`FieldError::OutOfRange`].
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldElem(u128);

impl FieldElem {
    pub const ZERO: FieldElem = FieldElem(0);
    pub const ONE: FieldElem = FieldElem(1);

    pub const fn from_index(index: u128) -> Self {
        FieldElem(index)
    }

    pub const fn index(self) -> u128 {
        self.0
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }
}

/// Element of the prime field `F_p`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrimeElem {
    value: u32,
    prime: u32,
}

impl PrimeElem {
    pub fn new(value: u64, prime: u32) -> Self {
        PrimeElem { value: (value % prime as u64) as u32, prime }
    }

    pub fn zero(prime: u32) -> Self {
        PrimeElem { value: 0, prime }
    }

    pub fn value(self) -> u32 {
        self.value
    }

    pub fn prime(self) -> u32 {
        self.prime
    }

    pub fn is_zero(self) -> bool {
        self.value == 0
    }

    pub fn add(self, other: PrimeElem) -> PrimeElem {
        debug_assert_eq!(self.prime, other.prime);
        PrimeElem::new(self.value as u64 + other.value as u64, self.prime)
    }

    pub fn neg(self) -> PrimeElem {
        PrimeElem::new((self.prime - self.value) as u64, self.prime)
    }

    pub fn mul(self, other: PrimeElem) -> PrimeElem {
        PrimeElem::new(self.value as u64 * other.value as u64, self.prime)
    }
}

impl fmt::Display for PrimeElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Mul,
    Inv,
    Neg,
}

/// Monic quadratic `x² + c1·x + c0` over the previous level.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
struct Quadratic {
    c0: u128,
    c1: u128,
}

/// Plain-text record of a tower: enough to rebuild it bit-exactly.
///
/// Polynomials are coefficient sequences, constant term first, leading `1` included.
/// Level coefficients are elements of the previous level written as coordinate strings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerDescription {
    pub prime: u32,
    pub base_degree: usize,
    pub base_modulus: Vec<u32>,
    pub levels: Vec<Vec<String>>,
}

const TABLE_LIMIT: u128 = 256;

struct Tables {
    mul: Vec<u8>,
    add: Vec<u8>,
    inv: Vec<u8>,
}

struct Inner {
    p: u32,
    base_degree: usize,
    base_modulus: Vec<u32>,
    levels: Vec<Quadratic>,
    /// `sizes[i]` is the order of the level-`i` field; `sizes[0] = q'`.
    sizes: Vec<u128>,
    /// `F_p`-trace of each base basis element `β^j`.
    base_trace: Vec<u32>,
    degree: usize,
    tables: Option<Tables>,
}

/// A finite field `F_q` presented as a chain of quadratic extensions of `F_{q'}`.
///
/// Cheap to clone; immutable and shareable across threads.
#[derive(Clone)]
pub struct FieldTower {
    inner: Arc<Inner>,
}

impl PartialEq for FieldTower {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.p == other.inner.p
                && self.inner.base_modulus == other.inner.base_modulus
                && self.inner.levels == other.inner.levels)
    }
}

impl Eq for FieldTower {}

impl fmt::Debug for FieldTower {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "FieldTower(p={}, q'=p^{}, L={}, q=p^{})",
            self.inner.p,
            self.inner.base_degree,
            self.inner.levels.len(),
            self.inner.degree
        )
    }
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// Splits a prime power into `(p, r)`.
pub fn prime_power_parts(q: u64) -> Result<(u32, usize), FieldError> {
    if q < 2 {
        return Err(FieldError::InvalidPrimePower(q));
    }
    let mut p = 2;
    while q % p != 0 {
        p += 1;
    }
    let mut rest = q;
    let mut r = 0;
    while rest % p == 0 {
        rest /= p;
        r += 1;
    }
    if rest != 1 || p > u32::MAX as u64 {
        return Err(FieldError::InvalidPrimePower(q));
    }
    Ok((p as u32, r))
}

fn checked_order(p: u32, degree: usize) -> Option<u128> {
    let mut acc: u128 = 1;
    for _ in 0..degree {
        acc = acc.checked_mul(p as u128)?;
    }
    Some(acc)
}

// ---- polynomial helpers over F_p (coefficients low → high) ----

fn poly_rem(mut a: Vec<u32>, m: &[u32], p: u32) -> Vec<u32> {
    let dm = m.len() - 1;
    let lead_inv = pow_mod(m[dm] as u64, p as u64 - 2, p as u64);
    while a.len() > dm {
        let top = *a.last().unwrap() as u64;
        if top != 0 {
            let factor = top * lead_inv % p as u64;
            let shift = a.len() - 1 - dm;
            for (i, &c) in m.iter().enumerate() {
                let sub = factor * c as u64 % p as u64;
                let cur = a[shift + i] as u64;
                a[shift + i] = ((cur + p as u64 - sub) % p as u64) as u32;
            }
        }
        a.pop();
    }
    a
}

fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * b % m;
        }
        b = b * b % m;
        e >>= 1;
    }
    acc
}

fn poly_is_irreducible(f: &[u32], p: u32) -> bool {
    let deg = f.len() - 1;
    if deg == 1 {
        return true;
    }
    // Trial division by every monic polynomial of degree 1..=deg/2.
    for d in 1..=deg / 2 {
        let count = (p as u64).pow(d as u32);
        for v in 0..count {
            let mut divisor = Vec::with_capacity(d + 1);
            let mut x = v;
            for _ in 0..d {
                divisor.push((x % p as u64) as u32);
                x /= p as u64;
            }
            divisor.push(1);
            if poly_rem(f.to_vec(), &divisor, p).iter().all(|&c| c == 0) {
                return false;
            }
        }
    }
    true
}

fn find_base_modulus(p: u32, degree: usize) -> Option<Vec<u32>> {
    if degree == 1 {
        return Some(vec![0, 1]);
    }
    let count = (p as u64).checked_pow(degree as u32)?;
    (0..count).find_map(|v| {
        let mut f = Vec::with_capacity(degree + 1);
        let mut x = v;
        for _ in 0..degree {
            f.push((x % p as u64) as u32);
            x /= p as u64;
        }
        f.push(1);
        poly_is_irreducible(&f, p).then_some(f)
    })
}

impl FieldTower {
    /// Builds `F_{q'} ⊂ F_{q'}(α₁) ⊂ … ⊂ F_{q'}(α₁,…,α_L)` with `L = chain_length`
    /// degree-2 steps. Defining polynomials are the first irreducible candidates in
    /// canonical coefficient order.
    pub fn build(base_order: u64, chain_length: usize) -> Result<Self, FieldError> {
        let (p, r0) = prime_power_parts(base_order)?;
        let modulus = find_base_modulus(p, r0).ok_or(FieldError::NoIrreducible(0))?;
        let mut inner = Inner::new(p, r0, modulus, Vec::new())?;
        for level in 1..=chain_length {
            inner.check_size(level)?;
            let quad = inner
                .find_quadratic(level)
                .ok_or(FieldError::NoIrreducible(level))?;
            inner = Inner::new(p, r0, inner.base_modulus.clone(), {
                let mut l = inner.levels.clone();
                l.push(quad);
                l
            })?;
        }
        Ok(FieldTower { inner: Arc::new(inner) })
    }

    /// Small field `F_{p^r}` with no extension chain.
    pub fn prime_power(q: u64) -> Result<Self, FieldError> {
        Self::build(q, 0)
    }

    pub fn from_description(desc: &TowerDescription) -> Result<Self, FieldError> {
        let p = desc.prime;
        if !is_prime(p as u64) {
            return Err(FieldError::InvalidDescription(format!("{p} is not prime")));
        }
        let m = &desc.base_modulus;
        if m.len() != desc.base_degree + 1 || m.last() != Some(&1) || m.iter().any(|&c| c >= p) {
            return Err(FieldError::InvalidDescription("malformed base modulus".into()));
        }
        if !poly_is_irreducible(m, p) {
            return Err(FieldError::InvalidDescription("base modulus is reducible".into()));
        }
        let mut inner = Inner::new(p, desc.base_degree, m.clone(), Vec::new())?;
        for (i, coeffs) in desc.levels.iter().enumerate() {
            let level = i + 1;
            inner.check_size(level)?;
            if coeffs.len() != 3 || coeffs[2] != "1" {
                return Err(FieldError::InvalidDescription(format!(
                    "level {level} polynomial must be monic quadratic"
                )));
            }
            let bound = inner.sizes[level - 1];
            let c0 = inner.parse_coords(&coeffs[0])?.0;
            let c1 = inner.parse_coords(&coeffs[1])?.0;
            if c0 >= bound || c1 >= bound {
                return Err(FieldError::InvalidDescription(format!(
                    "level {level} coefficient outside previous level"
                )));
            }
            let quad = Quadratic { c0, c1 };
            if !inner.quadratic_is_irreducible(level, quad) {
                return Err(FieldError::InvalidDescription(format!(
                    "level {level} polynomial is reducible"
                )));
            }
            let mut levels = inner.levels.clone();
            levels.push(quad);
            inner = Inner::new(p, desc.base_degree, m.clone(), levels)?;
        }
        Ok(FieldTower { inner: Arc::new(inner) })
    }

    pub fn description(&self) -> TowerDescription {
        let inner = &self.inner;
        let levels = inner
            .levels
            .iter()
            .enumerate()
            .map(|(i, quad)| {
                let width = inner.base_degree << i;
                vec![
                    inner.format_coords(quad.c0, width),
                    inner.format_coords(quad.c1, width),
                    "1".to_string(),
                ]
            })
            .collect();
        TowerDescription {
            prime: inner.p,
            base_degree: inner.base_degree,
            base_modulus: inner.base_modulus.clone(),
            levels,
        }
    }

    pub fn prime(&self) -> u32 {
        self.inner.p
    }

    pub fn base_degree(&self) -> usize {
        self.inner.base_degree
    }

    pub fn base_order(&self) -> u128 {
        self.inner.sizes[0]
    }

    pub fn chain_length(&self) -> usize {
        self.inner.levels.len()
    }

    /// `r = log_p q`.
    pub fn degree(&self) -> usize {
        self.inner.degree
    }

    pub fn order(&self) -> u128 {
        *self.inner.sizes.last().unwrap()
    }

    /// `log₂ q`.
    pub fn log2_order(&self) -> f64 {
        self.inner.degree as f64 * (self.inner.p as f64).log2()
    }

    /// Order of the level-`level` subfield `F_{q'}(α₁,…,α_level)`.
    pub fn level_order(&self, level: usize) -> u128 {
        self.inner.sizes[level]
    }

    pub fn zero(&self) -> FieldElem {
        FieldElem::ZERO
    }

    pub fn one(&self) -> FieldElem {
        FieldElem::ONE
    }

    /// `α_i` of the tower; `α_0 = 1`.
    pub fn generator(&self, i: usize) -> FieldElem {
        assert!(i <= self.chain_length(), "generator α_{i} beyond chain length");
        if i == 0 {
            FieldElem::ONE
        } else {
            FieldElem(self.inner.sizes[i - 1])
        }
    }

    /// Generator `β` of the base field over `F_p` (equals `1` when `q' = p`).
    pub fn base_generator(&self) -> FieldElem {
        if self.inner.base_degree == 1 {
            FieldElem::ONE
        } else {
            FieldElem(self.inner.p as u128)
        }
    }

    pub fn elem(&self, index: u128) -> Result<FieldElem, FieldError> {
        if index < self.order() {
            Ok(FieldElem(index))
        } else {
            Err(FieldError::OutOfRange { index, order: self.order() })
        }
    }

    pub fn from_prime(&self, value: u64) -> FieldElem {
        FieldElem((value % self.inner.p as u64) as u128)
    }

    pub fn from_coords(&self, coords: &[u32]) -> Result<FieldElem, FieldError> {
        if coords.len() > self.degree() || coords.iter().any(|&c| c >= self.inner.p) {
            return Err(FieldError::Parse(format!("{coords:?}")));
        }
        Ok(FieldElem(self.inner.from_digits(coords)))
    }

    /// Coordinates over `F_p` in the product basis (length `r`).
    pub fn coords(&self, x: FieldElem) -> Vec<u32> {
        self.inner.digits(x.0, self.degree())
    }

    /// All elements in canonical order. Intended for small fields.
    pub fn elements(&self) -> impl Iterator<Item = FieldElem> {
        let q = self.order();
        (0..q).map(FieldElem)
    }

    pub fn contains(&self, x: FieldElem) -> bool {
        x.0 < self.order()
    }

    pub fn add(&self, a: FieldElem, b: FieldElem) -> FieldElem {
        FieldElem(self.inner.add(a.0, b.0))
    }

    pub fn sub(&self, a: FieldElem, b: FieldElem) -> FieldElem {
        FieldElem(self.inner.add(a.0, self.inner.neg(b.0)))
    }

    pub fn neg(&self, a: FieldElem) -> FieldElem {
        FieldElem(self.inner.neg(a.0))
    }

    pub fn mul(&self, a: FieldElem, b: FieldElem) -> FieldElem {
        FieldElem(self.inner.mul(a.0, b.0))
    }

    pub fn inv(&self, a: FieldElem) -> Result<FieldElem, FieldError> {
        if a.is_zero() {
            return Err(FieldError::InverseOfZero);
        }
        Ok(FieldElem(self.inner.inv(a.0)))
    }

    pub fn div(&self, a: FieldElem, b: FieldElem) -> Result<FieldElem, FieldError> {
        Ok(self.mul(a, self.inv(b)?))
    }

    pub fn pow(&self, a: FieldElem, e: u128) -> FieldElem {
        FieldElem(self.inner.pow(self.chain_length(), a.0, e))
    }

    /// Checked arithmetic entry point. `b` is ignored for unary operations.
    pub fn arith(&self, op: ArithOp, a: FieldElem, b: FieldElem) -> Result<FieldElem, FieldError> {
        for x in [a, b] {
            if !self.contains(x) {
                return Err(FieldError::OutOfRange { index: x.0, order: self.order() });
            }
        }
        match op {
            ArithOp::Add => Ok(self.add(a, b)),
            ArithOp::Mul => Ok(self.mul(a, b)),
            ArithOp::Neg => Ok(self.neg(a)),
            ArithOp::Inv => self.inv(a),
        }
    }

    /// `tr x`: trace of multiplication-by-`x` over `F_p`.
    pub fn trace(&self, x: FieldElem) -> PrimeElem {
        PrimeElem::new(self.inner.trace(self.chain_length(), x.0) as u64, self.inner.p)
    }

    /// Smallest `i` with `x ∈ F_{q'}(α₁,…,α_i)`.
    pub fn subfield_level(&self, x: FieldElem) -> usize {
        self.inner.sizes.iter().position(|&s| x.0 < s).expect("element outside tower")
    }

    /// Coordinate-string form: `F_p` coordinates, lowest first, one digit each when
    /// `p ≤ 10`, dot-separated otherwise.
    pub fn format(&self, x: FieldElem) -> String {
        self.inner.format_coords(x.0, self.degree())
    }

    pub fn parse(&self, s: &str) -> Result<FieldElem, FieldError> {
        let (value, width) = self.inner.parse_coords(s)?;
        if width > self.degree() {
            return Err(FieldError::Parse(s.to_string()));
        }
        Ok(FieldElem(value))
    }
}

impl Inner {
    fn new(p: u32, base_degree: usize, base_modulus: Vec<u32>, levels: Vec<Quadratic>) -> Result<Self, FieldError> {
        let degree = base_degree << levels.len();
        let mut sizes = Vec::with_capacity(levels.len() + 1);
        for i in 0..=levels.len() {
            sizes.push(
                checked_order(p, base_degree << i)
                    .filter(|&s| s < u128::MAX)
                    .ok_or(FieldError::TooLarge { prime: p, degree: base_degree << i })?,
            );
        }
        let mut inner = Inner {
            p,
            base_degree,
            base_modulus,
            levels,
            sizes,
            base_trace: Vec::new(),
            degree,
            tables: None,
        };
        inner.base_trace = (0..base_degree).map(|j| inner.base_basis_trace(j)).collect();
        if inner.order() <= TABLE_LIMIT {
            inner.tables = Some(inner.build_tables());
        }
        Ok(inner)
    }

    fn check_size(&self, level: usize) -> Result<(), FieldError> {
        checked_order(self.p, self.base_degree << level)
            .filter(|&s| s < u128::MAX)
            .map(|_| ())
            .ok_or(FieldError::TooLarge { prime: self.p, degree: self.base_degree << level })
    }

    fn order(&self) -> u128 {
        *self.sizes.last().unwrap()
    }

    fn digits(&self, mut x: u128, len: usize) -> Vec<u32> {
        let p = self.p as u128;
        (0..len)
            .map(|_| {
                let d = (x % p) as u32;
                x /= p;
                d
            })
            .collect()
    }

    fn from_digits(&self, digits: &[u32]) -> u128 {
        digits.iter().rev().fold(0u128, |acc, &d| acc * self.p as u128 + d as u128)
    }

    fn format_coords(&self, x: u128, width: usize) -> String {
        let digits = self.digits(x, width.max(1));
        if self.p <= 10 {
            digits.iter().map(|d| char::from_digit(*d, 10).unwrap()).collect()
        } else {
            digits.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(".")
        }
    }

    fn parse_coords(&self, s: &str) -> Result<(u128, usize), FieldError> {
        let err = || FieldError::Parse(s.to_string());
        let digits: Vec<u32> = if self.p <= 10 {
            s.chars().map(|c| c.to_digit(10).ok_or_else(err)).collect::<Result<_, _>>()?
        } else {
            s.split('.').map(|t| t.parse::<u32>().map_err(|_| err())).collect::<Result<_, _>>()?
        };
        if digits.is_empty() || digits.iter().any(|&d| d >= self.p) {
            return Err(err());
        }
        if checked_order(self.p, digits.len()).is_none() {
            return Err(err());
        }
        Ok((self.from_digits(&digits), digits.len()))
    }

    fn add(&self, a: u128, b: u128) -> u128 {
        if self.p == 2 {
            return a ^ b;
        }
        if let Some(t) = &self.tables {
            let q = self.order() as usize;
            return t.add[a as usize * q + b as usize] as u128;
        }
        let p = self.p as u128;
        let (mut a, mut b) = (a, b);
        let mut out = 0u128;
        let mut place = 1u128;
        while a > 0 || b > 0 {
            out += ((a % p + b % p) % p) * place;
            a /= p;
            b /= p;
            place = place.saturating_mul(p);
        }
        out
    }

    fn neg(&self, a: u128) -> u128 {
        if self.p == 2 {
            return a;
        }
        let p = self.p as u128;
        let mut a = a;
        let mut out = 0u128;
        let mut place = 1u128;
        while a > 0 {
            out += ((p - a % p) % p) * place;
            a /= p;
            place = place.saturating_mul(p);
        }
        out
    }

    fn split(&self, level: usize, a: u128) -> (u128, u128) {
        let s = self.sizes[level - 1];
        if self.p == 2 {
            let bits = s.trailing_zeros();
            (a & (s - 1), a >> bits)
        } else {
            (a % s, a / s)
        }
    }

    fn join(&self, level: usize, lo: u128, hi: u128) -> u128 {
        lo + hi * self.sizes[level - 1]
    }

    fn base_mul(&self, a: u128, b: u128) -> u128 {
        let r0 = self.base_degree;
        if r0 == 1 {
            return a * b % self.p as u128;
        }
        if self.p == 2 && r0 < 64 {
            let (a, b) = (a as u64, b as u64);
            let mut prod: u128 = 0;
            for i in 0..r0 {
                if (b >> i) & 1 == 1 {
                    prod ^= (a as u128) << i;
                }
            }
            let modulus: u128 = self
                .base_modulus
                .iter()
                .enumerate()
                .fold(0, |acc, (i, &c)| acc | ((c as u128) << i));
            for i in (r0..2 * r0).rev() {
                if (prod >> i) & 1 == 1 {
                    prod ^= modulus << (i - r0);
                }
            }
            return prod;
        }
        let p = self.p as u64;
        let da = self.digits(a, r0);
        let db = self.digits(b, r0);
        let mut prod = vec![0u32; 2 * r0 - 1];
        for (i, &x) in da.iter().enumerate() {
            for (j, &y) in db.iter().enumerate() {
                prod[i + j] = ((prod[i + j] as u64 + x as u64 * y as u64) % p) as u32;
            }
        }
        let rem = poly_rem(prod, &self.base_modulus, self.p);
        self.from_digits(&rem)
    }

    fn mul(&self, a: u128, b: u128) -> u128 {
        if let Some(t) = &self.tables {
            let q = self.order() as usize;
            return t.mul[a as usize * q + b as usize] as u128;
        }
        self.mul_level(self.levels.len(), a, b)
    }

    /// Product in the level-`level` field, computed recursively through the tower.
    fn mul_level(&self, level: usize, a: u128, b: u128) -> u128 {
        if a == 0 || b == 0 {
            return 0;
        }
        if level == 0 {
            return self.base_mul(a, b);
        }
        let quad = self.levels[level - 1];
        self.quad_mul(level, quad, a, b)
    }

    /// Multiplication in `F[x]/(x² + c1 x + c0)` where `F` is level `level − 1`.
    fn quad_mul(&self, level: usize, quad: Quadratic, a: u128, b: u128) -> u128 {
        let below = level - 1;
        let (a0, a1) = self.split(level, a);
        let (b0, b1) = self.split(level, b);
        let t00 = self.mul_level(below, a0, b0);
        let t11 = self.mul_level(below, a1, b1);
        let mixed = self.mul_level(below, self.add(a0, a1), self.add(b0, b1));
        let cross = self.add(mixed, self.neg(self.add(t00, t11)));
        let lo = self.add(t00, self.neg(self.mul_level(below, quad.c0, t11)));
        let hi = self.add(cross, self.neg(self.mul_level(below, quad.c1, t11)));
        self.join(level, lo, hi)
    }

    fn pow(&self, level: usize, a: u128, mut e: u128) -> u128 {
        let mut base = a;
        let mut acc = 1u128;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul_level(level, acc, base);
            }
            base = self.mul_level(level, base, base);
            e >>= 1;
        }
        acc
    }

    fn inv(&self, a: u128) -> u128 {
        if let Some(t) = &self.tables {
            return t.inv[a as usize] as u128;
        }
        self.inv_level(self.levels.len(), a)
    }

    fn inv_level(&self, level: usize, a: u128) -> u128 {
        if level == 0 {
            return self.pow(0, a, self.sizes[0] - 2);
        }
        let below = level - 1;
        let quad = self.levels[level - 1];
        let (a0, a1) = self.split(level, a);
        // norm(a) = a0² − c1·a0·a1 + c0·a1², conj(a) = (a0 − c1·a1) − a1·α
        let a0a0 = self.mul_level(below, a0, a0);
        let c1a0a1 = self.mul_level(below, quad.c1, self.mul_level(below, a0, a1));
        let c0a1a1 = self.mul_level(below, quad.c0, self.mul_level(below, a1, a1));
        let norm = self.add(self.add(a0a0, self.neg(c1a0a1)), c0a1a1);
        let norm_inv = self.inv_level(below, norm);
        let conj0 = self.add(a0, self.neg(self.mul_level(below, quad.c1, a1)));
        let conj1 = self.neg(a1);
        self.join(
            level,
            self.mul_level(below, conj0, norm_inv),
            self.mul_level(below, conj1, norm_inv),
        )
    }

    fn base_basis_trace(&self, j: usize) -> u32 {
        // Σ_k [coefficient of β^k in β^j · β^k]
        let p = self.p as u128;
        let beta_j = p.pow(j as u32);
        let mut acc = 0u64;
        for k in 0..self.base_degree {
            let prod = self.base_mul(beta_j, p.pow(k as u32));
            acc += self.digits(prod, self.base_degree)[k] as u64;
        }
        (acc % self.p as u64) as u32
    }

    /// `F_p`-trace of a level-`level` element, via `Tr_{K(α)/K}(a0 + a1 α) = 2a0 − c1 a1`.
    fn trace(&self, level: usize, x: u128) -> u32 {
        if level == 0 {
            let d = self.digits(x, self.base_degree);
            let s: u64 = d.iter().zip(&self.base_trace).map(|(&a, &t)| a as u64 * t as u64).sum();
            return (s % self.p as u64) as u32;
        }
        let below = level - 1;
        let quad = self.levels[level - 1];
        let (a0, a1) = self.split(level, x);
        let rel = self.add(self.add(a0, a0), self.neg(self.mul_level(below, quad.c1, a1)));
        self.trace(below, rel)
    }

    fn quadratic_is_irreducible(&self, level: usize, quad: Quadratic) -> bool {
        let below = level - 1;
        if self.p == 2 {
            // x² + c1 x + c0 with c1 ≠ 0 is irreducible iff Tr(c0 / c1²) = 1
            if quad.c1 == 0 {
                return false;
            }
            let c1_sq = self.mul_level(below, quad.c1, quad.c1);
            let ratio = self.mul_level(below, quad.c0, self.inv_level(below, c1_sq));
            return self.trace(below, ratio) == 1;
        }
        // f is irreducible iff gcd(x^Q − x, f) = 1 with Q the order of the level below.
        let below_order = self.sizes[below];
        let mut acc = (1u128, 0u128);
        let mut base = (0u128, 1u128);
        let mut e = below_order;
        let mul = |x: (u128, u128), y: (u128, u128)| {
            let joined = self.quad_mul(level, quad, self.join(level, x.0, x.1), self.join(level, y.0, y.1));
            self.split(level, joined)
        };
        while e > 0 {
            if e & 1 == 1 {
                acc = mul(acc, base);
            }
            base = mul(base, base);
            e >>= 1;
        }
        let (u0, u1) = (acc.0, self.add(acc.1, self.neg(1)));
        if u0 == 0 && u1 == 0 {
            return false;
        }
        if u1 == 0 {
            return true;
        }
        // single candidate root −u0/u1
        let root = self.mul_level(below, self.neg(u0), self.inv_level(below, u1));
        let value = self.add(
            self.add(self.mul_level(below, root, root), self.mul_level(below, quad.c1, root)),
            quad.c0,
        );
        value != 0
    }

    fn find_quadratic(&self, level: usize) -> Option<Quadratic> {
        let q_below = self.sizes[level - 1];
        // x² + c0 always has a root in characteristic 2
        let first_c1 = if self.p == 2 { 1 } else { 0 };
        // c0 runs over coordinate-reversed indices so high basis elements come first
        let width = self.base_degree << (level - 1);
        (first_c1..q_below)
            .flat_map(|c1| (0..q_below).map(move |j| (c1, j)))
            .map(|(c1, j)| {
                let mut d = self.digits(j, width);
                d.reverse();
                Quadratic { c0: self.from_digits(&d), c1 }
            })
            .find(|&quad| self.quadratic_is_irreducible(level, quad))
    }

    fn build_tables(&self) -> Tables {
        let q = self.order() as usize;
        let top = self.levels.len();
        let mut mul = vec![0u8; q * q];
        let mut add = vec![0u8; q * q];
        let mut inv = vec![0u8; q];
        for a in 0..q {
            for b in 0..q {
                mul[a * q + b] = self.mul_level(top, a as u128, b as u128) as u8;
                if self.p != 2 {
                    let mut aa = a as u128;
                    let mut bb = b as u128;
                    let p = self.p as u128;
                    let mut out = 0u128;
                    let mut place = 1u128;
                    while aa > 0 || bb > 0 {
                        out += ((aa % p + bb % p) % p) * place;
                        aa /= p;
                        bb /= p;
                        place *= p;
                    }
                    add[a * q + b] = out as u8;
                }
            }
        }
        for a in 1..q {
            inv[a] = (1..q).find(|&b| mul[a * q + b] == 1).unwrap_or(0) as u8;
        }
        Tables { mul, add, inv }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Matrix trace of multiplication-by-x over F_p in the coordinate basis.
    fn matrix_trace(tower: &FieldTower, x: FieldElem) -> u32 {
        let r = tower.degree();
        let p = tower.prime() as u128;
        let mut acc = 0u64;
        for k in 0..r {
            let basis = FieldElem::from_index(p.pow(k as u32));
            acc += tower.coords(tower.mul(x, basis))[k] as u64;
        }
        (acc % tower.prime() as u64) as u32
    }

    fn has_root_exhaustive(tower: &FieldTower, level: usize, c0: FieldElem, c1: FieldElem) -> bool {
        (0..tower.level_order(level - 1)).map(FieldElem::from_index).any(|x| {
            let v = tower.add(tower.add(tower.mul(x, x), tower.mul(c1, x)), c0);
            v.is_zero()
        })
    }

    #[test]
    fn empty_chain_over_two() {
        let t = FieldTower::build(2, 0).unwrap();
        assert_eq!(t.order(), 2);
        assert_eq!(t.chain_length(), 0);
    }

    #[test]
    fn tower_2_2_is_f16_with_irreducible_levels() {
        let t = FieldTower::build(2, 2).unwrap();
        assert_eq!(t.order(), 16);
        assert_eq!(t.level_order(1), 4);
        for (i, rec) in t.description().levels.iter().enumerate() {
            let c0 = t.parse(&rec[0]).unwrap();
            let c1 = t.parse(&rec[1]).unwrap();
            assert!(!has_root_exhaustive(&t, i + 1, c0, c1));
        }
    }

    #[test]
    fn tower_3_1_uses_x2_plus_1() {
        let t = FieldTower::build(3, 1).unwrap();
        assert_eq!(t.order(), 9);
        let d = t.description();
        assert_eq!(d.levels[0], vec!["1".to_string(), "0".to_string(), "1".to_string()]);
        let a = t.generator(1);
        assert!(!has_root_exhaustive(&t, 1, FieldElem::ONE, FieldElem::ZERO));
        assert_eq!(t.mul(a, a), t.neg(FieldElem::ONE));
    }

    #[test]
    fn invalid_prime_power_is_rejected() {
        assert_eq!(FieldTower::build(6, 1).unwrap_err(), FieldError::InvalidPrimePower(6));
        assert!(FieldTower::build(1, 0).is_err());
    }

    #[test]
    fn f4_arithmetic_examples() {
        let t = FieldTower::build(2, 1).unwrap();
        let a = t.generator(1);
        assert_eq!(t.add(a, a), FieldElem::ZERO);
        assert_eq!(t.mul(a, a), t.add(a, FieldElem::ONE));
        // multiplication-table oracle
        let inv = t.elements().find(|&y| t.mul(a, y) == FieldElem::ONE).unwrap();
        assert_eq!(inv, t.add(a, FieldElem::ONE));
        assert_eq!(t.inv(a).unwrap(), inv);
        assert_eq!(t.inv(FieldElem::ZERO), Err(FieldError::InverseOfZero));
        for x in t.elements() {
            assert_eq!(t.mul(FieldElem::ONE, x), x);
        }
    }

    #[test]
    fn arith_rejects_out_of_range() {
        let t = FieldTower::build(2, 1).unwrap();
        let err = t.arith(ArithOp::Add, FieldElem::from_index(7), FieldElem::ONE).unwrap_err();
        assert!(matches!(err, FieldError::OutOfRange { .. }));
        assert_eq!(t.arith(ArithOp::Inv, FieldElem::ZERO, FieldElem::ZERO), Err(FieldError::InverseOfZero));
        assert_eq!(
            t.arith(ArithOp::Neg, FieldElem::ONE, FieldElem::ZERO).unwrap(),
            FieldElem::ONE
        );
    }

    fn check_axioms(t: &FieldTower) {
        let elems: Vec<_> = t.elements().collect();
        for &a in &elems {
            assert_eq!(t.add(a, t.neg(a)), FieldElem::ZERO);
            if !a.is_zero() {
                assert_eq!(t.mul(a, t.inv(a).unwrap()), FieldElem::ONE);
            }
            for &b in &elems {
                assert_eq!(t.add(a, b), t.add(b, a));
                assert_eq!(t.mul(a, b), t.mul(b, a));
                for &c in &elems {
                    assert_eq!(t.mul(a, t.add(b, c)), t.add(t.mul(a, b), t.mul(a, c)));
                    assert_eq!(t.mul(t.mul(a, b), c), t.mul(a, t.mul(b, c)));
                }
            }
        }
    }

    #[test]
    fn field_axioms_exhaustive_small() {
        for (q, l) in [(2, 0), (3, 0), (2, 1), (3, 1), (2, 2), (8, 0), (4, 1), (5, 0), (9, 0)] {
            check_axioms(&FieldTower::build(q, l).unwrap());
        }
    }

    #[test]
    fn untabled_arithmetic_matches_axioms_on_f16_subsample() {
        // q = 2^16 exercises the recursive path (no tables).
        let t = FieldTower::build(2, 4).unwrap();
        let samples: Vec<_> = [0u128, 1, 2, 3, 77, 255, 256, 4097, 40000, 65535]
            .into_iter()
            .map(FieldElem::from_index)
            .collect();
        for &a in &samples {
            if !a.is_zero() {
                assert_eq!(t.mul(a, t.inv(a).unwrap()), FieldElem::ONE);
            }
            for &b in &samples {
                for &c in &samples {
                    assert_eq!(t.mul(a, t.add(b, c)), t.add(t.mul(a, b), t.mul(a, c)));
                    assert_eq!(t.mul(t.mul(a, b), c), t.mul(a, t.mul(b, c)));
                }
            }
        }
        // Fermat: x^(q-1) = 1
        assert_eq!(t.pow(FieldElem::from_index(12345), 65535), FieldElem::ONE);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn deep_tower_is_a_field(a in 0u128..1 << 32, b in 0u128..1 << 32, c in 0u128..1 << 32) {
            let t = FieldTower::build(2, 5).unwrap();
            let (a, b, c) = (FieldElem::from_index(a), FieldElem::from_index(b), FieldElem::from_index(c));
            proptest::prop_assert_eq!(t.mul(a, t.add(b, c)), t.add(t.mul(a, b), t.mul(a, c)));
            proptest::prop_assert_eq!(t.mul(t.mul(a, b), c), t.mul(a, t.mul(b, c)));
            proptest::prop_assert_eq!(t.mul(a, b), t.mul(b, a));
            proptest::prop_assert_eq!(t.trace(t.add(a, b)), t.trace(a).add(t.trace(b)));
            // Frobenius fixes every element: x^q = x
            proptest::prop_assert_eq!(t.pow(a, t.order()), a);
            if !a.is_zero() {
                proptest::prop_assert_eq!(t.mul(a, t.inv(a).unwrap()), FieldElem::ONE);
            }
        }
    }

    #[test]
    fn trace_examples_f4() {
        let t = FieldTower::build(2, 1).unwrap();
        assert_eq!(t.trace(FieldElem::ONE).value(), 0);
        assert_eq!(t.trace(t.generator(1)).value(), 1);
        assert_eq!(t.trace(FieldElem::ZERO).value(), 0);
    }

    #[test]
    fn trace_matches_matrix_trace() {
        for (q, l) in [(2, 1), (2, 2), (3, 1), (8, 0), (4, 1), (9, 0), (2, 3)] {
            let t = FieldTower::build(q, l).unwrap();
            for x in t.elements() {
                assert_eq!(t.trace(x).value(), matrix_trace(&t, x), "q={q} l={l} x={x:?}");
            }
        }
    }

    #[test]
    fn trace_is_additive_and_nondegenerate() {
        for (q, l) in [(2, 2), (3, 1), (8, 0)] {
            let t = FieldTower::build(q, l).unwrap();
            let elems: Vec<_> = t.elements().collect();
            for &x in &elems {
                for &y in &elems {
                    assert_eq!(t.trace(t.add(x, y)), t.trace(x).add(t.trace(y)));
                }
            }
            let mut functions = std::collections::HashSet::new();
            for &b in &elems {
                let f: Vec<u32> = elems.iter().map(|&j| t.trace(t.mul(b, j)).value()).collect();
                functions.insert(f);
            }
            assert_eq!(functions.len() as u128, t.order());
        }
    }

    #[test]
    fn subfield_level_examples() {
        let t = FieldTower::build(2, 2).unwrap();
        assert_eq!(t.subfield_level(FieldElem::ONE), 0);
        assert_eq!(t.subfield_level(t.generator(1)), 1);
        let x = t.add(t.generator(1), t.generator(2));
        assert_eq!(t.subfield_level(x), 2);
    }

    /// Closure of a generating set under + and ×.
    fn generated_subfield(t: &FieldTower, gens: &[FieldElem]) -> std::collections::BTreeSet<FieldElem> {
        let mut set: std::collections::BTreeSet<_> = gens.iter().copied().collect();
        set.insert(FieldElem::ZERO);
        set.insert(FieldElem::ONE);
        loop {
            let cur: Vec<_> = set.iter().copied().collect();
            let before = set.len();
            for &a in &cur {
                for &b in &cur {
                    set.insert(t.add(a, b));
                    set.insert(t.mul(a, b));
                }
            }
            if set.len() == before {
                return set;
            }
        }
    }

    #[test]
    fn subfield_level_matches_enumerated_subfields() {
        let t = FieldTower::build(2, 2).unwrap();
        let f2 = generated_subfield(&t, &[]);
        let f4 = generated_subfield(&t, &[t.generator(1)]);
        let f16 = generated_subfield(&t, &[t.generator(1), t.generator(2)]);
        assert_eq!((f2.len(), f4.len(), f16.len()), (2, 4, 16));
        for x in t.elements() {
            let oracle = if f2.contains(&x) {
                0
            } else if f4.contains(&x) {
                1
            } else {
                2
            };
            assert_eq!(t.subfield_level(x), oracle);
        }
        // α_i is new at level i
        for i in 1..=2 {
            assert_eq!(t.subfield_level(t.generator(i)), i);
        }
    }

    #[test]
    fn description_round_trips_and_rejects_reducible() {
        let t = FieldTower::build(4, 2).unwrap();
        let d = t.description();
        let back = FieldTower::from_description(&d).unwrap();
        assert_eq!(back, t);
        let mut bad = d.clone();
        bad.levels[0][0] = "00".into();
        bad.levels[0][1] = "00".into();
        assert!(FieldTower::from_description(&bad).is_err());
    }

    #[test]
    fn deep_tower_for_lemma_sizes() {
        let t = FieldTower::build(2, 5).unwrap();
        assert_eq!(t.order(), 1u128 << 32);
        let a5 = t.generator(5);
        assert_eq!(t.subfield_level(a5), 5);
        assert_eq!(t.mul(a5, t.inv(a5).unwrap()), FieldElem::ONE);
        assert!(FieldTower::build(2, 7).is_err());
    }

    #[test]
    fn parse_format_round_trip() {
        let t = FieldTower::build(2, 2).unwrap();
        for x in t.elements() {
            assert_eq!(t.parse(&t.format(x)).unwrap(), x);
        }
        let t11 = FieldTower::build(11, 0).unwrap();
        assert_eq!(t11.format(FieldElem::from_index(10)), "10");
        assert!(t.parse("012").is_err());
    }
}
