//! Symplectic geometry on `F_q^{2n}`: the form `⟨x, Jy⟩`, self-orthogonal subspaces,
//! J-orthogonal complements, quotient cosets, and the basis families used by the
//! retrieval protocol.

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finite_field::{FieldElem, FieldError, FieldTower, PrimeElem};
use crate::linalg::{dot, vec_add, vec_neg, vec_scale, FqMatrix};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SymplecticError {
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("parameters (n, t) = ({n}, {t}) must satisfy n/2 <= t < n")]
    InvalidParameters { n: usize, t: usize },
    #[error("tower chain length {available} is shorter than the required {needed}")]
    TowerTooShort { needed: usize, available: usize },
    #[error("matrix {0} is singular")]
    Singular(&'static str),
    #[error("basis search exhausted after {attempts} attempts")]
    SearchExhausted { attempts: usize },
    #[error("vectors are linearly dependent")]
    Dependent,
    #[error("verification failed: {0}")]
    VerificationFailed(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Vector `w = (a, b) ∈ F_q^{2n}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SympVector(Vec<FieldElem>);

impl SympVector {
    pub fn new(coords: Vec<FieldElem>) -> Result<Self, SymplecticError> {
        if coords.is_empty() || coords.len() % 2 != 0 {
            return Err(SymplecticError::LengthMismatch {
                expected: coords.len() + coords.len() % 2,
                found: coords.len(),
            });
        }
        Ok(SympVector(coords))
    }

    pub fn from_parts(a: &[FieldElem], b: &[FieldElem]) -> Self {
        assert_eq!(a.len(), b.len(), "a and b parts differ in length");
        SympVector([a, b].concat())
    }

    pub fn from_indices(coords: &[u128]) -> Result<Self, SymplecticError> {
        Self::new(coords.iter().map(|&x| FieldElem::from_index(x)).collect())
    }

    pub fn zero(n: usize) -> Self {
        SympVector(vec![FieldElem::ZERO; 2 * n])
    }

    pub fn unit(n: usize, i: usize) -> Self {
        let mut v = Self::zero(n);
        v.0[i] = FieldElem::ONE;
        v
    }

    pub fn n(&self) -> usize {
        self.0.len() / 2
    }

    pub fn coords(&self) -> &[FieldElem] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<FieldElem> {
        self.0
    }

    pub fn a_part(&self) -> &[FieldElem] {
        &self.0[..self.n()]
    }

    pub fn b_part(&self) -> &[FieldElem] {
        &self.0[self.n()..]
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|x| x.is_zero())
    }

    pub fn add(&self, f: &FieldTower, other: &SympVector) -> SympVector {
        assert_eq!(self.0.len(), other.0.len(), "vector length mismatch");
        SympVector(vec_add(f, &self.0, &other.0))
    }

    pub fn sub(&self, f: &FieldTower, other: &SympVector) -> SympVector {
        self.add(f, &other.neg(f))
    }

    pub fn neg(&self, f: &FieldTower) -> SympVector {
        SympVector(vec_neg(f, &self.0))
    }

    pub fn scale(&self, f: &FieldTower, c: FieldElem) -> SympVector {
        SympVector(vec_scale(f, c, &self.0))
    }

    pub fn format(&self, f: &FieldTower) -> Vec<String> {
        self.0.iter().map(|&x| f.format(x)).collect()
    }

    pub fn parse(f: &FieldTower, coords: &[String]) -> Result<Self, SymplecticError> {
        let v = coords.iter().map(|s| f.parse(s)).collect::<Result<Vec<_>, _>>()?;
        for &x in &v {
            if !f.contains(x) {
                return Err(FieldError::OutOfRange { index: x.index(), order: f.order() }.into());
            }
        }
        Self::new(v)
    }
}

/// `F_q`-valued form `Σ_i (b_{x,i} a_{y,i} − a_{x,i} b_{y,i})`, so that `⟨x, Jy⟩ = tr` of it.
pub fn bilinear_form(f: &FieldTower, x: &SympVector, y: &SympVector) -> FieldElem {
    assert_eq!(x.0.len(), y.0.len(), "vector length mismatch");
    let n = x.n();
    let mut acc = FieldElem::ZERO;
    for i in 0..n {
        acc = f.add(acc, f.mul(x.0[n + i], y.0[i]));
        acc = f.sub(acc, f.mul(x.0[i], y.0[n + i]));
    }
    acc
}

/// `⟨x, Jy⟩ ∈ F_p` with `J = ((0, −I), (I, 0))`.
pub fn symplectic_form(f: &FieldTower, x: &SympVector, y: &SympVector) -> Result<PrimeElem, SymplecticError> {
    if x.0.len() != y.0.len() {
        return Err(SymplecticError::LengthMismatch { expected: x.0.len(), found: y.0.len() });
    }
    Ok(f.trace(bilinear_form(f, x, y)))
}

/// `⟨x, y⟩ = tr Σ x_i y_i` on `F_q^n`.
pub fn trace_inner(f: &FieldTower, x: &[FieldElem], y: &[FieldElem]) -> PrimeElem {
    f.trace(dot(f, x, y))
}

pub fn j_matrix(f: &FieldTower, n: usize) -> FqMatrix {
    let mut j = FqMatrix::zeros(2 * n, 2 * n);
    let minus_one = f.neg(FieldElem::ONE);
    for i in 0..n {
        j.set(i, n + i, minus_one);
        j.set(n + i, i, FieldElem::ONE);
    }
    j
}

/// `Sᵀ J S`; equals `J` exactly when `S` is symplectic.
pub fn symplectic_gram(f: &FieldTower, s: &FqMatrix) -> FqMatrix {
    let n = s.rows() / 2;
    s.transpose().mul(f, &j_matrix(f, n)).mul(f, s)
}

/// Subspace of `F_q^{2n}` with an ordered, linearly independent basis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subspace {
    n: usize,
    basis: Vec<SympVector>,
}

impl Subspace {
    pub fn new(f: &FieldTower, n: usize, basis: Vec<SympVector>) -> Result<Self, SymplecticError> {
        for v in &basis {
            if v.n() != n {
                return Err(SymplecticError::LengthMismatch { expected: 2 * n, found: v.0.len() });
            }
        }
        if rank_of(f, &basis) != basis.len() {
            return Err(SymplecticError::Dependent);
        }
        Ok(Subspace { n, basis })
    }

    /// Span of arbitrary vectors; dependent vectors are dropped in order.
    pub fn span(f: &FieldTower, n: usize, vectors: &[SympVector]) -> Self {
        let mut basis: Vec<SympVector> = Vec::new();
        for v in vectors {
            assert_eq!(v.n(), n, "vector length mismatch");
            let mut trial = basis.clone();
            trial.push(v.clone());
            if rank_of(f, &trial) == trial.len() {
                basis = trial;
            }
        }
        Subspace { n, basis }
    }

    pub fn zero(n: usize) -> Self {
        Subspace { n, basis: Vec::new() }
    }

    pub fn full(n: usize) -> Self {
        Subspace { n, basis: (0..2 * n).map(|i| SympVector::unit(n, i)).collect() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[SympVector] {
        &self.basis
    }

    pub fn contains(&self, f: &FieldTower, v: &SympVector) -> bool {
        let mut trial = self.basis.clone();
        trial.push(v.clone());
        rank_of(f, &trial) == self.basis.len()
    }

    pub fn same_span(&self, f: &FieldTower, other: &Subspace) -> bool {
        self.dim() == other.dim() && other.basis.iter().all(|v| self.contains(f, v))
    }

    pub fn is_self_orthogonal(&self, f: &FieldTower) -> bool {
        self.basis
            .iter()
            .tuple_combinations()
            .all(|(x, y)| bilinear_form(f, x, y).is_zero())
    }

    /// Every element `Σ c_i v_i`, in lexicographic order of coefficient indices
    /// (first coefficient fastest). Only for small subspaces.
    pub fn elements(&self, f: &FieldTower) -> Vec<SympVector> {
        let q = f.order();
        let count = q.checked_pow(self.dim() as u32).expect("subspace too large to enumerate");
        (0..count)
            .map(|mut idx| {
                let mut acc = SympVector::zero(self.n);
                for v in &self.basis {
                    let c = FieldElem::from_index(idx % q);
                    idx /= q;
                    acc = acc.add(f, &v.scale(f, c));
                }
                acc
            })
            .collect()
    }
}

fn rank_of(f: &FieldTower, vectors: &[SympVector]) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let rows: Vec<Vec<FieldElem>> = vectors.iter().map(|v| v.0.clone()).collect();
    FqMatrix::from_rows(&rows).rank(f)
}

/// `V^{⊥_J} = {w : ⟨v, Jw⟩ = 0 ∀ v ∈ V}`, computed from the `F_q`-bilinear form.
pub fn orthogonal_complement(f: &FieldTower, v: &Subspace) -> Subspace {
    let n = v.n;
    if v.dim() == 0 {
        return Subspace::full(n);
    }
    let rows: Vec<Vec<FieldElem>> = v
        .basis
        .iter()
        .map(|x| [x.b_part().to_vec(), vec_neg(f, x.a_part())].concat())
        .collect();
    let kernel = FqMatrix::from_rows(&rows).kernel(f);
    Subspace { n, basis: kernel.into_iter().map(SympVector).collect() }
}

/// Element `[w]` of a quotient `F_q^{2n} / V^{⊥_J}`, stored as its coordinates on the
/// fixed representative vectors of the quotient.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CosetLabel(Vec<FieldElem>);

impl CosetLabel {
    pub fn from_coefficients(c: Vec<FieldElem>) -> Self {
        CosetLabel(c)
    }

    pub fn coefficients(&self) -> &[FieldElem] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|x| x.is_zero())
    }
}

/// Coordinates for `F_q^{2n}/V^{⊥_J}`: a full basis whose first `perp_dim` vectors span
/// `V^{⊥_J}`; the remaining vectors are the canonical coset representatives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quotient {
    n: usize,
    perp_dim: usize,
    basis: Vec<SympVector>,
    inverse: FqMatrix,
}

impl Quotient {
    /// Quotient by the complement of a self-orthogonal `V`, with representatives drawn
    /// from the standard unit vectors.
    pub fn of_subspace(f: &FieldTower, v: &Subspace) -> Self {
        let perp = orthogonal_complement(f, v);
        let mut basis = perp.basis.clone();
        for i in 0..2 * v.n {
            if basis.len() == 2 * v.n {
                break;
            }
            let mut trial = basis.clone();
            trial.push(SympVector::unit(v.n, i));
            if rank_of(f, &trial) == trial.len() {
                basis = trial;
            }
        }
        Self::from_basis(f, basis, perp.dim()).expect("completed basis is invertible")
    }

    pub fn from_basis(f: &FieldTower, basis: Vec<SympVector>, perp_dim: usize) -> Result<Self, SymplecticError> {
        let n = basis.first().map_or(0, SympVector::n);
        if basis.len() != 2 * n {
            return Err(SymplecticError::LengthMismatch { expected: 2 * n, found: basis.len() });
        }
        let cols: Vec<Vec<FieldElem>> = basis.iter().map(|v| v.0.clone()).collect();
        let inverse = FqMatrix::from_columns(&cols).inverse(f).ok_or(SymplecticError::Dependent)?;
        Ok(Quotient { n, perp_dim, basis, inverse })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `d = dim V`, the number of label coordinates.
    pub fn label_len(&self) -> usize {
        2 * self.n - self.perp_dim
    }

    /// Full expansion `w = Σ c_i v_i`.
    pub fn expand(&self, f: &FieldTower, w: &SympVector) -> Vec<FieldElem> {
        self.inverse.mul_vec(f, &w.0)
    }

    pub fn reduce(&self, f: &FieldTower, w: &SympVector) -> CosetLabel {
        CosetLabel(self.expand(f, w)[self.perp_dim..].to_vec())
    }

    /// Canonical representative of a label, in the span of the representative vectors.
    pub fn representative(&self, f: &FieldTower, label: &CosetLabel) -> SympVector {
        label
            .0
            .iter()
            .zip(&self.basis[self.perp_dim..])
            .fold(SympVector::zero(self.n), |acc, (&c, v)| acc.add(f, &v.scale(f, c)))
    }

    pub fn label_count(&self, f: &FieldTower) -> u128 {
        f.order().pow(self.label_len() as u32)
    }

    /// Canonical enumeration index: first coefficient least significant.
    pub fn label_index(&self, f: &FieldTower, label: &CosetLabel) -> u128 {
        label.0.iter().rev().fold(0u128, |acc, c| acc * f.order() + c.index())
    }

    pub fn label_from_index(&self, f: &FieldTower, mut idx: u128) -> CosetLabel {
        let q = f.order();
        CosetLabel(
            (0..self.label_len())
                .map(|_| {
                    let c = FieldElem::from_index(idx % q);
                    idx /= q;
                    c
                })
                .collect(),
        )
    }

    pub fn labels(&self, f: &FieldTower) -> Vec<CosetLabel> {
        (0..self.label_count(f)).map(|i| self.label_from_index(f, i)).collect()
    }

    pub fn add_labels(&self, f: &FieldTower, x: &CosetLabel, y: &CosetLabel) -> CosetLabel {
        CosetLabel(vec_add(f, &x.0, &y.0))
    }
}

/// Outcome of checking conditions (a) and (b) on `v_1, …, v_{2t}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub n: usize,
    pub t: usize,
    pub rank: usize,
    pub independent: bool,
    pub subsets_checked: usize,
    /// Server subsets (0-based) whose `2t` rows are dependent.
    pub failed_subsets: Vec<Vec<usize>>,
    /// Pairs `(i, j)` (0-based) with `⟨v_i, J v_j⟩ ≠ 0`, `i < 2n − 2t`, `j < 2t`.
    pub failed_pairs: Vec<(usize, usize)>,
}

impl ConditionReport {
    pub fn passed(&self) -> bool {
        self.independent && self.failed_subsets.is_empty() && self.failed_pairs.is_empty()
    }
}

/// Checks independence, condition (a) over all `t`-subsets of rows and condition (b).
pub fn verify_conditions(
    f: &FieldTower,
    vectors: &[SympVector],
    n: usize,
    t: usize,
) -> Result<ConditionReport, SymplecticError> {
    if vectors.len() != 2 * t {
        return Err(SymplecticError::LengthMismatch { expected: 2 * t, found: vectors.len() });
    }
    if t > n {
        return Err(SymplecticError::InvalidParameters { n, t });
    }
    for v in vectors {
        if v.n() != n {
            return Err(SymplecticError::LengthMismatch { expected: 2 * n, found: v.0.len() });
        }
    }
    let rank = rank_of(f, vectors);
    let d = FqMatrix::from_columns(&vectors.iter().map(|v| v.0.clone()).collect::<Vec<_>>());
    let mut subsets_checked = 0;
    let mut failed_subsets = Vec::new();
    for subset in (0..n).combinations(t) {
        subsets_checked += 1;
        if !d.select_rows(&server_rows(n, &subset)).determinant_is_nonzero(f) {
            failed_subsets.push(subset);
        }
    }
    let mut failed_pairs = Vec::new();
    for i in 0..(2 * n - 2 * t) {
        for j in 0..2 * t {
            if !bilinear_form(f, &vectors[i], &vectors[j]).is_zero() {
                failed_pairs.push((i, j));
            }
        }
    }
    Ok(ConditionReport {
        n,
        t,
        rank,
        independent: rank == 2 * t,
        subsets_checked,
        failed_subsets,
        failed_pairs,
    })
}

/// Row indices `s` and `n + s` for each server `s` of the subset.
pub fn server_rows(n: usize, servers: &[usize]) -> Vec<usize> {
    servers.iter().copied().chain(servers.iter().map(|&s| s + n)).collect()
}

/// Plain-text form of a basis: one row per vector `v_i`, coordinate strings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisBlock {
    pub n: usize,
    pub t: usize,
    pub vectors: Vec<Vec<String>>,
}

/// Full basis `v_1, …, v_{2n}` of `F_q^{2n}` with `V = span{v_1, …, v_{2n−2t}}` and
/// `V^{⊥_J} = span{v_1, …, v_{2t}}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasisSet {
    n: usize,
    t: usize,
    vectors: Vec<SympVector>,
    quotient: Quotient,
}

impl BasisSet {
    /// Requires a basis of `F_q^{2n}` whose first `2n − 2t` vectors are orthogonal to
    /// the first `2t`. Condition (a) is not enforced here; see [`verify_conditions`].
    pub fn new(f: &FieldTower, n: usize, t: usize, vectors: Vec<SympVector>) -> Result<Self, SymplecticError> {
        if n == 0 || t > n || 2 * t < n {
            return Err(SymplecticError::InvalidParameters { n, t });
        }
        if vectors.len() != 2 * n {
            return Err(SymplecticError::LengthMismatch { expected: 2 * n, found: vectors.len() });
        }
        for i in 0..(2 * n - 2 * t) {
            for j in 0..2 * t {
                if !bilinear_form(f, &vectors[i], &vectors[j]).is_zero() {
                    return Err(SymplecticError::VerificationFailed(format!(
                        "v_{} is not J-orthogonal to v_{}",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let quotient = Quotient::from_basis(f, vectors.clone(), 2 * t)?;
        Ok(BasisSet { n, t, vectors, quotient })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn vectors(&self) -> &[SympVector] {
        &self.vectors
    }

    pub fn quotient(&self) -> &Quotient {
        &self.quotient
    }

    /// `V = span{v_1, …, v_{2n−2t}}`.
    pub fn v_subspace(&self) -> Subspace {
        Subspace { n: self.n, basis: self.vectors[..2 * (self.n - self.t)].to_vec() }
    }

    pub fn perp_subspace(&self) -> Subspace {
        Subspace { n: self.n, basis: self.vectors[..2 * self.t].to_vec() }
    }

    fn columns(&self, range: std::ops::Range<usize>) -> FqMatrix {
        FqMatrix::from_columns(&self.vectors[range].iter().map(|v| v.0.clone()).collect::<Vec<_>>())
    }

    /// `D₁ = (v_1 … v_{2t})`.
    pub fn d1(&self) -> FqMatrix {
        self.columns(0..2 * self.t)
    }

    /// `D₂ = (v_{2t+1} … v_{2n})`.
    pub fn d2(&self) -> FqMatrix {
        self.columns(2 * self.t..2 * self.n)
    }

    /// `D_{1,π}`: rows `s` and `n + s` of `D₁` for the given servers.
    pub fn d1_restricted(&self, servers: &[usize]) -> FqMatrix {
        self.d1().select_rows(&server_rows(self.n, servers))
    }

    pub fn d2_restricted(&self, servers: &[usize]) -> FqMatrix {
        self.d2().select_rows(&server_rows(self.n, servers))
    }

    pub fn verify(&self, f: &FieldTower) -> ConditionReport {
        verify_conditions(f, &self.vectors[..2 * self.t], self.n, self.t).expect("shape checked at construction")
    }

    pub fn coset_reduce(&self, f: &FieldTower, w: &SympVector) -> CosetLabel {
        self.quotient.reduce(f, w)
    }

    /// `(c_{2t+1}, …, c_{2n})`.
    pub fn coset_coefficients<'a>(&self, label: &'a CosetLabel) -> &'a [FieldElem] {
        label.coefficients()
    }

    pub fn to_block(&self, f: &FieldTower) -> BasisBlock {
        BasisBlock { n: self.n, t: self.t, vectors: self.vectors.iter().map(|v| v.format(f)).collect() }
    }

    pub fn from_block(f: &FieldTower, block: &BasisBlock) -> Result<Self, SymplecticError> {
        let vectors = block
            .vectors
            .iter()
            .map(|row| SympVector::parse(f, row))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(f, block.n, block.t, vectors)
    }
}

fn check_nt(n: usize, t: usize) -> Result<(), SymplecticError> {
    if n == 0 || t >= n || 2 * t < n {
        return Err(SymplecticError::InvalidParameters { n, t });
    }
    Ok(())
}

/// `S = ((I + B A⁻¹, B), (A⁻¹, I))` with Hankel matrices `a_ij = α_{i+j−2}`,
/// `b_ij = α_{i+j−2+(2t−n)}` (1-based indices, `α_0 = 1`).
///
/// When `2t = n` in characteristic 2 the two Hankel matrices coincide and `A + B`
/// vanishes, so `B = 0` is used instead; condition (a) then rests on `A` alone.
pub fn lemma3_symplectic_matrix(f: &FieldTower, n: usize, t: usize) -> Result<FqMatrix, SymplecticError> {
    let zero_b = f.prime() == 2 && 2 * t == n;
    hankel_symplectic(f, n, t, zero_b)
}

/// The Hankel symplectic matrix exactly as written, without the characteristic-2 adjustment.
pub fn hankel_symplectic_unadjusted(f: &FieldTower, n: usize, t: usize) -> Result<FqMatrix, SymplecticError> {
    hankel_symplectic(f, n, t, false)
}

fn hankel_symplectic(f: &FieldTower, n: usize, t: usize, zero_b: bool) -> Result<FqMatrix, SymplecticError> {
    check_nt(n, t)?;
    let needed = n + 2 * t - 2;
    if f.chain_length() < needed {
        return Err(SymplecticError::TowerTooShort { needed, available: f.chain_length() });
    }
    let mut a = FqMatrix::zeros(n, n);
    let mut b = FqMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a.set(i, j, f.generator(i + j));
            if !zero_b {
                b.set(i, j, f.generator(i + j + 2 * t - n));
            }
        }
    }
    let a_inv = a.inverse(f).ok_or(SymplecticError::Singular("A"))?;
    let top_left = FqMatrix::identity(n).add(f, &b.mul(f, &a_inv));
    let mut s = FqMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            s.set(i, j, top_left.get(i, j));
            s.set(i, n + j, b.get(i, j));
            s.set(n + i, j, a_inv.get(i, j));
        }
        s.set(n + i, n + i, FieldElem::ONE);
    }
    Ok(s)
}

/// Basis from the columns `s_1, …, s_{2n}` of the Hankel symplectic matrix:
/// `(v_1..v_{2n−2t}) = (s_{2t−n+1}..s_n)`, `(v_{2n−2t+1}..v_{2t}) = (s_1..s_{2t−n}, s_{n+1}..s_{2t})`,
/// completed by `(v_{2t+1}..v_{2n}) = (s_{2t+1}..s_{2n})`.
pub fn build_basis_lemma3(f: &FieldTower, n: usize, t: usize) -> Result<BasisSet, SymplecticError> {
    let basis = basis_from_symplectic(f, n, t, &lemma3_symplectic_matrix(f, n, t)?)?;
    let report = basis.verify(f);
    if !report.passed() {
        return Err(SymplecticError::VerificationFailed(format!("{report:?}")));
    }
    Ok(basis)
}

/// Column assignment of [`build_basis_lemma3`] for any symplectic `S`, without checking
/// condition (a).
pub fn basis_from_symplectic(f: &FieldTower, n: usize, t: usize, s: &FqMatrix) -> Result<BasisSet, SymplecticError> {
    check_nt(n, t)?;
    if s.rows() != 2 * n || s.cols() != 2 * n {
        return Err(SymplecticError::LengthMismatch { expected: 2 * n, found: s.rows() });
    }
    if symplectic_gram(f, s) != j_matrix(f, n) {
        return Err(SymplecticError::VerificationFailed("S is not symplectic".into()));
    }
    let col = |k: usize| SympVector(s.column(k - 1));
    let order = ((2 * t - n + 1)..=n)
        .chain(1..=(2 * t - n))
        .chain((n + 1)..=(2 * t))
        .chain((2 * t + 1)..=(2 * n));
    BasisSet::new(f, n, t, order.map(col).collect())
}

pub const DEFAULT_SEARCH_BUDGET: usize = 10_000;

pub fn search_basis(f: &FieldTower, n: usize, t: usize, seed: u64) -> Result<BasisSet, SymplecticError> {
    search_basis_with_budget(f, n, t, seed, DEFAULT_SEARCH_BUDGET)
}

/// Randomized search: draw an isotropic `V` of dimension `2n − 2t`, extend to a basis of
/// `V^{⊥_J}`, keep it when condition (a) holds, then complete with dual vectors.
pub fn search_basis_with_budget(
    f: &FieldTower,
    n: usize,
    t: usize,
    seed: u64,
    budget: usize,
) -> Result<BasisSet, SymplecticError> {
    check_nt(n, t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 2 * n - 2 * t;
    for _ in 0..budget {
        let Some(v) = random_isotropic(f, n, d, &mut rng) else {
            continue;
        };
        let perp = orthogonal_complement(f, &v);
        let mut d1 = v.basis.clone();
        while d1.len() < 2 * t {
            let cand = random_combination(f, &perp.basis, &mut rng);
            let mut trial = d1.clone();
            trial.push(cand);
            if rank_of(f, &trial) == trial.len() {
                d1 = trial;
            }
        }
        let report = verify_conditions(f, &d1, n, t)?;
        if !report.passed() {
            continue;
        }
        let rows: Vec<Vec<FieldElem>> = d1
            .iter()
            .map(|x| [x.b_part().to_vec(), vec_neg(f, x.a_part())].concat())
            .collect();
        let system = FqMatrix::from_rows(&rows);
        let mut vectors = d1.clone();
        for j in 0..d {
            let mut rhs = vec![FieldElem::ZERO; 2 * t];
            rhs[j] = FieldElem::ONE;
            let x = system.solve(f, &rhs).ok_or(SymplecticError::Singular("completion system"))?;
            vectors.push(SympVector(x));
        }
        let basis = BasisSet::new(f, n, t, vectors)?;
        if basis.verify(f).passed() {
            return Ok(basis);
        }
    }
    Err(SymplecticError::SearchExhausted { attempts: budget })
}

fn random_elem(f: &FieldTower, rng: &mut ChaCha8Rng) -> FieldElem {
    FieldElem::from_index(rng.gen_range(0..f.order()))
}

fn random_combination(f: &FieldTower, basis: &[SympVector], rng: &mut ChaCha8Rng) -> SympVector {
    let n = basis[0].n();
    basis
        .iter()
        .fold(SympVector::zero(n), |acc, v| acc.add(f, &v.scale(f, random_elem(f, rng))))
}

fn random_isotropic(f: &FieldTower, n: usize, d: usize, rng: &mut ChaCha8Rng) -> Option<Subspace> {
    let mut v = Subspace::zero(n);
    while v.dim() < d {
        let perp = orthogonal_complement(f, &v);
        let cand = (0..8)
            .map(|_| random_combination(f, &perp.basis, rng))
            .find(|c| !v.contains(f, c))?;
        v.basis.push(cand);
    }
    Some(v)
}

/// `Ā = (A; I_r) ∈ F_q^{k×r}` with `A ∈ F_q^{(k−r)×r}`, `a_ij = α_{i+j−2}`.
pub fn hankel_stack(f: &FieldTower, k: usize, r: usize) -> Result<FqMatrix, SymplecticError> {
    if r == 0 || r >= k {
        return Err(SymplecticError::InvalidParameters { n: k, t: r });
    }
    let needed = k.saturating_sub(2);
    if f.chain_length() < needed {
        return Err(SymplecticError::TowerTooShort { needed, available: f.chain_length() });
    }
    let mut m = FqMatrix::zeros(k, r);
    for i in 0..(k - r) {
        for j in 0..r {
            m.set(i, j, f.generator(i + j));
        }
    }
    for j in 0..r {
        m.set(k - r + j, j, FieldElem::ONE);
    }
    Ok(m)
}

/// Every `r`-subset of rows that fails to be linearly independent.
pub fn dependent_row_subsets(f: &FieldTower, m: &FqMatrix, r: usize) -> Vec<Vec<usize>> {
    (0..m.rows())
        .combinations(r)
        .filter(|rows| m.select_rows(rows).rank(f) < r)
        .collect()
}
