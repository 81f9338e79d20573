//! Heisenberg–Weyl label arithmetic, stabilizer phase systems and the phase-space
//! simulator for coset states `|[w]⟩⟨[w]| ⊗ ρ_mix`.
//!
//! A [`WeylLabel`] `(w, k)` stands for `e^{2πi k/m} W̃(w)` where `m = 4` when `p = 2`
//! and `m = p` otherwise, so `ω = e^{2πi/p}` is the exponent `m/p`.

use thiserror::Error;

use crate::finite_field::{FieldElem, FieldTower};
use crate::linalg::FqMatrix;
use crate::symplectic_space::{
    bilinear_form, trace_inner, CosetLabel, Quotient, Subspace, SymplecticError, SympVector,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StabilizerError {
    #[error("subspace is not self-orthogonal: basis vectors {0} and {1} pair nontrivially")]
    NotSelfOrthogonal(usize, usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("vector is not in the stabilizer subspace")]
    NotInSubspace,
    #[error(transparent)]
    Symplectic(#[from] SymplecticError),
}

/// Modulus of phase exponents: 4 for `p = 2` (to carry `√−1`), `p` otherwise.
pub fn phase_modulus(p: u32) -> u32 {
    if p == 2 {
        4
    } else {
        p
    }
}

/// Exponent of `ω` in units of `2π/m`.
pub fn omega_step(p: u32) -> u32 {
    phase_modulus(p) / p
}

/// Phase-tagged Weyl operator `e^{2πi·phase/m} W̃(w)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WeylLabel {
    w: SympVector,
    phase: u32,
    modulus: u32,
}

impl WeylLabel {
    pub fn new(f: &FieldTower, w: SympVector, phase: u32) -> Self {
        let modulus = phase_modulus(f.prime());
        WeylLabel { w, phase: phase % modulus, modulus }
    }

    pub fn plain(f: &FieldTower, w: SympVector) -> Self {
        Self::new(f, w, 0)
    }

    pub fn identity(f: &FieldTower, n: usize) -> Self {
        Self::new(f, SympVector::zero(n), 0)
    }

    pub fn w(&self) -> &SympVector {
        &self.w
    }

    pub fn phase(&self) -> u32 {
        self.phase
    }

    pub fn modulus(&self) -> u32 {
        self.modulus
    }

    pub fn is_identity(&self) -> bool {
        self.phase == 0 && self.w.is_zero()
    }
}

/// `W̃(a,b) W̃(c,d) = ω^{⟨b,c⟩} W̃(a+c, b+d)`, with operand phases added.
pub fn weyl_product(f: &FieldTower, u: &WeylLabel, v: &WeylLabel) -> Result<WeylLabel, StabilizerError> {
    if u.w.n() != v.w.n() {
        return Err(StabilizerError::DimensionMismatch(u.w.n(), v.w.n()));
    }
    let cross = trace_inner(f, u.w.b_part(), v.w.a_part()).value();
    let m = u.modulus;
    let phase = (u.phase + v.phase + omega_step(f.prime()) * cross) % m;
    Ok(WeylLabel { w: u.w.add(f, &v.w), phase, modulus: m })
}

pub fn weyl_power(f: &FieldTower, u: &WeylLabel, k: u64) -> WeylLabel {
    let mut acc = WeylLabel::identity(f, u.w.n());
    for _ in 0..k {
        acc = weyl_product(f, &acc, u).expect("same dimension");
    }
    acc
}

/// Exponent `e` of `ω` in `u·v = ω^e v·u`; equals `⟨u.w, J v.w⟩`.
pub fn commutation_exponent(f: &FieldTower, u: &WeylLabel, v: &WeylLabel) -> Result<u32, StabilizerError> {
    let uv = weyl_product(f, u, v)?;
    let vu = weyl_product(f, v, u)?;
    let m = u.modulus;
    let diff = (uv.phase + m - vu.phase) % m;
    Ok(diff / omega_step(f.prime()))
}

/// Stabilizer group `S(V) = {W(v) = c_v W̃(v) : v ∈ V}`.
///
/// Phases are fixed on the `F_p`-basis `{β_j v_i}` of `V` (`β_j` the `F_p`-basis of
/// `F_q`): `c = +√−1^{⟨b,a⟩}` for `p = 2` and `c = ω^{((p+1)/2)⟨a,b⟩}` for odd `p`;
/// a general `W(v)` is the ordered product of generator powers.
#[derive(Clone, Debug)]
pub struct Stabilizer {
    n: usize,
    subspace: Subspace,
    quotient: Quotient,
    generators: Vec<WeylLabel>,
    basis_matrix: FqMatrix,
}

pub fn build_stabilizer(f: &FieldTower, v: &Subspace) -> Result<Stabilizer, StabilizerError> {
    Stabilizer::new(f, v, None)
}

impl Stabilizer {
    /// `quotient` may supply custom coset representatives (e.g. from a protocol basis);
    /// it must be a quotient by `V^{⊥_J}`.
    pub fn new(f: &FieldTower, v: &Subspace, quotient: Option<Quotient>) -> Result<Self, StabilizerError> {
        for (i, x) in v.basis().iter().enumerate() {
            for (j, y) in v.basis().iter().enumerate().skip(i + 1) {
                if !bilinear_form(f, x, y).is_zero() {
                    return Err(StabilizerError::NotSelfOrthogonal(i, j));
                }
            }
        }
        let n = v.n();
        let p = f.prime();
        let mut generators = Vec::with_capacity(v.dim() * f.degree());
        for x in v.basis() {
            for j in 0..f.degree() {
                let beta = FieldElem::from_index((p as u128).pow(j as u32));
                let g = x.scale(f, beta);
                let ab = trace_inner(f, g.a_part(), g.b_part()).value();
                let phase = if p == 2 { ab } else { ((p + 1) / 2 * ab) % p };
                generators.push(WeylLabel::new(f, g, phase));
            }
        }
        let quotient = quotient.unwrap_or_else(|| Quotient::of_subspace(f, v));
        if quotient.n() != n || quotient.label_len() != v.dim() {
            return Err(StabilizerError::DimensionMismatch(quotient.label_len(), v.dim()));
        }
        let basis_matrix = FqMatrix::from_columns(&v.basis().iter().map(|x| x.coords().to_vec()).collect::<Vec<_>>());
        Ok(Stabilizer { n, subspace: v.clone(), quotient, generators, basis_matrix })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `d = dim_{F_q} V`.
    pub fn d(&self) -> usize {
        self.subspace.dim()
    }

    pub fn subspace(&self) -> &Subspace {
        &self.subspace
    }

    pub fn quotient(&self) -> &Quotient {
        &self.quotient
    }

    /// `W(β_j v_i)` for each `F_q`-basis vector `v_i` and `F_p`-basis element `β_j`.
    pub fn generators(&self) -> &[WeylLabel] {
        &self.generators
    }

    /// `W(v)` with its phase `c_v`.
    pub fn element(&self, f: &FieldTower, v: &SympVector) -> Result<WeylLabel, StabilizerError> {
        if v.n() != self.n {
            return Err(StabilizerError::DimensionMismatch(v.n(), self.n));
        }
        if self.d() == 0 {
            return if v.is_zero() { Ok(WeylLabel::identity(f, self.n)) } else { Err(StabilizerError::NotInSubspace) };
        }
        let coeffs = self.basis_matrix.solve(f, v.coords()).ok_or(StabilizerError::NotInSubspace)?;
        Ok(self.element_from_coefficients(f, &coeffs))
    }

    fn element_from_coefficients(&self, f: &FieldTower, coeffs: &[FieldElem]) -> WeylLabel {
        let r = f.degree();
        let mut acc = WeylLabel::identity(f, self.n);
        for (i, &c) in coeffs.iter().enumerate() {
            for (j, &digit) in f.coords(c).iter().enumerate() {
                let g = &self.generators[i * r + j];
                for _ in 0..digit {
                    acc = weyl_product(f, &acc, g).expect("same dimension");
                }
            }
        }
        acc
    }

    /// Every `W(v)`, `v ∈ V`, in the enumeration order of [`Subspace::elements`].
    pub fn elements(&self, f: &FieldTower) -> Vec<WeylLabel> {
        let q = f.order();
        let d = self.d();
        let count = q.checked_pow(d as u32).expect("stabilizer too large to enumerate");
        (0..count)
            .map(|mut idx| {
                let coeffs: Vec<FieldElem> = (0..d)
                    .map(|_| {
                        let c = FieldElem::from_index(idx % q);
                        idx /= q;
                        c
                    })
                    .collect();
                self.element_from_coefficients(f, &coeffs)
            })
            .collect()
    }

    pub fn initial_state(&self) -> CosetState {
        CosetState { label: CosetLabel::from_coefficients(vec![FieldElem::ZERO; self.d()]) }
    }

    pub fn state_of(&self, f: &FieldTower, w: &SympVector) -> CosetState {
        CosetState { label: self.quotient.reduce(f, w) }
    }

    /// `W(w) (|[w₀]⟩⟨[w₀]| ⊗ ρ_mix) W(w)* = |[w₀ + w]⟩⟨[w₀ + w]| ⊗ ρ_mix`.
    pub fn apply(&self, f: &FieldTower, state: &CosetState, w: &SympVector) -> CosetState {
        let shift = self.quotient.reduce(f, w);
        CosetState { label: self.quotient.add_labels(f, &state.label, &shift) }
    }

    /// The state is an eigenstate of the PVM, so the outcome is its own label.
    pub fn measure(&self, state: &CosetState) -> PhaseSpaceOutcome {
        PhaseSpaceOutcome { label: state.label.clone(), probability: 1.0 }
    }
}

/// `|[w]⟩⟨[w]| ⊗ ρ_mix` for a fixed stabilizer; carries no global phase.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CosetState {
    label: CosetLabel,
}

impl CosetState {
    pub fn label(&self) -> &CosetLabel {
        &self.label
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSpaceOutcome {
    pub label: CosetLabel,
    pub probability: f64,
}

pub fn phase_space_apply(f: &FieldTower, stab: &Stabilizer, state: &CosetState, w: &SympVector) -> CosetState {
    stab.apply(f, state, w)
}

pub fn phase_space_measure(stab: &Stabilizer, state: &CosetState) -> PhaseSpaceOutcome {
    stab.measure(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symplectic_space::{orthogonal_complement, symplectic_form};
    use nalgebra::DMatrix;
    use num_complex::Complex64;

    fn sv(c: &[u128]) -> SympVector {
        SympVector::from_indices(c).unwrap()
    }

    fn pauli(name: char) -> DMatrix<Complex64> {
        let c = |x: f64, y: f64| Complex64::new(x, y);
        match name {
            'I' => DMatrix::identity(2, 2),
            'X' => DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]),
            'Z' => DMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn product_examples_q2() {
        let f = FieldTower::prime_power(2).unwrap();
        let x = WeylLabel::plain(&f, sv(&[1, 0]));
        let z = WeylLabel::plain(&f, sv(&[0, 1]));
        let xz = weyl_product(&f, &x, &z).unwrap();
        assert_eq!((xz.w().clone(), xz.phase()), (sv(&[1, 1]), 0));
        let zx = weyl_product(&f, &z, &x).unwrap();
        // ω = −1 = i² for p = 2
        assert_eq!((zx.w().clone(), zx.phase()), (sv(&[1, 1]), 2));
        // 2x2 oracle: Z X = −X Z
        let lhs = pauli('Z') * pauli('X');
        let rhs = -(pauli('X') * pauli('Z'));
        assert!((lhs - rhs).norm() < 1e-15);
        let id = WeylLabel::identity(&f, 1);
        assert_eq!(weyl_product(&f, &xz, &id).unwrap(), xz);
        assert!(weyl_product(&f, &x, &WeylLabel::identity(&f, 2)).is_err());
    }

    #[test]
    fn commutation_matches_form_exhaustively_small() {
        for q in [2u64, 3, 4] {
            let f = FieldTower::prime_power(q).unwrap();
            let all = Subspace::full(1).elements(&f);
            for u in &all {
                for v in &all {
                    let (lu, lv) = (WeylLabel::plain(&f, u.clone()), WeylLabel::plain(&f, v.clone()));
                    let e = commutation_exponent(&f, &lu, &lv).unwrap();
                    assert_eq!(e, symplectic_form(&f, u, v).unwrap().value());
                }
            }
        }
    }

    #[test]
    fn product_is_associative() {
        let f = FieldTower::prime_power(4).unwrap();
        let all = Subspace::full(1).elements(&f);
        for (i, a) in all.iter().enumerate() {
            for b in all.iter().skip(i % 3).step_by(3) {
                for c in all.iter().step_by(5) {
                    let (a, b, c) = (
                        WeylLabel::new(&f, a.clone(), 1),
                        WeylLabel::plain(&f, b.clone()),
                        WeylLabel::new(&f, c.clone(), 3),
                    );
                    let l = weyl_product(&f, &weyl_product(&f, &a, &b).unwrap(), &c).unwrap();
                    let r = weyl_product(&f, &a, &weyl_product(&f, &b, &c).unwrap()).unwrap();
                    assert_eq!(l, r);
                }
            }
        }
    }

    #[test]
    fn two_qubit_bell_stabilizer() {
        let f = FieldTower::prime_power(2).unwrap();
        let v = Subspace::new(&f, 2, vec![sv(&[1, 1, 0, 0]), sv(&[0, 0, 1, 1])]).unwrap();
        let s = build_stabilizer(&f, &v).unwrap();
        let elems = s.elements(&f);
        let got: Vec<(SympVector, u32)> = elems.iter().map(|e| (e.w().clone(), e.phase())).collect();
        assert_eq!(
            got,
            vec![(sv(&[0, 0, 0, 0]), 0), (sv(&[1, 1, 0, 0]), 0), (sv(&[0, 0, 1, 1]), 0), (sv(&[1, 1, 1, 1]), 0)]
        );
        // dense oracle: XX · ZZ = (XZ)⊗(XZ) with coefficient +1
        let xx = pauli('X').kronecker(&pauli('X'));
        let zz = pauli('Z').kronecker(&pauli('Z'));
        let xz = pauli('X') * pauli('Z');
        assert!((&xx * &zz - xz.kronecker(&xz)).norm() < 1e-15);
        for a in &elems {
            for b in &elems {
                let prod = weyl_product(&f, a, b).unwrap();
                assert_eq!(prod, s.element(&f, prod.w()).unwrap());
            }
        }
    }

    #[test]
    fn trivial_and_invalid_stabilizers() {
        let f = FieldTower::prime_power(2).unwrap();
        let s = build_stabilizer(&f, &Subspace::zero(1)).unwrap();
        assert_eq!(s.elements(&f), vec![WeylLabel::identity(&f, 1)]);
        let bad = Subspace::new(&f, 1, vec![sv(&[1, 0]), sv(&[0, 1])]).unwrap();
        assert_eq!(build_stabilizer(&f, &bad).unwrap_err(), StabilizerError::NotSelfOrthogonal(0, 1));
    }

    /// Closure W(v)W(v') = W(v+v') and W(g)^p = I on every element, |V| ≤ 256.
    fn check_closure(f: &FieldTower, v: &Subspace) {
        let s = build_stabilizer(f, v).unwrap();
        let elems = s.elements(f);
        let vecs = v.elements(f);
        for (x, wx) in vecs.iter().zip(&elems) {
            assert_eq!(weyl_power(f, wx, f.prime() as u64), WeylLabel::identity(f, v.n()));
            for (y, wy) in vecs.iter().zip(&elems) {
                let prod = weyl_product(f, wx, wy).unwrap();
                assert_eq!(prod, s.element(f, &x.add(f, y)).unwrap());
            }
        }
        assert!(!elems.iter().skip(1).any(|e| e.w().is_zero()));
    }

    #[test]
    fn closure_exhaustive_for_small_stabilizers() {
        let f4 = FieldTower::prime_power(4).unwrap();
        let a = FieldElem::from_index(2);
        let v = Subspace::new(
            &f4,
            2,
            vec![sv(&[1, 1, 0, 0]), SympVector::from_parts(&[FieldElem::ZERO, FieldElem::ZERO], &[a, a])],
        )
        .unwrap();
        assert!(v.is_self_orthogonal(&f4));
        check_closure(&f4, &v);
        let f3 = FieldTower::prime_power(3).unwrap();
        let v = Subspace::new(&f3, 2, vec![sv(&[1, 1, 1, 2])]).unwrap();
        check_closure(&f3, &v);
        let f9 = FieldTower::prime_power(9).unwrap();
        let v = Subspace::new(&f9, 2, vec![sv(&[1, 4, 0, 0]), sv(&[0, 0, 4, 8])]).unwrap();
        if v.is_self_orthogonal(&f9) {
            check_closure(&f9, &v);
        }
    }

    #[test]
    fn odd_prime_phases_match_closed_form() {
        let f = FieldTower::prime_power(9).unwrap();
        let v = Subspace::new(&f, 1, vec![sv(&[1, 5])]).unwrap();
        let s = build_stabilizer(&f, &v).unwrap();
        for (x, e) in v.elements(&f).iter().zip(s.elements(&f)) {
            let ab = trace_inner(&f, x.a_part(), x.b_part()).value();
            assert_eq!(e.phase(), (2 * ab) % 3);
        }
    }

    #[test]
    fn phase_space_apply_is_group_action() {
        let f = FieldTower::prime_power(2).unwrap();
        let v = Subspace::new(&f, 2, vec![sv(&[1, 1, 0, 0])]).unwrap();
        let s = build_stabilizer(&f, &v).unwrap();
        let all = Subspace::full(2).elements(&f);
        let perp = orthogonal_complement(&f, &v);
        let start = s.initial_state();
        for w in &all {
            let applied = phase_space_apply(&f, &s, &start, w);
            assert_eq!(applied.label().is_zero(), perp.contains(&f, w));
            for w2 in &all {
                let twice = s.apply(&f, &applied, w2);
                assert_eq!(twice, s.apply(&f, &start, &w.add(&f, w2)));
            }
            let out = phase_space_measure(&s, &applied);
            assert_eq!((&out.label, out.probability), (applied.label(), 1.0));
        }
        assert_eq!(s.apply(&f, &start, &SympVector::zero(2)), start);
    }
}
