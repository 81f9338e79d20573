//! Dense density-matrix oracle on `(C^q)^{⊗n}`.
//!
//! Basis index `y = Σ_s y_s q^{n−1−s}`: subsystem 0 is the most significant factor and each
//! `y_s` is a field element index in canonical order.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::finite_field::{FieldElem, FieldTower};
use crate::stabilizer_engine::{omega_step, phase_modulus, Stabilizer, WeylLabel};
use crate::symplectic_space::{bilinear_form, CosetLabel, Quotient, SympVector};

pub type CMatrix = DMatrix<Complex64>;

/// Largest total dimension `q^n` accepted for dense work.
pub const DENSE_DIM_LIMIT: usize = 4096;
/// Largest `|V| · q^n` accepted when materialising stabilizer elements.
pub const CHARACTER_WORK_LIMIT: u128 = 1 << 22;
/// Eigenvalues below this are treated as zero before taking logarithms.
pub const EIGEN_CLIP: f64 = -1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DenseError {
    #[error("dense dimension {dim} exceeds the guard {limit}")]
    DimensionGuard { dim: u128, limit: usize },
    #[error("stabilizer too large for dense projectors: |V|·q^n = {0}")]
    CharacterGuard(u128),
    #[error("ensemble probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("dimension mismatch: {0}")]
    Mismatch(String),
    #[error("invalid subsystem set {0:?}")]
    InvalidSubsystems(Vec<usize>),
    #[error("invalid density matrix: {0}")]
    InvalidState(String),
}

pub fn dense_dimension(f: &FieldTower, n: usize) -> Result<usize, DenseError> {
    let dim = f.order().checked_pow(n as u32).unwrap_or(u128::MAX);
    if dim > DENSE_DIM_LIMIT as u128 {
        return Err(DenseError::DimensionGuard { dim, limit: DENSE_DIM_LIMIT });
    }
    Ok(dim as usize)
}

fn roots_of_unity(m: u32) -> Vec<Complex64> {
    (0..m)
        .map(|k| {
            let (s, c) = (std::f64::consts::TAU * k as f64 / m as f64).sin_cos();
            // snap the exact axis points
            Complex64::new(snap(c), snap(s))
        })
        .collect()
}

fn snap(x: f64) -> f64 {
    if x.abs() < 1e-15 {
        0.0
    } else if (x.abs() - 1.0).abs() < 1e-15 {
        x.signum()
    } else {
        x
    }
}

/// Generalised permutation `U|y⟩ = e^{2πi·phase[y]/m} |perm[y]⟩`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Monomial {
    perm: Vec<u32>,
    phase: Vec<u32>,
    modulus: u32,
}

impl Monomial {
    pub fn identity(dim: usize, modulus: u32) -> Self {
        Monomial { perm: (0..dim as u32).collect(), phase: vec![0; dim], modulus }
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    fn coefficients(&self) -> Vec<Complex64> {
        let roots = roots_of_unity(self.modulus);
        self.phase.iter().map(|&k| roots[k as usize]).collect()
    }

    pub fn to_dense(&self) -> CMatrix {
        let d = self.dim();
        let c = self.coefficients();
        let mut m = CMatrix::zeros(d, d);
        for y in 0..d {
            m[(self.perm[y] as usize, y)] = c[y];
        }
        m
    }

    /// `U ρ U*`.
    pub fn conjugate(&self, rho: &CMatrix) -> CMatrix {
        let d = self.dim();
        let mut out = CMatrix::zeros(d, d);
        self.conjugate_into(rho, &mut out);
        out
    }

    /// `U ρ U*` written into `out`, which must be `dim × dim`.
    pub fn conjugate_into(&self, rho: &CMatrix, out: &mut CMatrix) {
        let d = self.dim();
        assert_eq!(out.shape(), (d, d), "output buffer shape");
        let c = self.coefficients();
        let src = rho.as_slice();
        let dst = out.as_mut_slice();
        for y in 0..d {
            let py = self.perm[y] as usize;
            let cy = c[y].conj();
            let col = &src[y * d..(y + 1) * d];
            let target = &mut dst[py * d..(py + 1) * d];
            for ((&px, &cx), &r) in self.perm.iter().zip(&c).zip(col) {
                target[px as usize] = cx * r * cy;
            }
        }
    }

    /// `Tr(U ρ)`.
    pub fn trace_with(&self, rho: &CMatrix) -> Complex64 {
        let c = self.coefficients();
        (0..self.dim()).map(|y| c[y] * rho[(y, self.perm[y] as usize)]).sum()
    }

    /// `self · other`.
    pub fn compose(&self, other: &Monomial) -> Monomial {
        let d = self.dim();
        let mut perm = vec![0; d];
        let mut phase = vec![0; d];
        for y in 0..d {
            let mid = other.perm[y] as usize;
            perm[y] = self.perm[mid];
            phase[y] = (other.phase[y] + self.phase[mid]) % self.modulus;
        }
        Monomial { perm, phase, modulus: self.modulus }
    }
}

/// Monomial of `e^{2πi k/m} W̃(w)`.
pub fn weyl_monomial(f: &FieldTower, label: &WeylLabel) -> Result<Monomial, DenseError> {
    let w = label.w();
    let n = w.n();
    let dim = dense_dimension(f, n)?;
    let q = f.order() as usize;
    let m = phase_modulus(f.prime());
    let step = omega_step(f.prime());
    // per-factor tables: X(a)Z(b)|j⟩ = ω^{tr(bj)} |j + a⟩
    let tables: Vec<(Vec<u32>, Vec<u32>)> = (0..n)
        .map(|s| {
            let (a, b) = (w.a_part()[s], w.b_part()[s]);
            (0..q)
                .map(|j| {
                    let j = FieldElem::from_index(j as u128);
                    (f.add(j, a).index() as u32, f.trace(f.mul(b, j)).value() * step)
                })
                .unzip()
        })
        .collect();
    let mut perm = vec![0u32; dim];
    let mut phase = vec![0u32; dim];
    for y in 0..dim {
        let (mut rest, mut dest, mut ph, mut scale) = (y, 0usize, label.phase(), 1usize);
        for s in (0..n).rev() {
            let digit = rest % q;
            rest /= q;
            dest += tables[s].0[digit] as usize * scale;
            ph += tables[s].1[digit];
            scale *= q;
        }
        perm[y] = dest as u32;
        phase[y] = ph % m;
    }
    Ok(Monomial { perm, phase, modulus: m })
}

/// Dense `W̃(w) = X(a₁)Z(b₁) ⊗ … ⊗ X(a_n)Z(b_n)`.
pub fn weyl_matrix(f: &FieldTower, w: &SympVector) -> Result<CMatrix, DenseError> {
    Ok(weyl_monomial(f, &WeylLabel::plain(f, w.clone()))?.to_dense())
}

/// Density matrix on `n` factors of dimension `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    q: usize,
    n: usize,
    mat: CMatrix,
}

impl DensityMatrix {
    pub fn new(q: usize, n: usize, mat: CMatrix) -> Result<Self, DenseError> {
        let dim = q.pow(n as u32);
        if mat.nrows() != dim || mat.ncols() != dim {
            return Err(DenseError::Mismatch(format!("{}x{} matrix for {n} factors of {q}", mat.nrows(), mat.ncols())));
        }
        Ok(DensityMatrix { q, n, mat })
    }

    pub fn maximally_mixed(q: usize, n: usize) -> Self {
        let dim = q.pow(n as u32);
        let mat = CMatrix::identity(dim, dim).scale(1.0 / dim as f64);
        DensityMatrix { q, n, mat }
    }

    /// `|ψ⟩⟨ψ|` for a normalised copy of `psi`.
    pub fn pure(q: usize, n: usize, psi: &[Complex64]) -> Result<Self, DenseError> {
        let v = nalgebra::DVector::from_column_slice(psi);
        let norm = v.norm();
        if norm == 0.0 {
            return Err(DenseError::InvalidState("zero vector".into()));
        }
        let v = v.unscale(norm);
        Self::new(q, n, &v * v.adjoint())
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    /// Hermitian, unit-trace and positive within `tol`.
    pub fn validate(&self, tol: f64) -> Result<(), DenseError> {
        let herm = (&self.mat - self.mat.adjoint()).camax();
        if herm > tol {
            return Err(DenseError::InvalidState(format!("hermiticity residual {herm:e}")));
        }
        let tr = self.mat.trace();
        if (tr - Complex64::new(1.0, 0.0)).norm() > tol {
            return Err(DenseError::InvalidState(format!("trace {tr}")));
        }
        let min = hermitian_eigenvalues(&self.mat).into_iter().fold(f64::INFINITY, f64::min);
        if min < -tol {
            return Err(DenseError::InvalidState(format!("eigenvalue {min:e}")));
        }
        Ok(())
    }
}

pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let h = (m + m.adjoint()).scale(0.5);
    h.symmetric_eigenvalues().iter().copied().collect()
}

/// Stabilizer elements as monomials with the character data needed for `P_[w]`.
#[derive(Clone, Debug)]
pub struct ProjectorFamily {
    q: usize,
    n: usize,
    rank: usize,
    quotient: Quotient,
    elements: Vec<Monomial>,
    /// `B(v, r_i)` for each element `v` and coset representative `r_i`.
    pairings: Vec<Vec<FieldElem>>,
    prime: u32,
}

pub fn stabilizer_projectors(f: &FieldTower, stab: &Stabilizer) -> Result<ProjectorFamily, DenseError> {
    let n = stab.n();
    let dim = dense_dimension(f, n)?;
    let size = f.order().checked_pow(stab.d() as u32).unwrap_or(u128::MAX);
    let work = size.saturating_mul(dim as u128);
    if work > CHARACTER_WORK_LIMIT {
        return Err(DenseError::CharacterGuard(work));
    }
    let vectors = stab.subspace().elements(f);
    let labels = stab.elements(f);
    let quotient = stab.quotient().clone();
    let reps: Vec<SympVector> = (0..quotient.label_len())
        .map(|i| {
            let mut c = vec![FieldElem::ZERO; quotient.label_len()];
            c[i] = FieldElem::ONE;
            quotient.representative(f, &CosetLabel::from_coefficients(c))
        })
        .collect();
    let pairings = vectors.iter().map(|v| reps.iter().map(|r| bilinear_form(f, v, r)).collect()).collect();
    let elements = labels.iter().map(|l| weyl_monomial(f, l)).collect::<Result<Vec<_>, _>>()?;
    let q = f.order() as usize;
    Ok(ProjectorFamily { q, n, rank: q.pow((n - stab.d()) as u32), quotient, elements, pairings, prime: f.prime() })
}

impl ProjectorFamily {
    pub fn dim(&self) -> usize {
        self.q.pow(self.n as u32)
    }

    /// Common rank `q^{n−d}` of every projector.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn quotient(&self) -> &Quotient {
        &self.quotient
    }

    pub fn labels(&self, f: &FieldTower) -> Vec<CosetLabel> {
        self.quotient.labels(f)
    }

    pub fn stabilizer_size(&self) -> usize {
        self.elements.len()
    }

    /// Dense `W(v)` for the `i`-th element of `V`.
    pub fn element_matrix(&self, i: usize) -> CMatrix {
        self.elements[i].to_dense()
    }

    /// `⟨v_i, J w⟩ ∈ F_p` for the `i`-th element of `V` and any `w ∈ [label]`.
    pub fn character_exponent(&self, f: &FieldTower, i: usize, label: &CosetLabel) -> u32 {
        let s = label
            .coefficients()
            .iter()
            .zip(&self.pairings[i])
            .fold(FieldElem::ZERO, |acc, (&c, &b)| f.add(acc, f.mul(c, b)));
        f.trace(s).value()
    }

    /// `P_[w] = |V|⁻¹ Σ_v ω^{−⟨v,Jw⟩} W(v)`.
    pub fn projector(&self, f: &FieldTower, label: &CosetLabel) -> CMatrix {
        let d = self.dim();
        let omega = roots_of_unity(self.prime);
        let inv = 1.0 / self.elements.len() as f64;
        let mut out = CMatrix::zeros(d, d);
        for (i, el) in self.elements.iter().enumerate() {
            let e = self.character_exponent(f, i, label);
            let chi = omega[((self.prime - e) % self.prime) as usize] * inv;
            let c = el.coefficients();
            for y in 0..d {
                out[(el.perm[y] as usize, y)] += chi * c[y];
            }
        }
        out
    }

    /// `Tr(P_[w] ρ)` for every label, in label-index order.
    pub fn probabilities(&self, f: &FieldTower, rho: &CMatrix) -> Vec<f64> {
        let omega = roots_of_unity(self.prime);
        let traces: Vec<Complex64> = self.elements.iter().map(|el| el.trace_with(rho)).collect();
        let inv = 1.0 / self.elements.len() as f64;
        self.quotient
            .labels(f)
            .iter()
            .map(|label| {
                let s: Complex64 = traces
                    .iter()
                    .enumerate()
                    .map(|(i, t)| omega[((self.prime - self.character_exponent(f, i, label)) % self.prime) as usize] * t)
                    .sum();
                s.re * inv
            })
            .collect()
    }
}

/// `P_[0] / q^{n−d}`.
pub fn initial_state(f: &FieldTower, fam: &ProjectorFamily) -> DensityMatrix {
    let zero = CosetLabel::from_coefficients(vec![FieldElem::ZERO; fam.quotient.label_len()]);
    let p0 = fam.projector(f, &zero).scale(1.0 / fam.rank as f64);
    DensityMatrix { q: fam.q, n: fam.n, mat: p0 }
}

/// Conjugation by `X(a₁)Z(b₁) ⊗ … ⊗ X(a_n)Z(b_n)`.
pub fn apply_local_weyls(
    f: &FieldTower,
    rho: &DensityMatrix,
    labels: &[(FieldElem, FieldElem)],
) -> Result<DensityMatrix, DenseError> {
    if labels.len() != rho.n {
        return Err(DenseError::Mismatch(format!("{} labels for {} subsystems", labels.len(), rho.n)));
    }
    let (a, b): (Vec<_>, Vec<_>) = labels.iter().copied().unzip();
    apply_weyl(f, rho, &SympVector::from_parts(&a, &b))
}

pub fn apply_weyl(f: &FieldTower, rho: &DensityMatrix, w: &SympVector) -> Result<DensityMatrix, DenseError> {
    if w.n() != rho.n {
        return Err(DenseError::Mismatch(format!("{}-qudit label on {} subsystems", w.n(), rho.n)));
    }
    let u = weyl_monomial(f, &WeylLabel::plain(f, w.clone()))?;
    Ok(DensityMatrix { q: rho.q, n: rho.n, mat: u.conjugate(&rho.mat) })
}

/// Outcome distribution `Tr(P_[w] ρ)` over all labels.
pub fn measure_pvm(f: &FieldTower, rho: &DensityMatrix, fam: &ProjectorFamily) -> Result<Vec<(CosetLabel, f64)>, DenseError> {
    if rho.dim() != fam.dim() {
        return Err(DenseError::Mismatch(format!("state dim {} vs family dim {}", rho.dim(), fam.dim())));
    }
    let probs = fam.probabilities(f, &rho.mat);
    Ok(fam.quotient.labels(f).into_iter().zip(probs).collect())
}

/// `Tr` over every subsystem not in `keep`; kept factors stay in ascending order.
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix, DenseError> {
    let mut keep_sorted = keep.to_vec();
    keep_sorted.sort_unstable();
    keep_sorted.dedup();
    if keep_sorted.len() != keep.len() || keep_sorted.iter().any(|&s| s >= rho.n) {
        return Err(DenseError::InvalidSubsystems(keep.to_vec()));
    }
    let (q, n) = (rho.q, rho.n);
    let kd = q.pow(keep_sorted.len() as u32);
    let td = q.pow((n - keep_sorted.len()) as u32);
    // full index from (kept, traced) digit groups
    let mut full = vec![0usize; kd * td];
    for y in 0..rho.dim() {
        let (mut rest, mut k, mut t) = (y, 0usize, 0usize);
        let (mut ks, mut ts) = (1usize, 1usize);
        for s in (0..n).rev() {
            let digit = rest % q;
            rest /= q;
            if keep_sorted.binary_search(&s).is_ok() {
                k += digit * ks;
                ks *= q;
            } else {
                t += digit * ts;
                ts *= q;
            }
        }
        full[k * td + t] = y;
    }
    let mut out = CMatrix::zeros(kd, kd);
    for i in 0..kd {
        for j in 0..kd {
            out[(i, j)] = (0..td).map(|t| rho.mat[(full[i * td + t], full[j * td + t])]).sum();
        }
    }
    Ok(DensityMatrix { q, n: keep_sorted.len(), mat: out })
}

/// Von Neumann entropy in bits, with `0 log 0 = 0`.
pub fn entropy(rho: &DensityMatrix) -> f64 {
    matrix_entropy(&rho.mat)
}

pub fn matrix_entropy(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m)
        .into_iter()
        .filter(|&l| l > -EIGEN_CLIP)
        .map(|l| -l * l.log2())
        .sum::<f64>()
        .max(0.0)
}

/// `H(Σ p_x ρ_x) − Σ p_x H(ρ_x)`.
pub fn holevo_information(ensemble: &[(f64, DensityMatrix)]) -> Result<f64, DenseError> {
    let first = ensemble.first().ok_or(DenseError::NotNormalized(0.0))?;
    let total: f64 = ensemble.iter().map(|(p, _)| p).sum();
    if (total - 1.0).abs() > 1e-9 || ensemble.iter().any(|(p, _)| *p < 0.0) {
        return Err(DenseError::NotNormalized(total));
    }
    let dim = first.1.dim();
    let mut avg = CMatrix::zeros(dim, dim);
    let mut cond = 0.0;
    for (p, rho) in ensemble {
        if rho.dim() != dim {
            return Err(DenseError::Mismatch("ensemble members differ in dimension".into()));
        }
        avg += rho.mat.scale(*p);
        cond += p * entropy(rho);
    }
    Ok((matrix_entropy(&avg) - cond).max(0.0))
}

/// Holevo quantity of the uniform ensemble `{U_x ρ U_x*}`. Unitary invariance gives
/// `H(U ρ U*) = H(ρ)`, so only the average state needs a fresh eigendecomposition.
pub fn holevo_unitary_orbit(rho: &DensityMatrix, unitaries: &[Monomial]) -> Result<f64, DenseError> {
    let avg = orbit_average(rho, unitaries)?;
    Ok((matrix_entropy(&avg) - entropy(rho)).max(0.0))
}

/// `|X|⁻¹ Σ_x U_x ρ U_x*`.
pub fn orbit_average(rho: &DensityMatrix, unitaries: &[Monomial]) -> Result<CMatrix, DenseError> {
    if unitaries.is_empty() {
        return Err(DenseError::NotNormalized(0.0));
    }
    let dim = rho.dim();
    let mut avg = CMatrix::zeros(dim, dim);
    let mut buf = CMatrix::zeros(dim, dim);
    for u in unitaries {
        if u.dim() != dim {
            return Err(DenseError::Mismatch("unitary dimension".into()));
        }
        u.conjugate_into(&rho.mat, &mut buf);
        avg += &buf;
    }
    avg.unscale_mut(unitaries.len() as f64);
    Ok(avg)
}

/// `½‖ρ − σ‖₁`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> f64 {
    matrix_trace_distance(&rho.mat, &sigma.mat)
}

pub fn matrix_trace_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let diff = a - b;
    (0.5 * hermitian_eigenvalues(&diff).iter().map(|l| l.abs()).sum::<f64>()).clamp(0.0, 1.0)
}

/// Upper bound `½√dim ‖ρ − σ‖_F` on the trace distance, at `O(dim²)` cost.
pub fn trace_distance_upper_bound(a: &CMatrix, b: &CMatrix) -> f64 {
    let frob = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    0.5 * (a.nrows() as f64).sqrt() * frob
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stabilizer_engine::build_stabilizer;
    use crate::symplectic_space::{orthogonal_complement, Subspace};

    fn sv(c: &[u128]) -> SympVector {
        SympVector::from_indices(c).unwrap()
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn bell(f: &FieldTower) -> Stabilizer {
        let v = Subspace::new(f, 2, vec![sv(&[1, 1, 0, 0]), sv(&[0, 0, 1, 1])]).unwrap();
        build_stabilizer(f, &v).unwrap()
    }

    #[test]
    fn qubit_paulis() {
        let f = FieldTower::prime_power(2).unwrap();
        let x = weyl_matrix(&f, &sv(&[1, 0])).unwrap();
        let z = weyl_matrix(&f, &sv(&[0, 1])).unwrap();
        assert_eq!(x, CMatrix::from_row_slice(2, 2, &[c(0.), c(1.), c(1.), c(0.)]));
        assert_eq!(z, CMatrix::from_row_slice(2, 2, &[c(1.), c(0.), c(0.), c(-1.)]));
    }

    #[test]
    fn z_alpha_over_f4_uses_trace() {
        let f = FieldTower::build(2, 1).unwrap();
        let alpha = f.generator(1);
        let z = weyl_matrix(&f, &SympVector::from_parts(&[FieldElem::ZERO], &[alpha])).unwrap();
        let expected: Vec<f64> = f
            .elements()
            .map(|j| if f.trace(f.mul(alpha, j)).is_zero() { 1.0 } else { -1.0 })
            .collect();
        assert_eq!(expected, vec![1.0, -1.0, -1.0, 1.0]);
        for (i, e) in expected.iter().enumerate() {
            assert_eq!(z[(i, i)], c(*e));
        }
        for w in Subspace::full(2).elements(&f).iter().step_by(7) {
            let u = weyl_matrix(&f, w).unwrap();
            assert!((&u * u.adjoint() - CMatrix::identity(16, 16)).camax() < 1e-12);
        }
    }

    #[test]
    fn monomial_ops_match_dense() {
        let f = FieldTower::prime_power(3).unwrap();
        let u = weyl_monomial(&f, &WeylLabel::new(&f, sv(&[1, 2, 2, 1]), 1)).unwrap();
        let v = weyl_monomial(&f, &WeylLabel::plain(&f, sv(&[2, 0, 1, 1]))).unwrap();
        let rho = DensityMatrix::pure(3, 2, &(0..9).map(|i| Complex64::new(i as f64, 1.0 - i as f64)).collect::<Vec<_>>())
            .unwrap();
        let (ud, vd) = (u.to_dense(), v.to_dense());
        assert!((u.conjugate(rho.matrix()) - &ud * rho.matrix() * ud.adjoint()).camax() < 1e-12);
        assert!((u.trace_with(rho.matrix()) - (&ud * rho.matrix()).trace()).norm() < 1e-12);
        assert!((u.compose(&v).to_dense() - &ud * &vd).camax() < 1e-12);
    }

    #[test]
    fn bell_projectors_and_initial_state() {
        let f = FieldTower::prime_power(2).unwrap();
        let fam = stabilizer_projectors(&f, &bell(&f)).unwrap();
        let rho = initial_state(&f, &fam);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let phi = DensityMatrix::pure(2, 2, &[c(h), c(0.), c(0.), c(h)]).unwrap();
        assert!((rho.matrix() - phi.matrix()).camax() < 1e-12);
        assert_eq!(fam.rank(), 1);
        let half = partial_trace(&rho, &[0]).unwrap();
        assert!((half.matrix() - DensityMatrix::maximally_mixed(2, 1).matrix()).camax() < 1e-12);
        assert!((entropy(&half) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trivial_stabilizer_gives_identity_projector() {
        let f = FieldTower::prime_power(2).unwrap();
        let stab = build_stabilizer(&f, &Subspace::zero(1)).unwrap();
        let fam = stabilizer_projectors(&f, &stab).unwrap();
        let labels = fam.labels(&f);
        assert_eq!(labels.len(), 1);
        assert!((fam.projector(&f, &labels[0]) - CMatrix::identity(2, 2)).camax() < 1e-15);
        let rho = initial_state(&f, &fam);
        assert!((rho.matrix() - DensityMatrix::maximally_mixed(2, 1).matrix()).camax() < 1e-15);
        // mixed input measured by the full-rank stabilizer is uniform
        let bell_fam = stabilizer_projectors(&f, &bell(&f)).unwrap();
        let dist = measure_pvm(&f, &DensityMatrix::maximally_mixed(2, 2), &bell_fam).unwrap();
        assert!(dist.iter().all(|(_, p)| (p - 0.25).abs() < 1e-12));
    }

    fn check_family(f: &FieldTower, v: &Subspace) {
        let stab = build_stabilizer(f, v).unwrap();
        let fam = stabilizer_projectors(f, &stab).unwrap();
        let dim = fam.dim();
        let labels = fam.labels(f);
        let ps: Vec<CMatrix> = labels.iter().map(|l| fam.projector(f, l)).collect();
        let mut sum = CMatrix::zeros(dim, dim);
        for (i, p) in ps.iter().enumerate() {
            assert!((p * p - p).camax() < 1e-10);
            assert!((p - p.adjoint()).camax() < 1e-10);
            assert!((p.trace().re - fam.rank() as f64).abs() < 1e-10);
            for other in ps.iter().skip(i + 1) {
                assert!((p * other).camax() < 1e-10);
            }
            sum += p;
        }
        assert!((sum - CMatrix::identity(dim, dim)).camax() < 1e-10);
        // W(v) = Σ_[w] ω^{⟨v,Jw⟩} P_[w]
        let omega = roots_of_unity(f.prime());
        for i in 0..fam.stabilizer_size() {
            let mut rec = CMatrix::zeros(dim, dim);
            for (l, p) in labels.iter().zip(&ps) {
                rec += p * omega[fam.character_exponent(f, i, l) as usize];
            }
            assert!((rec - fam.element_matrix(i)).norm() < 1e-9);
        }
        // conjugating P_[w]/rank by W̃(w') gives P_[w+w']/rank
        let rho0 = initial_state(f, &fam);
        let perp = orthogonal_complement(f, v);
        for w in Subspace::full(v.n()).elements(f).iter().step_by(5) {
            let moved = apply_weyl(f, &rho0, w).unwrap();
            let label = fam.quotient().reduce(f, w);
            let target = fam.projector(f, &label).scale(1.0 / fam.rank() as f64);
            assert!((moved.matrix() - target).norm() < 1e-9);
            let dist = measure_pvm(f, &moved, &fam).unwrap();
            for (l, p) in dist {
                let expect = if l == label { 1.0 } else { 0.0 };
                assert!((p - expect).abs() < 1e-9);
            }
            assert_eq!(label.is_zero(), perp.contains(f, w));
        }
    }

    #[test]
    fn projector_families_satisfy_invariants() {
        let f2 = FieldTower::prime_power(2).unwrap();
        check_family(&f2, &Subspace::new(&f2, 2, vec![sv(&[1, 1, 0, 0]), sv(&[0, 0, 1, 1])]).unwrap());
        check_family(&f2, &Subspace::new(&f2, 3, vec![sv(&[1, 1, 1, 0, 0, 0])]).unwrap());
        let f3 = FieldTower::prime_power(3).unwrap();
        check_family(&f3, &Subspace::new(&f3, 2, vec![sv(&[1, 1, 1, 2])]).unwrap());
        let f4 = FieldTower::prime_power(4).unwrap();
        check_family(&f4, &Subspace::new(&f4, 2, vec![sv(&[1, 2, 0, 0])]).unwrap());
    }

    #[test]
    fn local_weyls_round_trip() {
        let f = FieldTower::prime_power(4).unwrap();
        let v = Subspace::new(&f, 2, vec![sv(&[1, 1, 0, 0]), sv(&[0, 0, 1, 1])]).unwrap();
        let fam = stabilizer_projectors(&f, &build_stabilizer(&f, &v).unwrap()).unwrap();
        let rho = initial_state(&f, &fam);
        rho.validate(1e-10).unwrap();
        let e = |i| FieldElem::from_index(i);
        let same = apply_local_weyls(&f, &rho, &[(e(0), e(0)), (e(0), e(0))]).unwrap();
        assert_eq!(same.matrix(), rho.matrix());
        let w = sv(&[2, 3, 1, 2]);
        let there = apply_weyl(&f, &rho, &w).unwrap();
        let back = apply_weyl(&f, &there, &w.neg(&f)).unwrap();
        assert!((back.matrix() - rho.matrix()).camax() < 1e-10);
        assert!(apply_local_weyls(&f, &rho, &[(e(1), e(0))]).is_err());
        for x in v.elements(&f) {
            let fixed = apply_weyl(&f, &rho, &x).unwrap();
            assert!((fixed.matrix() - rho.matrix()).camax() < 1e-10);
        }
    }

    #[test]
    fn partial_trace_of_product_state() {
        let sigma = DensityMatrix::pure(2, 1, &[c(0.6), Complex64::new(0.0, 0.8)]).unwrap();
        let tau = DensityMatrix::maximally_mixed(2, 1);
        let prod = DensityMatrix::new(2, 2, sigma.matrix().kronecker(tau.matrix())).unwrap();
        assert!((partial_trace(&prod, &[0]).unwrap().matrix() - sigma.matrix()).camax() < 1e-12);
        assert!((partial_trace(&prod, &[1]).unwrap().matrix() - tau.matrix()).camax() < 1e-12);
        assert_eq!(partial_trace(&prod, &[0, 1]).unwrap().matrix(), prod.matrix());
        assert!(partial_trace(&prod, &[2]).is_err());
        assert!(partial_trace(&prod, &[0, 0]).is_err());
    }

    #[test]
    fn entropic_quantities() {
        let zero = DensityMatrix::pure(2, 1, &[c(1.), c(0.)]).unwrap();
        let one = DensityMatrix::pure(2, 1, &[c(0.), c(1.)]).unwrap();
        assert!((entropy(&DensityMatrix::maximally_mixed(2, 1)) - 1.0).abs() < 1e-12);
        assert!(entropy(&zero).abs() < 1e-12);
        let h = holevo_information(&[(0.5, zero.clone()), (0.5, one.clone())]).unwrap();
        assert!((h - 1.0).abs() < 1e-12);
        assert!(holevo_information(&[(0.5, zero.clone()), (0.5, zero.clone())]).unwrap() < 1e-12);
        assert!(holevo_information(&[(0.4, zero.clone())]).is_err());
        assert_eq!(trace_distance(&zero, &zero), 0.0);
        assert!((trace_distance(&zero, &one) - 1.0).abs() < 1e-12);
        let plus = DensityMatrix::pure(2, 1, &[c(1.), c(1.)]).unwrap();
        let d = trace_distance(&zero, &plus);
        assert!((d - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(trace_distance_upper_bound(zero.matrix(), plus.matrix()) >= d);
    }

    #[test]
    fn unitary_orbit_holevo_matches_general_formula() {
        let f = FieldTower::prime_power(3).unwrap();
        let rho = DensityMatrix::pure(3, 1, &[c(0.8), c(0.6), c(0.)]).unwrap();
        let us: Vec<Monomial> = Subspace::full(1)
            .elements(&f)
            .iter()
            .take(4)
            .map(|w| weyl_monomial(&f, &WeylLabel::plain(&f, w.clone())).unwrap())
            .collect();
        let ens: Vec<(f64, DensityMatrix)> = us
            .iter()
            .map(|u| (0.25, DensityMatrix::new(3, 1, u.conjugate(rho.matrix())).unwrap()))
            .collect();
        let general = holevo_information(&ens).unwrap();
        let orbit = holevo_unitary_orbit(&rho, &us).unwrap();
        assert!(general > 0.1);
        assert!((general - orbit).abs() < 1e-10);
    }

    #[test]
    fn dimension_guard() {
        let f = FieldTower::prime_power(16).unwrap();
        assert!(matches!(weyl_matrix(&f, &SympVector::zero(4)), Err(DenseError::DimensionGuard { .. })));
        assert!(dense_dimension(&f, 3).is_ok());
    }
}
