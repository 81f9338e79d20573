//! Security measures, costs, capacities and converse-bound calculators.
//!
//! Information quantities are in bits. `η₀` uses the natural logarithm so that its
//! `1/e` cap is the maximum of `−x ln x`.

use std::collections::HashMap;

use itertools::Itertools;
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense_backend::{
    self, matrix_trace_distance, trace_distance_upper_bound, CMatrix, DenseError, DensityMatrix, Monomial,
};
use crate::finite_field::FieldElem;
use crate::linalg::FqMatrix;
use crate::qpir_protocol::{server_encode, user_decode, user_query, ProtocolError, ProtocolInstance};
use crate::stabilizer_engine::WeylLabel;
use crate::symplectic_space::{CosetLabel, SympVector};

/// Base of the logarithm inside `η₀`.
pub const ETA_LOG_BASE: f64 = std::f64::consts::E;
/// Base of every other logarithm (entropies, `h₂`, `log M`, `log D`).
pub const INFO_LOG_BASE: f64 = 2.0;

pub const HOLEVO_TOLERANCE: f64 = 1e-9;
pub const TRACE_DISTANCE_TOLERANCE: f64 = 1e-10;
pub const USER_INFO_TOLERANCE: f64 = 1e-12;
/// Trace-distance values at or below this are reported from the Frobenius bound.
const FROBENIUS_SHORTCUT: f64 = 1e-12;
/// Ensembles up to this size get exact pairwise trace distances.
const PAIRWISE_LIMIT: usize = 64;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("domain violation: {0}")]
    Domain(String),
    #[error("enumeration guard exceeded: {size} > {limit}")]
    EnumerationGuard { size: f64, limit: u64 },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Dense(#[from] DenseError),
}

fn info_log(x: f64) -> f64 {
    x.log(INFO_LOG_BASE)
}

/// Binary entropy in bits.
pub fn h2(x: f64) -> Result<f64, AuditError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(AuditError::Domain(format!("h2({x})")));
    }
    let term = |p: f64| if p == 0.0 { 0.0 } else { -p * info_log(p) };
    Ok(term(x) + term(1.0 - x))
}

/// `1/e` above `1/e`, `−x log x` on `[0, 1/e]` (with `η₀(0) = 0`).
pub fn eta0(x: f64) -> Result<f64, AuditError> {
    if x.is_nan() || x < 0.0 {
        return Err(AuditError::Domain(format!("eta0({x})")));
    }
    let cap = 1.0 / std::f64::consts::E;
    Ok(if x > cap {
        cap
    } else if x == 0.0 {
        0.0
    } else {
        -x * x.log(ETA_LOG_BASE)
    })
}

fn collusion_term(gamma: f64, files: u32) -> Result<f64, AuditError> {
    if gamma < 0.0 || files == 0 {
        return Err(AuditError::Domain(format!("gamma={gamma}, F={files}")));
    }
    Ok((2.0 * files as f64 * gamma).sqrt())
}

/// `f(α, β, γ, F) = β + η₀(2√(2Fγ)) + 2h₂(2√(2Fγ)) + h₂(α)`.
pub fn f_bound(alpha: f64, beta: f64, gamma: f64, files: u32) -> Result<f64, AuditError> {
    let s = 2.0 * collusion_term(gamma, files)?;
    Ok(beta + eta0(s)? + 2.0 * h2(s)? + h2(alpha)?)
}

/// `g(M, γ) = 10√(2Fγ) log M + η₀(2√(2Fγ)) + 2h₂(2√(2Fγ))`.
pub fn g_bound(log_m: f64, gamma: f64, files: u32) -> Result<f64, AuditError> {
    let r = collusion_term(gamma, files)?;
    Ok(10.0 * r * log_m + eta0(2.0 * r)? + 2.0 * h2(2.0 * r)?)
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConverseInputs {
    /// `log M`.
    pub log_m: f64,
    /// `log` of one server's answer dimension.
    pub log_d: f64,
    pub servers: u32,
    pub collusion: u32,
    pub files: u32,
    pub p_err: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConverseStatus {
    Passed,
    Failed,
    HypothesisViolated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConverseCertificate {
    pub status: ConverseStatus,
    pub lhs: f64,
    pub rhs: Option<f64>,
    pub slack: Option<f64>,
}

impl ConverseCertificate {
    pub fn passed(&self) -> bool {
        self.status == ConverseStatus::Passed
    }
}

/// `log M ≤ (2(N−T) log D + f(P_err, β, γ, F)) / (1 − P_err − 10√(2Fγ))`, evaluated only
/// under `P_err ≤ min{1/2, 1 − 10√(2Fγ)}`.
pub fn converse_check(x: &ConverseInputs) -> Result<ConverseCertificate, AuditError> {
    if x.collusion == 0 || x.collusion >= x.servers || !(0.0..=1.0).contains(&x.p_err) || x.beta < 0.0 {
        return Err(AuditError::Domain(format!("{x:?}")));
    }
    let r = 10.0 * collusion_term(x.gamma, x.files)?;
    if x.p_err > 0.5f64.min(1.0 - r) || r >= 1.0 - x.p_err {
        return Ok(ConverseCertificate { status: ConverseStatus::HypothesisViolated, lhs: x.log_m, rhs: None, slack: None });
    }
    let num = 2.0 * (x.servers - x.collusion) as f64 * x.log_d + f_bound(x.p_err, x.beta, x.gamma, x.files)?;
    let rhs = num / (1.0 - x.p_err - r);
    let slack = rhs - x.log_m;
    let tol = 1e-12 * rhs.abs().max(1.0);
    let status = if slack >= -tol { ConverseStatus::Passed } else { ConverseStatus::Failed };
    Ok(ConverseCertificate { status, lhs: x.log_m, rhs: Some(rhs), slack: Some(slack) })
}

/// Quantum capacity `min{1, 2(N−T)/N}`.
pub fn capacity(servers: u64, collusion: u64) -> Result<Ratio<u64>, AuditError> {
    if servers < 2 || collusion == 0 || collusion >= servers {
        return Err(AuditError::Domain(format!("N={servers}, T={collusion}")));
    }
    Ok(Ratio::new(2 * (servers - collusion), servers).min(Ratio::from_integer(1)))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicalVariant {
    /// `(1 − 1/N)/(1 − N^{−F})`.
    Pir,
    /// `1 − 1/N`.
    SymmetricPir,
    /// `(1 − T/N)/(1 − (T/N)^F)`.
    TPrivate,
    /// `(N − T)/N`.
    SymmetricTPrivate,
}

impl ClassicalVariant {
    pub const ALL: [ClassicalVariant; 4] =
        [ClassicalVariant::Pir, ClassicalVariant::SymmetricPir, ClassicalVariant::TPrivate, ClassicalVariant::SymmetricTPrivate];
}

/// Classical reference capacity; `files = None` takes the `F → ∞` limit.
pub fn classical_capacity(servers: u64, collusion: u64, files: Option<u64>, variant: ClassicalVariant) -> Result<f64, AuditError> {
    if servers < 2 || collusion == 0 || collusion >= servers || files.is_some_and(|f| f < 2) {
        return Err(AuditError::Domain(format!("N={servers}, T={collusion}, F={files:?}")));
    }
    let n = servers as f64;
    let t = collusion as f64;
    let tail = |ratio: f64| files.map_or(0.0, |f| ratio.powf(f as f64));
    Ok(match variant {
        ClassicalVariant::Pir => (1.0 - 1.0 / n) / (1.0 - tail(1.0 / n)),
        ClassicalVariant::SymmetricPir => 1.0 - 1.0 / n,
        ClassicalVariant::TPrivate => (1.0 - t / n) / (1.0 - tail(t / n)),
        ClassicalVariant::SymmetricTPrivate => (n - t) / n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Costs {
    /// `log₂ U` with `U = q^{4NF(N−T)}` possible queries.
    pub log2_upload: f64,
    /// `log₂ D`, `D = q^N`.
    pub log2_download: f64,
    /// `log₂ M`, `M = q^{2(N−T)}`.
    pub log2_message: f64,
    pub rate: String,
    pub rate_value: f64,
}

pub fn rate_and_costs(inst: &ProtocolInstance) -> Costs {
    let n = inst.servers() as u64;
    let t = inst.effective_t() as u64;
    let lq = inst.tower().log2_order();
    let rate = Ratio::new(2 * (n - t), n);
    Costs {
        log2_upload: (4 * n * inst.files() as u64 * (n - t)) as f64 * lq,
        log2_download: n as f64 * lq,
        log2_message: (2 * (n - t)) as f64 * lq,
        rate: rate.to_string(),
        rate_value: *rate.numer() as f64 / *rate.denom() as f64,
    }
}

pub fn rate(inst: &ProtocolInstance) -> Ratio<u64> {
    let n = inst.servers() as u64;
    Ratio::new(2 * (n - inst.effective_t() as u64), n)
}

/// Budgets controlling exhaustive versus sampled evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditPlan {
    pub seed: u64,
    /// Exact enumeration of `R` for user secrecy.
    pub exact: bool,
    /// Samples per file index for sampled grids.
    pub samples: usize,
    /// Error grids at most this large are enumerated.
    pub error_grid_limit: u64,
    /// Guard on exact `R` enumeration.
    pub enumeration_limit: u64,
    /// Server-secrecy ensembles larger than this use a random sub-alphabet of this size.
    pub ensemble_limit: usize,
    /// Queries (random `R`, random `m_k`) tested per file index for server secrecy.
    pub secrecy_queries: usize,
}

impl Default for AuditPlan {
    fn default() -> Self {
        AuditPlan {
            seed: 0,
            exact: true,
            samples: 1000,
            error_grid_limit: 100_000,
            enumeration_limit: 1_000_000,
            ensemble_limit: 4096,
            secrecy_queries: 2,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    Exhaustive,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub worst: f64,
    pub average: f64,
    pub mode: GridMode,
    pub points: u64,
    pub failures: u64,
}

/// Decoder hook: outcome label to the user's output.
pub type Decoder<'a> = &'a dyn Fn(&ProtocolInstance, &CosetLabel) -> Vec<FieldElem>;

fn digits(mut idx: u128, q: u128, len: usize) -> Vec<FieldElem> {
    (0..len)
        .map(|_| {
            let d = FieldElem::from_index(idx % q);
            idx /= q;
            d
        })
        .collect()
}

fn matrix_from_index(idx: u128, q: u128, rows: usize, cols: usize) -> FqMatrix {
    let d = digits(idx, q, rows * cols);
    if rows == 0 {
        return FqMatrix::zeros(0, cols);
    }
    FqMatrix::from_rows(&d.chunks(cols).map(<[FieldElem]>::to_vec).collect::<Vec<_>>())
}

fn random_matrix(rng: &mut ChaCha8Rng, q: u128, rows: usize, cols: usize) -> FqMatrix {
    matrix_from_index(rng.gen_range(0..q.pow((rows * cols) as u32).max(1)), q, rows, cols)
}

fn random_vec(rng: &mut ChaCha8Rng, q: u128, len: usize) -> Vec<FieldElem> {
    (0..len).map(|_| FieldElem::from_index(rng.gen_range(0..q))).collect()
}

fn space_size(q: u128, len: usize) -> f64 {
    (q as f64).powi(len as i32)
}

/// Joint Weyl label `q^⊤ m` assembled from the per-server answers.
pub fn joint_answer(inst: &ProtocolInstance, k: usize, m: &[FieldElem], r: &FqMatrix) -> Result<SympVector, AuditError> {
    let f = inst.tower();
    let query = user_query(inst, k, r)?;
    let n = inst.servers();
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for s in 0..n {
        let label = server_encode(f, &query.server_query(s), m)?;
        a.push(label.w().a_part()[0]);
        b.push(label.w().b_part()[0]);
    }
    Ok(SympVector::from_parts(&a, &b))
}

fn retrieval_fails(inst: &ProtocolInstance, k: usize, m: &[FieldElem], r: &FqMatrix, decoder: Decoder) -> Result<bool, AuditError> {
    let f = inst.tower();
    let w = joint_answer(inst, k, m, r)?;
    let stab = inst.stabilizer();
    let state = stab.apply(f, &stab.initial_state(), &w);
    let out = decoder(inst, &stab.measure(&state).label);
    Ok(out != inst.file(m, k))
}

/// Worst-case and average error over the `(m, k, R)` grid, via the phase-space engine
/// (outcomes are point masses, so each grid point errs with probability 0 or 1).
pub fn error_probability(inst: &ProtocolInstance, plan: &AuditPlan) -> Result<ErrorReport, AuditError> {
    error_probability_with(inst, plan, &|inst, label| user_decode(inst, label))
}

pub fn error_probability_with(inst: &ProtocolInstance, plan: &AuditPlan, decoder: Decoder) -> Result<ErrorReport, AuditError> {
    let q = inst.tower().order();
    let (rr, rc) = inst.randomness_shape();
    let ml = inst.message_len();
    let per_k = space_size(q, ml) * space_size(q, rr * rc);
    let total = per_k * inst.files() as f64;
    let mut failures = 0u64;
    let mut points = 0u64;
    let mode = if total <= plan.error_grid_limit as f64 {
        for k in 1..=inst.files() {
            for mi in 0..q.pow(ml as u32) {
                let m = digits(mi, q, ml);
                for ri in 0..q.pow((rr * rc) as u32) {
                    let r = matrix_from_index(ri, q, rr, rc);
                    failures += retrieval_fails(inst, k, &m, &r, decoder)? as u64;
                    points += 1;
                }
            }
        }
        GridMode::Exhaustive
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        for k in 1..=inst.files() {
            for _ in 0..plan.samples {
                let m = random_vec(&mut rng, q, ml);
                let r = random_matrix(&mut rng, q, rr, rc);
                failures += retrieval_fails(inst, k, &m, &r, decoder)? as u64;
                points += 1;
            }
        }
        GridMode::Sampled
    };
    Ok(ErrorReport {
        worst: if failures > 0 { 1.0 } else { 0.0 },
        average: if points == 0 { 0.0 } else { failures as f64 / points as f64 },
        mode,
        points,
        failures,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub k: usize,
    pub members: usize,
    pub sub_alphabet: bool,
    pub holevo: f64,
    /// Largest trace distance observed against the first member (a lower bound on the
    /// pairwise maximum).
    pub trace_distance_lower: f64,
    /// Upper bound on the pairwise maximum (exact when `pairwise_exact`).
    pub trace_distance_upper: f64,
    pub pairwise_exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerSecrecyReport {
    pub holevo_max: f64,
    pub trace_distance_max: f64,
    pub ensembles: Vec<EnsembleResult>,
}

impl ServerSecrecyReport {
    pub fn passed(&self) -> bool {
        self.holevo_max <= HOLEVO_TOLERANCE && self.trace_distance_max <= TRACE_DISTANCE_TOLERANCE
    }
}

/// `ρ(m_k, m_k^c, q)` for every tested query and `m_k^c`, from the instance's shared state.
pub fn server_secrecy(inst: &ProtocolInstance, plan: &AuditPlan) -> Result<ServerSecrecyReport, AuditError> {
    let rho0 = match inst.dense() {
        Some((_, rho)) => rho.clone(),
        None => {
            let mut dense = inst.clone();
            dense.set_backend(crate::qpir_protocol::Backend::Dense)?;
            dense.dense().expect("materialised").1.clone()
        }
    };
    server_secrecy_from_state(inst, plan, &rho0)
}

/// As [`server_secrecy`] but starting from an arbitrary shared state.
pub fn server_secrecy_from_state(
    inst: &ProtocolInstance,
    plan: &AuditPlan,
    rho0: &DensityMatrix,
) -> Result<ServerSecrecyReport, AuditError> {
    let f = inst.tower();
    let q = f.order();
    let fl = inst.file_len();
    let (rr, rc) = inst.randomness_shape();
    let others = fl * (inst.files() - 1);
    let full = space_size(q, others);
    let sub_alphabet = full > plan.ensemble_limit as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x5e5e);
    let rho0_entropy = dense_backend::entropy(rho0);
    let mut ensembles = Vec::new();
    for k in 1..=inst.files() {
        for _ in 0..plan.secrecy_queries.max(1) {
            let r = random_matrix(&mut rng, q, rr, rc);
            let mk = random_vec(&mut rng, q, fl);
            let complements: Vec<Vec<FieldElem>> = if sub_alphabet {
                (0..plan.ensemble_limit).map(|_| random_vec(&mut rng, q, others)).collect()
            } else {
                (0..q.pow(others as u32)).map(|i| digits(i, q, others)).collect()
            };
            let mut unitaries = Vec::with_capacity(complements.len());
            for c in &complements {
                let mut m = Vec::with_capacity(inst.message_len());
                m.extend_from_slice(&c[..(k - 1) * fl]);
                m.extend_from_slice(&mk);
                m.extend_from_slice(&c[(k - 1) * fl..]);
                let w = joint_answer(inst, k, &m, &r)?;
                unitaries.push(dense_backend::weyl_monomial(f, &WeylLabel::plain(f, w))?);
            }
            ensembles.push(ensemble_secrecy(k, rho0, rho0_entropy, &unitaries, sub_alphabet)?);
        }
    }
    Ok(ServerSecrecyReport {
        holevo_max: ensembles.iter().map(|e| e.holevo).fold(0.0, f64::max),
        trace_distance_max: ensembles.iter().map(|e| e.trace_distance_upper).fold(0.0, f64::max),
        ensembles,
    })
}

fn bounded_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let bound = trace_distance_upper_bound(a, b);
    if bound <= FROBENIUS_SHORTCUT {
        bound
    } else {
        matrix_trace_distance(a, b)
    }
}

fn ensemble_secrecy(
    k: usize,
    rho0: &DensityMatrix,
    rho0_entropy: f64,
    unitaries: &[Monomial],
    sub_alphabet: bool,
) -> Result<EnsembleResult, AuditError> {
    let rho = rho0.matrix();
    let dim = rho0.dim();
    if unitaries.is_empty() || unitaries.iter().any(|u| u.dim() != dim) {
        return Err(DenseError::Mismatch("ensemble unitaries".into()).into());
    }
    // one pass: average state, distances to the first member, and (small ensembles) all members
    let first = unitaries[0].conjugate(rho);
    let pairwise_exact = unitaries.len() <= PAIRWISE_LIMIT;
    let mut avg = CMatrix::zeros(dim, dim);
    let mut lower = 0f64;
    let mut kept = Vec::new();
    let mut state = CMatrix::zeros(dim, dim);
    for u in unitaries {
        u.conjugate_into(rho, &mut state);
        avg += &state;
        lower = lower.max(bounded_distance(&first, &state));
        if pairwise_exact {
            kept.push(state.clone());
        }
    }
    avg.unscale_mut(unitaries.len() as f64);
    let holevo = (dense_backend::matrix_entropy(&avg) - rho0_entropy).max(0.0);
    let upper = if pairwise_exact {
        kept.iter().tuple_combinations().map(|(a, b)| bounded_distance(a, b)).fold(0.0, f64::max)
    } else {
        (2.0 * lower).min(1.0)
    };
    Ok(EnsembleResult {
        k,
        members: unitaries.len(),
        sub_alphabet,
        holevo,
        trace_distance_lower: lower,
        trace_distance_upper: upper,
        pairwise_exact,
    })
}

/// `|ψ⟩⟨ψ|` with `ψ ∝ P_[0] e_j`: the shared state with a pure instead of mixed ancilla.
pub fn pure_ancilla_state(inst: &ProtocolInstance) -> Result<DensityMatrix, AuditError> {
    let mut dense = inst.clone();
    dense.set_backend(crate::qpir_protocol::Backend::Dense)?;
    let (fam, rho) = dense.dense().expect("materialised");
    let p0 = rho.matrix().scale(fam.rank() as f64);
    let j = (0..p0.ncols())
        .max_by(|&a, &b| p0.column(a).norm().total_cmp(&p0.column(b).norm()))
        .expect("nonempty");
    let psi: Vec<_> = p0.column(j).iter().copied().collect();
    Ok(DensityMatrix::pure(rho.q(), rho.n(), &psi)?)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RandomnessMode {
    #[default]
    Uniform,
    /// `R = 0`: the query is a function of `k` alone.
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetInformation {
    /// 1-based server indices.
    pub servers: Vec<usize>,
    pub mutual_information: f64,
    /// Sampled mode: mean and acceptance level of the estimator with `K` permuted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_level: Option<f64>,
}

impl SubsetInformation {
    /// Information attributable to `K` beyond the estimator's bias.
    pub fn excess(&self) -> f64 {
        (self.mutual_information - self.null_mean.unwrap_or(0.0)).max(0.0)
    }

    fn consistent_with_zero(&self) -> bool {
        self.mutual_information <= self.null_level.unwrap_or(0.0) + USER_INFO_TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralCertificate {
    pub all_invertible: bool,
    /// 1-based server subsets with singular `D_{1,π}`.
    pub singular_subsets: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserSecrecyReport {
    pub mode: GridMode,
    pub randomness: RandomnessMode,
    pub collusion: usize,
    /// Every nonempty subset, by size then lexicographically.
    pub subsets: Vec<SubsetInformation>,
    /// Maximum over subsets of size at most the collusion level.
    pub max_private: f64,
    pub samples_per_index: Option<usize>,
    pub structural: StructuralCertificate,
}

impl UserSecrecyReport {
    pub fn passed(&self) -> bool {
        self.structural.all_invertible && self.private().all(SubsetInformation::consistent_with_zero)
    }

    fn private(&self) -> impl Iterator<Item = &SubsetInformation> {
        self.subsets.iter().filter(move |s| s.servers.len() <= self.collusion)
    }

    /// `max_private` when exhaustive, the largest bias-corrected excess when sampled.
    pub fn gamma(&self) -> f64 {
        self.private().map(SubsetInformation::excess).fold(0.0, f64::max)
    }

    /// Value fed to the converse: 0 when every `D_{1,π}` is invertible, else [`Self::gamma`].
    pub fn converse_gamma(&self) -> f64 {
        if self.structural.all_invertible {
            0.0
        } else {
            self.gamma()
        }
    }
}

pub fn structural_certificate(inst: &ProtocolInstance) -> StructuralCertificate {
    let f = inst.tower();
    let t = inst.effective_t();
    let singular: Vec<Vec<usize>> = (0..inst.servers())
        .combinations(t)
        .filter(|pi| !inst.basis().d1_restricted(pi).determinant_is_nonzero(f))
        .map(|pi| pi.iter().map(|s| s + 1).collect())
        .collect();
    StructuralCertificate { all_invertible: singular.is_empty(), singular_subsets: singular }
}

/// `I(K; Q_π)` for uniform `K` and uniform (or zero) `R`, over every nonempty subset `π`.
pub fn user_secrecy(inst: &ProtocolInstance, plan: &AuditPlan, randomness: RandomnessMode) -> Result<UserSecrecyReport, AuditError> {
    let q = inst.tower().order();
    let (rr, rc) = inst.randomness_shape();
    let n = inst.servers();
    let files = inst.files();
    let subsets: Vec<Vec<usize>> = (1..=n).flat_map(|size| (0..n).combinations(size)).collect();
    let row_sets: Vec<Vec<usize>> = subsets.iter().map(|pi| crate::symplectic_space::server_rows(n, pi)).collect();
    let mut counts: Vec<Vec<HashMap<Vec<u128>, u64>>> = vec![vec![HashMap::new(); files]; subsets.len()];
    let sampled = randomness == RandomnessMode::Uniform && !plan.exact;
    let mut labels: Vec<usize> = Vec::new();
    let mut observed: Vec<Vec<Vec<u128>>> = vec![Vec::new(); subsets.len()];
    let mut tally = |k: usize, r: &FqMatrix| -> Result<(), AuditError> {
        let query = user_query(inst, k, r)?;
        if sampled {
            labels.push(k - 1);
        }
        for (si, rows) in row_sets.iter().enumerate() {
            let key: Vec<u128> = rows.iter().flat_map(|&i| query.matrix().row(i).iter().map(|x| x.index())).collect();
            if sampled {
                observed[si].push(key.clone());
            }
            *counts[si][k - 1].entry(key).or_default() += 1;
        }
        Ok(())
    };
    let (mode, samples) = match randomness {
        RandomnessMode::Zero => {
            let zero = FqMatrix::zeros(rr, rc);
            for k in 1..=files {
                tally(k, &zero)?;
            }
            (GridMode::Exhaustive, None)
        }
        RandomnessMode::Uniform if plan.exact => {
            let size = space_size(q, rr * rc);
            if size > plan.enumeration_limit as f64 {
                return Err(AuditError::EnumerationGuard { size, limit: plan.enumeration_limit });
            }
            for ri in 0..q.pow((rr * rc) as u32) {
                let r = matrix_from_index(ri, q, rr, rc);
                for k in 1..=files {
                    tally(k, &r)?;
                }
            }
            (GridMode::Exhaustive, None)
        }
        RandomnessMode::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0xa11ce);
            for k in 1..=files {
                for _ in 0..plan.samples {
                    tally(k, &random_matrix(&mut rng, q, rr, rc))?;
                }
            }
            (GridMode::Sampled, Some(plan.samples))
        }
    };
    let t = inst.effective_t();
    let nulls = if sampled {
        permutation_nulls(&labels, &observed, files, plan.seed)
    } else {
        vec![None; subsets.len()]
    };
    let infos: Vec<SubsetInformation> = subsets
        .iter()
        .zip(&counts)
        .zip(nulls)
        .map(|((pi, per_k), null)| SubsetInformation {
            servers: pi.iter().map(|s| s + 1).collect(),
            mutual_information: mutual_information(per_k),
            null_mean: null.map(|(m, _)| m),
            null_level: null.map(|(_, l)| l),
        })
        .collect();
    let max_private = infos
        .iter()
        .filter(|s| s.servers.len() <= t)
        .map(|s| s.mutual_information)
        .fold(0.0, f64::max);
    Ok(UserSecrecyReport {
        mode,
        randomness,
        collusion: t,
        subsets: infos,
        max_private,
        samples_per_index: samples,
        structural: structural_certificate(inst),
    })
}

const NULL_PERMUTATIONS: usize = 64;
const NULL_DEVIATIONS: f64 = 4.0;

/// Plug-in MI is biased upward when outcomes are sparse. Shuffling the file labels
/// across the pooled samples gives the estimator's distribution under independence;
/// returns `(mean, mean + 4σ)` per subset.
fn permutation_nulls(labels: &[usize], observed: &[Vec<Vec<u128>>], files: usize, seed: u64) -> Vec<Option<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fa1);
    let mut shuffled = labels.to_vec();
    let mut draws = vec![Vec::with_capacity(NULL_PERMUTATIONS); observed.len()];
    for _ in 0..NULL_PERMUTATIONS {
        shuffled.shuffle(&mut rng);
        for (keys, out) in observed.iter().zip(&mut draws) {
            let mut per_k: Vec<HashMap<Vec<u128>, u64>> = vec![HashMap::new(); files];
            for (&k, key) in shuffled.iter().zip(keys) {
                *per_k[k].entry(key.clone()).or_default() += 1;
            }
            out.push(mutual_information(&per_k));
        }
    }
    draws
        .into_iter()
        .map(|d| {
            let n = d.len() as f64;
            let mean = d.iter().sum::<f64>() / n;
            let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            Some((mean, mean + NULL_DEVIATIONS * var.sqrt()))
        })
        .collect()
}

/// `Σ_k P(k) Σ_x P(x|k) log(P(x|k)/P(x))` with uniform `K`; every histogram has the
/// same total, so ratios are taken on integer counts and identical rows contribute 0.
fn mutual_information(per_k: &[HashMap<Vec<u128>, u64>]) -> f64 {
    let files = per_k.len() as u64;
    let total: u64 = per_k.first().map_or(0, |h| h.values().sum());
    debug_assert!(per_k.iter().all(|h| h.values().sum::<u64>() == total));
    let mut marginal: HashMap<&Vec<u128>, u64> = HashMap::new();
    for h in per_k {
        for (x, &c) in h {
            *marginal.entry(x).or_default() += c;
        }
    }
    let mut mi = 0.0;
    for h in per_k {
        for (x, &c) in h {
            let (num, den) = (files * c, marginal[x]);
            if num != den {
                mi += c as f64 / (total * files) as f64 * info_log(num as f64 / den as f64);
            }
        }
    }
    mi.max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Section<T> {
    Evaluated(T),
    Skipped { reason: String },
}

impl<T> Section<T> {
    pub fn evaluated(&self) -> Option<&T> {
        match self {
            Section::Evaluated(t) => Some(t),
            Section::Skipped { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub servers: usize,
    pub collusion: usize,
    pub effective_collusion: usize,
    pub files: usize,
    pub field_order: String,
    pub verified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub instance: InstanceSummary,
    pub plan: AuditPlan,
    pub error: ErrorReport,
    pub server_secrecy: Section<ServerSecrecyReport>,
    pub user_secrecy: Section<UserSecrecyReport>,
    pub structural: StructuralCertificate,
    pub costs: Costs,
    pub capacity: String,
    pub converse: ConverseCertificate,
    pub certificates: Vec<Certificate>,
    pub passed: bool,
}

pub fn audit(inst: &ProtocolInstance, plan: &AuditPlan) -> Result<AuditReport, AuditError> {
    let f = inst.tower();
    let error = error_probability(inst, plan)?;
    let server = match server_secrecy(inst, plan) {
        Ok(r) => Section::Evaluated(r),
        Err(AuditError::Dense(e)) => Section::Skipped { reason: e.to_string() },
        Err(e) => return Err(e),
    };
    let user = match user_secrecy(inst, plan, RandomnessMode::Uniform) {
        Ok(r) => Section::Evaluated(r),
        Err(AuditError::EnumerationGuard { size, limit }) => {
            Section::Skipped { reason: format!("R-space of size {size:e} exceeds the exact enumeration guard {limit}") }
        }
        Err(e) => return Err(e),
    };
    let structural = structural_certificate(inst);
    let costs = rate_and_costs(inst);
    let per_server = f.log2_order();
    let converse = converse_check(&ConverseInputs {
        log_m: costs.log2_message,
        log_d: per_server,
        servers: inst.servers() as u32,
        collusion: inst.effective_t() as u32,
        files: inst.files() as u32,
        p_err: error.worst,
        beta: server.evaluated().map_or(0.0, |s| s.holevo_max),
        gamma: user.evaluated().map_or(0.0, UserSecrecyReport::converse_gamma),
    })?;
    let verified = inst.basis().verify(f).passed();
    let mut certificates = vec![
        Certificate {
            name: "zero_error".into(),
            passed: error.failures == 0,
            detail: format!("{} failures over {} grid points", error.failures, error.points),
        },
        Certificate {
            name: "structural_user_secrecy".into(),
            passed: structural.all_invertible,
            detail: format!("singular D1 restrictions: {:?}", structural.singular_subsets),
        },
        Certificate {
            name: "converse".into(),
            passed: converse.passed(),
            detail: format!("{:?}, slack {:?}", converse.status, converse.slack),
        },
    ];
    if let Some(s) = server.evaluated() {
        certificates.push(Certificate {
            name: "server_secrecy".into(),
            passed: s.passed(),
            detail: format!("holevo {:e}, trace distance {:e}", s.holevo_max, s.trace_distance_max),
        });
    }
    if let Some(u) = user.evaluated() {
        certificates.push(Certificate {
            name: "user_secrecy".into(),
            passed: u.passed(),
            detail: match u.mode {
                GridMode::Exhaustive => format!("max I(K;Q) over private subsets {:e}", u.max_private),
                GridMode::Sampled => format!(
                    "plug-in max I(K;Q) {:e}, excess over permutation null {:e}",
                    u.max_private,
                    u.gamma()
                ),
            },
        });
    }
    let passed = certificates.iter().all(|c| c.passed);
    Ok(AuditReport {
        instance: InstanceSummary {
            servers: inst.servers(),
            collusion: inst.requested_t(),
            effective_collusion: inst.effective_t(),
            files: inst.files(),
            field_order: f.order().to_string(),
            verified,
        },
        plan: plan.clone(),
        error,
        server_secrecy: server,
        user_secrecy: user,
        structural,
        costs,
        capacity: capacity(inst.servers() as u64, inst.effective_t() as u64)?.to_string(),
        converse,
        certificates,
        passed,
    })
}

impl AuditReport {
    pub fn table(&self) -> String {
        let mut out = format!(
            "instance N={} T={} (effective {}) F={} q={}\n",
            self.instance.servers,
            self.instance.collusion,
            self.instance.effective_collusion,
            self.instance.files,
            self.instance.field_order
        );
        out += &format!(
            "P_err worst {} average {} ({:?}, {} points)\n",
            self.error.worst, self.error.average, self.error.mode, self.error.points
        );
        match &self.server_secrecy {
            Section::Evaluated(s) => {
                out += &format!("S_serv holevo {:.3e} trace distance {:.3e}\n", s.holevo_max, s.trace_distance_max)
            }
            Section::Skipped { reason } => out += &format!("S_serv skipped: {reason}\n"),
        }
        match &self.user_secrecy {
            Section::Evaluated(u) => match u.mode {
                GridMode::Exhaustive => out += &format!("S_user {:.3e} (Exhaustive)\n", u.max_private),
                GridMode::Sampled => {
                    out += &format!("S_user {:.3e} plug-in, {:.3e} over null (Sampled)\n", u.max_private, u.gamma())
                }
            },
            Section::Skipped { reason } => out += &format!("S_user skipped: {reason}\n"),
        }
        out += &format!(
            "rate {} capacity {} log2 U {} log2 D {}\n",
            self.costs.rate, self.capacity, self.costs.log2_upload, self.costs.log2_download
        );
        for c in &self.certificates {
            out += &format!("{:<26}{}  {}\n", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
        }
        out += if self.passed { "overall PASS\n" } else { "overall FAIL\n" };
        out
    }
}
