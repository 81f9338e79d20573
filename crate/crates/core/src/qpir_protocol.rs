//! Multicast delivery through a stabilizer and the T-private retrieval protocol,
//! run by one user actor and `N` server actors over ordered point-to-point links.

use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::UnixStream;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense_backend::{self, DenseError, DensityMatrix, Monomial, ProjectorFamily};
use crate::finite_field::{FieldElem, FieldTower, TowerDescription};
use crate::linalg::FqMatrix;
use crate::stabilizer_engine::{phase_modulus, Stabilizer, StabilizerError, WeylLabel};
use crate::symplectic_space::{BasisBlock, BasisSet, CosetLabel, Subspace, SymplecticError, SympVector};

/// Largest probability mass allowed outside the predicted dense outcome.
pub const POINT_MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("file index {k} outside 1..={files}")]
    IndexOutOfRange { k: usize, files: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("basis fails verification: {0}")]
    Unverified(String),
    #[error("backends disagree: phase-space {phase:?}, dense {dense:?}")]
    BackendDisagreement { phase: Vec<String>, dense: Vec<String> },
    #[error("dense outcome is not a point mass (leakage {0:e})")]
    NotPointMass(f64),
    #[error("network failure: {0}")]
    Network(String),
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error(transparent)]
    Stabilizer(#[from] StabilizerError),
    #[error(transparent)]
    Symplectic(#[from] SymplecticError),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Phase,
    Dense,
    Both,
}

impl Backend {
    pub fn uses_phase(self) -> bool {
        matches!(self, Backend::Phase | Backend::Both)
    }

    pub fn uses_dense(self) -> bool {
        matches!(self, Backend::Dense | Backend::Both)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Network {
    #[default]
    Channels,
    Sockets,
}

/// Public parameters plus the verified basis. `effective_t` is the collusion level
/// the basis provides; a requested `t < ⌈N/2⌉` runs the `⌈N/2⌉` construction.
#[derive(Clone, Debug)]
pub struct ProtocolInstance {
    tower: FieldTower,
    servers: usize,
    requested_t: usize,
    files: usize,
    basis: BasisSet,
    stabilizer: Stabilizer,
    dense: Option<(ProjectorFamily, DensityMatrix)>,
    backend: Backend,
}

impl ProtocolInstance {
    pub fn new(
        f: &FieldTower,
        basis: BasisSet,
        requested_t: usize,
        files: usize,
        backend: Backend,
    ) -> Result<Self, ProtocolError> {
        Self::build(f, basis, requested_t, files, backend, true)
    }

    /// Skips the condition (a) check; for auditing deliberately broken bases.
    pub fn new_unverified(
        f: &FieldTower,
        basis: BasisSet,
        requested_t: usize,
        files: usize,
        backend: Backend,
    ) -> Result<Self, ProtocolError> {
        Self::build(f, basis, requested_t, files, backend, false)
    }

    fn build(
        f: &FieldTower,
        basis: BasisSet,
        requested_t: usize,
        files: usize,
        backend: Backend,
        verify: bool,
    ) -> Result<Self, ProtocolError> {
        let servers = basis.n();
        if servers < 2 || files == 0 || requested_t == 0 || requested_t >= servers {
            return Err(ProtocolError::InvalidParameters(format!("N={servers}, T={requested_t}, F={files}")));
        }
        if requested_t > basis.t() {
            return Err(ProtocolError::InvalidParameters(format!(
                "basis provides {}-privacy, {requested_t} requested",
                basis.t()
            )));
        }
        let report = basis.verify(f);
        if verify && !report.passed() {
            return Err(ProtocolError::Unverified(format!(
                "failed subsets {:?}, failed pairs {:?}, independent {}",
                report.failed_subsets, report.failed_pairs, report.independent
            )));
        }
        let stabilizer = Stabilizer::new(f, &basis.v_subspace(), Some(basis.quotient().clone()))?;
        let mut inst = ProtocolInstance {
            tower: f.clone(),
            servers,
            requested_t,
            files,
            basis,
            stabilizer,
            dense: None,
            backend,
        };
        inst.set_backend(backend)?;
        Ok(inst)
    }

    /// Switches backend, materialising the dense projector family on first need.
    pub fn set_backend(&mut self, backend: Backend) -> Result<(), ProtocolError> {
        if backend.uses_dense() && self.dense.is_none() {
            let fam = dense_backend::stabilizer_projectors(&self.tower, &self.stabilizer)?;
            let rho = dense_backend::initial_state(&self.tower, &fam);
            self.dense = Some((fam, rho));
        }
        self.backend = backend;
        Ok(())
    }

    pub fn tower(&self) -> &FieldTower {
        &self.tower
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    pub fn requested_t(&self) -> usize {
        self.requested_t
    }

    pub fn effective_t(&self) -> usize {
        self.basis.t()
    }

    pub fn files(&self) -> usize {
        self.files
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn stabilizer(&self) -> &Stabilizer {
        &self.stabilizer
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn dense(&self) -> Option<&(ProjectorFamily, DensityMatrix)> {
        self.dense.as_ref()
    }

    /// `2(N − T)`: length of one file over `F_q`.
    pub fn file_len(&self) -> usize {
        2 * (self.servers - self.effective_t())
    }

    pub fn message_len(&self) -> usize {
        self.file_len() * self.files
    }

    /// Shape `(2T, 2(N−T)F)` of the user randomness `R`.
    pub fn randomness_shape(&self) -> (usize, usize) {
        (2 * self.effective_t(), self.message_len())
    }

    /// `m_k` (1-based `k`).
    pub fn file<'a>(&self, m: &'a [FieldElem], k: usize) -> &'a [FieldElem] {
        let l = self.file_len();
        &m[(k - 1) * l..k * l]
    }

    pub fn header(&self) -> InstanceHeader {
        InstanceHeader {
            servers: self.servers,
            collusion: self.requested_t,
            effective_collusion: self.effective_t(),
            files: self.files,
            tower: self.tower.description(),
            basis: self.basis.to_block(&self.tower),
        }
    }
}

pub fn sample_files<R: Rng>(inst: &ProtocolInstance, rng: &mut R) -> Vec<FieldElem> {
    let q = inst.tower.order();
    (0..inst.message_len()).map(|_| FieldElem::from_index(rng.gen_range(0..q))).collect()
}

pub fn sample_randomness<R: Rng>(inst: &ProtocolInstance, rng: &mut R) -> FqMatrix {
    let q = inst.tower.order();
    let (r, c) = inst.randomness_shape();
    let rows: Vec<Vec<FieldElem>> =
        (0..r).map(|_| (0..c).map(|_| FieldElem::from_index(rng.gen_range(0..q))).collect()).collect();
    if r == 0 {
        return FqMatrix::zeros(0, c);
    }
    FqMatrix::from_rows(&rows)
}

/// `E_k`: `2(N−T) × 2(N−T)F`, identity in block `k`.
pub fn selection_matrix(inst: &ProtocolInstance, k: usize) -> Result<FqMatrix, ProtocolError> {
    if k == 0 || k > inst.files {
        return Err(ProtocolError::IndexOutOfRange { k, files: inst.files });
    }
    let l = inst.file_len();
    let mut e = FqMatrix::zeros(l, inst.message_len());
    for i in 0..l {
        e.set(i, (k - 1) * l + i, FieldElem::ONE);
    }
    Ok(e)
}

/// `Q = D₁R + D₂E_k ∈ F_q^{2N × 2(N−T)F}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryMatrix {
    n: usize,
    matrix: FqMatrix,
}

impl QueryMatrix {
    pub fn matrix(&self) -> &FqMatrix {
        &self.matrix
    }

    /// `(q_{sX}, q_{sZ})` for 0-based server `s`.
    pub fn server_query(&self, s: usize) -> (Vec<FieldElem>, Vec<FieldElem>) {
        (self.matrix.row(s).to_vec(), self.matrix.row(self.n + s).to_vec())
    }

    /// Joint query rows `Q_π` of a server subset (rows `s`, then rows `N + s`).
    pub fn subset_rows(&self, servers: &[usize]) -> FqMatrix {
        self.matrix.select_rows(&crate::symplectic_space::server_rows(self.n, servers))
    }
}

pub fn user_query(inst: &ProtocolInstance, k: usize, r: &FqMatrix) -> Result<QueryMatrix, ProtocolError> {
    let e = selection_matrix(inst, k)?;
    let (rows, cols) = inst.randomness_shape();
    if r.rows() != rows || r.cols() != cols {
        return Err(ProtocolError::Dimension(format!("R is {}x{}, expected {rows}x{cols}", r.rows(), r.cols())));
    }
    let f = &inst.tower;
    let mut q = inst.basis.d2().mul(f, &e);
    if rows > 0 {
        q = inst.basis.d1().mul(f, r).add(f, &q);
    }
    Ok(QueryMatrix { n: inst.servers, matrix: q })
}

/// `(q_{sX}ᵀ m, q_{sZ}ᵀ m)` as a one-qudit label.
pub fn server_encode(
    f: &FieldTower,
    query: &(Vec<FieldElem>, Vec<FieldElem>),
    m: &[FieldElem],
) -> Result<WeylLabel, ProtocolError> {
    if query.0.len() != m.len() || query.1.len() != m.len() {
        return Err(ProtocolError::Dimension(format!("query rows of length {} vs {} file symbols", query.0.len(), m.len())));
    }
    let a = crate::linalg::dot(f, &query.0, m);
    let b = crate::linalg::dot(f, &query.1, m);
    Ok(WeylLabel::plain(f, SympVector::from_parts(&[a], &[b])))
}

/// `(c_{2T+1}, …, c_{2N})` of the outcome.
pub fn user_decode(inst: &ProtocolInstance, outcome: &CosetLabel) -> Vec<FieldElem> {
    inst.basis.coset_coefficients(outcome).to_vec()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceHeader {
    pub servers: usize,
    pub collusion: usize,
    pub effective_collusion: usize,
    pub files: usize,
    pub tower: TowerDescription,
    pub basis: BasisBlock,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub server: usize,
    pub x: Vec<String>,
    pub z: Vec<String>,
}

/// Answer action `(a, b, phase)` of one server.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub server: usize,
    pub a: String,
    pub b: String,
    pub phase: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub instance: InstanceHeader,
    pub k: usize,
    /// `R`, row-major.
    pub randomness: Vec<Vec<String>>,
    pub queries: Vec<QueryRecord>,
    pub answers: Vec<AnswerRecord>,
    pub outcome: Vec<String>,
    pub decoded: Vec<String>,
    pub backend: Backend,
    /// Probability mass outside the dense outcome, when the dense backend ran.
    pub dense_leakage: Option<f64>,
    #[serde(skip)]
    pub elapsed: Option<Duration>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct QueryMsg {
    x: Vec<String>,
    z: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AnswerMsg {
    server: usize,
    a: String,
    b: String,
    phase: u32,
}

/// One end of an ordered reliable link.
enum Endpoint<S, R> {
    Channel { tx: Sender<S>, rx: Receiver<R> },
    Socket { reader: BufReader<UnixStream>, writer: UnixStream },
}

impl<S: Serialize, R: DeserializeOwned> Endpoint<S, R> {
    fn send(&mut self, msg: S) -> Result<(), ProtocolError> {
        match self {
            Endpoint::Channel { tx, .. } => tx.send(msg).map_err(|e| ProtocolError::Network(e.to_string())),
            Endpoint::Socket { writer, .. } => {
                let mut line = serde_json::to_string(&msg).map_err(|e| ProtocolError::Network(e.to_string()))?;
                line.push('\n');
                writer.write_all(line.as_bytes()).map_err(|e| ProtocolError::Network(e.to_string()))
            }
        }
    }

    fn recv(&mut self) -> Result<R, ProtocolError> {
        match self {
            Endpoint::Channel { rx, .. } => rx.recv().map_err(|e| ProtocolError::Network(e.to_string())),
            Endpoint::Socket { reader, .. } => {
                let mut line = String::new();
                reader.read_line(&mut line).map_err(|e| ProtocolError::Network(e.to_string()))?;
                serde_json::from_str(&line).map_err(|e| ProtocolError::Network(e.to_string()))
            }
        }
    }
}

type UserEnd = Endpoint<QueryMsg, AnswerMsg>;
type ServerEnd = Endpoint<AnswerMsg, QueryMsg>;

/// User-to-server links only; no server holds an endpoint to another server.
fn links(network: Network, servers: usize) -> Result<Vec<(UserEnd, ServerEnd)>, ProtocolError> {
    (0..servers)
        .map(|_| match network {
            Network::Channels => {
                let (qtx, qrx) = channel();
                let (atx, arx) = channel();
                Ok((Endpoint::Channel { tx: qtx, rx: arx }, Endpoint::Channel { tx: atx, rx: qrx }))
            }
            Network::Sockets => {
                let (u, s) = UnixStream::pair().map_err(|e| ProtocolError::Network(e.to_string()))?;
                let uw = u.try_clone().map_err(|e| ProtocolError::Network(e.to_string()))?;
                let sw = s.try_clone().map_err(|e| ProtocolError::Network(e.to_string()))?;
                Ok((
                    Endpoint::Socket { reader: BufReader::new(u), writer: uw },
                    Endpoint::Socket { reader: BufReader::new(s), writer: sw },
                ))
            }
        })
        .collect()
}

fn server_actor(f: &FieldTower, server: usize, m: &[FieldElem], mut link: ServerEnd) -> Result<(), ProtocolError> {
    let msg = link.recv()?;
    let parse = |v: &[String]| v.iter().map(|s| f.parse(s)).collect::<Result<Vec<_>, _>>();
    let query = (
        parse(&msg.x).map_err(|e| ProtocolError::Network(e.to_string()))?,
        parse(&msg.z).map_err(|e| ProtocolError::Network(e.to_string()))?,
    );
    let label = server_encode(f, &query, m)?;
    link.send(AnswerMsg {
        server,
        a: f.format(label.w().a_part()[0]),
        b: f.format(label.w().b_part()[0]),
        phase: label.phase(),
    })
}

/// Joint label with server `s` acting on qudit `s`.
fn embed(answers: &[(FieldElem, FieldElem)]) -> SympVector {
    let (a, b): (Vec<_>, Vec<_>) = answers.iter().copied().unzip();
    SympVector::from_parts(&a, &b)
}

/// Outcome of evolving the initial state under the server answers and measuring.
pub struct Evolution {
    pub outcome: CosetLabel,
    pub dense_leakage: Option<f64>,
}

/// Applies the answers in server order on the selected backend(s) and measures.
pub fn evolve(inst: &ProtocolInstance, answers: &[(FieldElem, FieldElem)]) -> Result<Evolution, ProtocolError> {
    let f = &inst.tower;
    if answers.len() != inst.servers {
        return Err(ProtocolError::Dimension(format!("{} answers for {} servers", answers.len(), inst.servers)));
    }
    let n = inst.servers;
    let zero = FieldElem::ZERO;
    let local = |s: usize| {
        let mut v = vec![(zero, zero); n];
        v[s] = answers[s];
        embed(&v)
    };
    let phase = if inst.backend.uses_phase() {
        let mut state = inst.stabilizer.initial_state();
        for s in 0..n {
            state = inst.stabilizer.apply(f, &state, &local(s));
        }
        Some(inst.stabilizer.measure(&state).label)
    } else {
        None
    };
    let dense = if inst.backend.uses_dense() {
        let (fam, rho0) = inst.dense.as_ref().expect("dense family materialised with backend");
        // U = W(w_N) ⋯ W(w_1): the local operators in server order, applied as one conjugation
        let mut u = Monomial::identity(fam.dim(), phase_modulus(f.prime()));
        for s in 0..n {
            u = dense_backend::weyl_monomial(f, &WeylLabel::plain(f, local(s)))?.compose(&u);
        }
        let rho = DensityMatrix::new(rho0.q(), rho0.n(), u.conjugate(rho0.matrix()))?;
        let dist = dense_backend::measure_pvm(f, &rho, fam)?;
        let (label, p) = dist
            .into_iter()
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("at least one label");
        let leakage = (1.0 - p).max(0.0);
        if leakage > POINT_MASS_TOLERANCE {
            return Err(ProtocolError::NotPointMass(leakage));
        }
        Some((label, leakage))
    } else {
        None
    };
    match (phase, dense) {
        (Some(p), Some((d, leak))) => {
            if p != d {
                let fmt = |l: &CosetLabel| l.coefficients().iter().map(|&x| f.format(x)).collect();
                return Err(ProtocolError::BackendDisagreement { phase: fmt(&p), dense: fmt(&d) });
            }
            Ok(Evolution { outcome: p, dense_leakage: Some(leak) })
        }
        (Some(p), None) => Ok(Evolution { outcome: p, dense_leakage: None }),
        (None, Some((d, leak))) => Ok(Evolution { outcome: d, dense_leakage: Some(leak) }),
        (None, None) => unreachable!("every backend selects at least one engine"),
    }
}

pub fn run_protocol(
    inst: &ProtocolInstance,
    k: usize,
    m: &[FieldElem],
    r: &FqMatrix,
) -> Result<Transcript, ProtocolError> {
    run_protocol_on(inst, k, m, r, Network::Channels)
}

/// Step 0 prepares the shared state; the user actor sends `Q_s` to server `s`, each
/// server answers with its Weyl action, and the user measures and decodes.
pub fn run_protocol_on(
    inst: &ProtocolInstance,
    k: usize,
    m: &[FieldElem],
    r: &FqMatrix,
    network: Network,
) -> Result<Transcript, ProtocolError> {
    let start = Instant::now();
    let f = &inst.tower;
    if m.len() != inst.message_len() {
        return Err(ProtocolError::Dimension(format!("{} file symbols, expected {}", m.len(), inst.message_len())));
    }
    let query = user_query(inst, k, r)?;
    let n = inst.servers;
    let (user_ends, server_ends): (Vec<_>, Vec<_>) = links(network, n)?.into_iter().unzip();
    let fmt = |v: &[FieldElem]| v.iter().map(|&x| f.format(x)).collect::<Vec<_>>();

    let (queries, answers) = std::thread::scope(|scope| -> Result<_, ProtocolError> {
        let handles: Vec<_> = server_ends
            .into_iter()
            .enumerate()
            .map(|(s, end)| scope.spawn(move || server_actor(f, s + 1, m, end)))
            .collect();
        let user = scope.spawn(|| -> Result<_, ProtocolError> {
            let mut ends = user_ends;
            let mut queries = Vec::with_capacity(n);
            for (s, end) in ends.iter_mut().enumerate() {
                let (x, z) = query.server_query(s);
                let msg = QueryMsg { x: fmt(&x), z: fmt(&z) };
                queries.push(QueryRecord { server: s + 1, x: msg.x.clone(), z: msg.z.clone() });
                end.send(msg)?;
            }
            let mut answers = Vec::with_capacity(n);
            for end in ends.iter_mut() {
                let a = end.recv()?;
                answers.push(AnswerRecord { server: a.server, a: a.a, b: a.b, phase: a.phase });
            }
            Ok((queries, answers))
        });
        let result = user.join().map_err(|_| ProtocolError::Network("user actor panicked".into()))?;
        for h in handles {
            h.join().map_err(|_| ProtocolError::Network("server actor panicked".into()))??;
        }
        result
    })?;

    let labels = parse_answers(f, &answers)?;
    let evo = evolve(inst, &labels)?;
    let decoded = user_decode(inst, &evo.outcome);
    Ok(Transcript {
        instance: inst.header(),
        k,
        randomness: r.to_rows().iter().map(|row| fmt(row)).collect(),
        queries,
        answers,
        outcome: fmt(evo.outcome.coefficients()),
        decoded: fmt(&decoded),
        backend: inst.backend,
        dense_leakage: evo.dense_leakage,
        elapsed: Some(start.elapsed()),
    })
}

fn parse_answers(f: &FieldTower, answers: &[AnswerRecord]) -> Result<Vec<(FieldElem, FieldElem)>, ProtocolError> {
    answers
        .iter()
        .map(|a| {
            let x = f.parse(&a.a).map_err(|e| ProtocolError::Network(e.to_string()))?;
            let y = f.parse(&a.b).map_err(|e| ProtocolError::Network(e.to_string()))?;
            Ok((x, y))
        })
        .collect()
}

/// Decoded output obtained by re-applying the recorded answers on `backend`.
pub fn replay(inst: &ProtocolInstance, transcript: &Transcript, backend: Backend) -> Result<Vec<FieldElem>, ProtocolError> {
    let mut inst = inst.clone();
    inst.set_backend(backend)?;
    let labels = parse_answers(&inst.tower, &transcript.answers)?;
    let evo = evolve(&inst, &labels)?;
    Ok(user_decode(&inst, &evo.outcome))
}

/// Each player applies `X(a_s)Z(b_s)` to qudit `s` of the stabilizer state; the
/// receiver's PVM outcome is `[(a, b)]`.
pub fn run_multicast(
    f: &FieldTower,
    v: &Subspace,
    players: &[(FieldElem, FieldElem)],
) -> Result<CosetLabel, ProtocolError> {
    if players.len() != v.n() {
        return Err(ProtocolError::Dimension(format!("{} players for {} qudits", players.len(), v.n())));
    }
    let stab = crate::stabilizer_engine::build_stabilizer(f, v)?;
    let mut state = stab.initial_state();
    for (s, &(a, b)) in players.iter().enumerate() {
        let mut w = SympVector::zero(v.n()).into_coords();
        w[s] = a;
        w[v.n() + s] = b;
        state = stab.apply(f, &state, &SympVector::new(w)?);
    }
    Ok(stab.measure(&state).label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symplectic_space::{build_basis_lemma3, orthogonal_complement, search_basis};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e(i: u128) -> FieldElem {
        FieldElem::from_index(i)
    }

    fn instance(q: u64, n: usize, t: usize, seed: u64, backend: Backend) -> ProtocolInstance {
        let f = FieldTower::prime_power(q).unwrap();
        let basis = search_basis(&f, n, t, seed).unwrap();
        ProtocolInstance::new(&f, basis, t, 2, backend).unwrap()
    }

    #[test]
    fn zero_randomness_query_is_d2_ek() {
        let inst = instance(2, 2, 1, 1, Backend::Phase);
        let f = inst.tower().clone();
        let r = FqMatrix::zeros(2, 4);
        let q = user_query(&inst, 2, &r).unwrap();
        assert_eq!(q.matrix(), &inst.basis().d2().mul(&f, &selection_matrix(&inst, 2).unwrap()));
        assert!(matches!(user_query(&inst, 3, &r), Err(ProtocolError::IndexOutOfRange { k: 3, files: 2 })));
        assert!(matches!(user_query(&inst, 0, &r), Err(ProtocolError::IndexOutOfRange { .. })));
        assert!(user_query(&inst, 1, &FqMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn queries_over_all_randomness_are_distinct() {
        let inst = instance(2, 2, 1, 1, Backend::Phase);
        let mut seen = std::collections::HashSet::new();
        for bits in 0u32..256 {
            let rows: Vec<Vec<FieldElem>> =
                (0..2).map(|i| (0..4).map(|j| e(((bits >> (4 * i + j)) & 1) as u128)).collect()).collect();
            let q = user_query(&inst, 1, &FqMatrix::from_rows(&rows)).unwrap();
            seen.insert(q.matrix().clone());
        }
        assert_eq!(seen.len(), 256);
    }

    #[test]
    fn server_encoding_is_linear() {
        let f = FieldTower::prime_power(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rand_vec = |rng: &mut ChaCha8Rng| (0..6).map(|_| e(rng.gen_range(0..8))).collect::<Vec<_>>();
        for _ in 0..50 {
            let query = (rand_vec(&mut rng), rand_vec(&mut rng));
            let (m1, m2) = (rand_vec(&mut rng), rand_vec(&mut rng));
            let sum: Vec<_> = m1.iter().zip(&m2).map(|(&x, &y)| f.add(x, y)).collect();
            let l1 = server_encode(&f, &query, &m1).unwrap();
            let l2 = server_encode(&f, &query, &m2).unwrap();
            assert_eq!(l1.w().add(&f, l2.w()), *server_encode(&f, &query, &sum).unwrap().w());
        }
        let zero = vec![FieldElem::ZERO; 6];
        assert!(server_encode(&f, &(zero.clone(), zero.clone()), &rand_vec(&mut rng)).unwrap().is_identity());
        assert!(server_encode(&f, &(rand_vec(&mut rng), rand_vec(&mut rng)), &zero).unwrap().is_identity());
        assert!(server_encode(&f, &(zero.clone(), zero), &[e(1)]).is_err());
    }

    #[test]
    fn decode_ignores_perp_component() {
        let inst = instance(4, 2, 1, 2, Backend::Phase);
        let f = inst.tower().clone();
        let v = inst.basis().vectors();
        let mk = [e(3), e(1)];
        let w = v[2].scale(&f, mk[0]).add(&f, &v[3].scale(&f, mk[1]));
        let label = inst.basis().coset_reduce(&f, &w);
        assert_eq!(user_decode(&inst, &label), mk.to_vec());
        let shifted = inst.basis().coset_reduce(&f, &w.add(&f, &v[0]));
        assert_eq!(user_decode(&inst, &shifted), mk.to_vec());
        let zero = inst.basis().coset_reduce(&f, &SympVector::zero(2));
        assert_eq!(user_decode(&inst, &zero), vec![FieldElem::ZERO; 2]);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn phase_retrieval_is_exact(seed in 0u64..1 << 32, k in 1usize..=2) {
            let inst = instance(4, 3, 2, 1, Backend::Phase);
            let f = inst.tower().clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = sample_files(&inst, &mut rng);
            let r = sample_randomness(&inst, &mut rng);
            let tr = run_protocol(&inst, k, &m, &r).unwrap();
            let target: Vec<String> = inst.file(&m, k).iter().map(|&x| f.format(x)).collect();
            proptest::prop_assert_eq!(tr.decoded, target);
        }
    }

    #[test]
    fn lemma3_instance_retrieves_target() {
        let f = FieldTower::build(2, 2).unwrap();
        let basis = build_basis_lemma3(&f, 2, 1).unwrap();
        let inst = ProtocolInstance::new(&f, basis, 1, 2, Backend::Both).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..40 {
            let k = 1 + i % 2;
            let m = sample_files(&inst, &mut rng);
            let r = sample_randomness(&inst, &mut rng);
            let tr = run_protocol(&inst, k, &m, &r).unwrap();
            let target: Vec<String> = inst.file(&m, k).iter().map(|&x| f.format(x)).collect();
            assert_eq!(tr.decoded, target);
            assert!(tr.dense_leakage.unwrap() <= POINT_MASS_TOLERANCE);
        }
        let zero = vec![FieldElem::ZERO; inst.message_len()];
        let tr = run_protocol(&inst, 1, &zero, &sample_randomness(&inst, &mut rng)).unwrap();
        assert!(tr.decoded.iter().all(|s| f.parse(s).unwrap().is_zero()));
    }

    #[test]
    fn decode_is_independent_of_randomness() {
        let inst = instance(2, 2, 1, 1, Backend::Phase);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = sample_files(&inst, &mut rng);
        let mut outputs = std::collections::HashSet::new();
        for bits in 0u32..256 {
            let rows: Vec<Vec<FieldElem>> =
                (0..2).map(|i| (0..4).map(|j| e(((bits >> (4 * i + j)) & 1) as u128)).collect()).collect();
            outputs.insert(run_protocol(&inst, 2, &m, &FqMatrix::from_rows(&rows)).unwrap().decoded);
        }
        assert_eq!(outputs.len(), 1);
    }

    #[test]
    fn socket_network_matches_channels() {
        let inst = instance(4, 3, 2, 1, Backend::Both);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = sample_files(&inst, &mut rng);
        let r = sample_randomness(&inst, &mut rng);
        let a = run_protocol_on(&inst, 1, &m, &r, Network::Channels).unwrap();
        let b = run_protocol_on(&inst, 1, &m, &r, Network::Sockets).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for backend in [Backend::Phase, Backend::Dense] {
            let out: Vec<String> = replay(&inst, &a, backend).unwrap().iter().map(|&x| inst.tower().format(x)).collect();
            assert_eq!(out, a.decoded);
        }
    }

    #[test]
    fn weyl_order_does_not_change_density() {
        let inst = instance(4, 3, 2, 1, Backend::Dense);
        let f = inst.tower().clone();
        let (_, rho0) = inst.dense().unwrap();
        let answers = [(e(1), e(2)), (e(3), e(0)), (e(2), e(2))];
        let mut forward = rho0.clone();
        let mut backward = rho0.clone();
        for s in 0..3 {
            let mut l = vec![(FieldElem::ZERO, FieldElem::ZERO); 3];
            l[s] = answers[s];
            forward = dense_backend::apply_local_weyls(&f, &forward, &l).unwrap();
            let mut l = vec![(FieldElem::ZERO, FieldElem::ZERO); 3];
            l[2 - s] = answers[2 - s];
            backward = dense_backend::apply_local_weyls(&f, &backward, &l).unwrap();
        }
        assert!((forward.matrix() - backward.matrix()).camax() < 1e-12);
    }

    #[test]
    fn multicast_two_sum() {
        let f = FieldTower::prime_power(2).unwrap();
        let v = Subspace::new(&f, 2, vec![SympVector::from_indices(&[1, 1, 0, 0]).unwrap(), SympVector::from_indices(&[0, 0, 1, 1]).unwrap()])
            .unwrap();
        let zero = run_multicast(&f, &v, &[(e(0), e(0)), (e(0), e(0))]).unwrap();
        assert!(zero.is_zero());
        let out = run_multicast(&f, &v, &[(e(1), e(0)), (e(0), e(1))]).unwrap();
        let q = crate::symplectic_space::Quotient::of_subspace(&f, &v);
        assert_eq!(out, q.reduce(&f, &SympVector::from_indices(&[1, 0, 0, 1]).unwrap()));
        // the outcome determines exactly the sums (a₁ + a₂, b₁ + b₂)
        let all = Subspace::full(2).elements(&f);
        for x in &all {
            for y in &all {
                let sx = (f.add(x.coords()[0], x.coords()[1]), f.add(x.coords()[2], x.coords()[3]));
                let sy = (f.add(y.coords()[0], y.coords()[1]), f.add(y.coords()[2], y.coords()[3]));
                assert_eq!(q.reduce(&f, x) == q.reduce(&f, y), sx == sy);
            }
        }
        let perp = orthogonal_complement(&f, &v);
        for p in perp.elements(&f) {
            let c = p.coords();
            let shifted = run_multicast(&f, &v, &[(f.add(e(1), c[0]), c[2]), (c[1], f.add(e(1), c[3]))]).unwrap();
            assert_eq!(shifted, out);
        }
        assert!(run_multicast(&f, &v, &[(e(0), e(0))]).is_err());
    }

    #[test]
    fn rejects_unverified_or_mismatched_instances() {
        let f = FieldTower::prime_power(2).unwrap();
        let unit = |i| SympVector::unit(2, i);
        // V = span{e₁, e₂} as x-parts: condition (a) fails for single servers
        let basis = BasisSet::new(&f, 2, 1, vec![unit(0), unit(1), unit(2), unit(3)]).unwrap();
        assert!(matches!(ProtocolInstance::new(&f, basis, 1, 2, Backend::Phase), Err(ProtocolError::Unverified(_))));
        let good = search_basis(&f, 2, 1, 1).unwrap();
        assert!(ProtocolInstance::new(&f, good.clone(), 2, 2, Backend::Phase).is_err());
        assert!(ProtocolInstance::new(&f, good, 1, 0, Backend::Phase).is_err());
    }
}
