//! Configuration, instance bundles and the `qpir` command line.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finite_field::{FieldElem, FieldError, FieldTower, TowerDescription};
use crate::qpir_protocol::{
    run_protocol_on, sample_files, sample_randomness, Backend, Network, ProtocolError, ProtocolInstance, Transcript,
};
use crate::security_audit::{
    self, capacity, classical_capacity, converse_check, AuditError, AuditPlan, AuditReport, Certificate,
    ClassicalVariant, ConverseCertificate, ConverseInputs,
};
use crate::symplectic_space::{build_basis_lemma3, search_basis, BasisBlock, BasisSet, ConditionReport, SymplecticError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("bundle rejected: {0}")]
    Tampered(String),
    #[error("basis verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Symplectic(#[from] SymplecticError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

/// `base_order` is a prime power; `chain_length` quadratic steps sit on top of it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub base_order: u64,
    #[serde(default)]
    pub chain_length: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum BasisSource {
    Lemma3,
    Search { seed: u64 },
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct OutputPaths {
    pub bundle: Option<PathBuf>,
    pub transcript: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub servers: usize,
    pub collusion: usize,
    pub files: usize,
    pub field: FieldSpec,
    pub basis: BasisSource,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub audit: AuditPlan,
    #[serde(default)]
    pub network: Network,
    #[serde(default)]
    pub outputs: OutputPaths,
}

impl RunConfig {
    /// Collusion level actually constructed: `max(T, ⌈N/2⌉)`.
    pub fn effective_collusion(&self) -> usize {
        self.collusion.max(self.servers.div_ceil(2))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let (n, t) = (self.servers, self.collusion);
        if n < 2 {
            return Err(HarnessError::Config(format!("N = {n}, need N ≥ 2")));
        }
        if self.files < 2 {
            return Err(HarnessError::Config(format!("F = {}, need F ≥ 2", self.files)));
        }
        if t == 0 || t >= n {
            return Err(HarnessError::Config(format!("T = {t}, need 1 ≤ T < N = {n}")));
        }
        let te = self.effective_collusion();
        if self.basis == BasisSource::Lemma3 && self.field.chain_length + 2 < n + 2 * te {
            return Err(HarnessError::Config(format!(
                "lemma3 basis for (N, T) = ({n}, {te}) needs chain length ≥ {}, got {}",
                n + 2 * te - 2,
                self.field.chain_length
            )));
        }
        Ok(())
    }
}

/// A verified instance: public parameters, tower, basis and the certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub config: RunConfig,
    pub effective_collusion: usize,
    pub tower: TowerDescription,
    pub basis: BasisBlock,
    pub verification: ConditionReport,
}

impl Bundle {
    pub fn tower(&self) -> Result<FieldTower, HarnessError> {
        Ok(FieldTower::from_description(&self.tower)?)
    }

    pub fn basis_set(&self, f: &FieldTower) -> Result<BasisSet, HarnessError> {
        Ok(BasisSet::from_block(f, &self.basis)?)
    }

    /// Recomputes the certificate; it must pass and match the embedded one.
    pub fn check(&self) -> Result<(FieldTower, BasisSet, ConditionReport), HarnessError> {
        let f = self.tower()?;
        let basis = self.basis_set(&f)?;
        let fresh = basis.verify(&f);
        if fresh != self.verification {
            return Err(HarnessError::Tampered("embedded verification report does not match the basis".into()));
        }
        if !fresh.passed() {
            return Err(HarnessError::Tampered("basis fails verification".into()));
        }
        if basis.t() != self.effective_collusion || basis.n() != self.config.servers {
            return Err(HarnessError::Tampered("basis shape does not match the configuration".into()));
        }
        Ok((f, basis, fresh))
    }

    pub fn instance(&self, backend: Backend) -> Result<ProtocolInstance, HarnessError> {
        let (f, basis, _) = self.check()?;
        Ok(ProtocolInstance::new(&f, basis, self.config.collusion, self.config.files, backend)?)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io { path: path.into(), message: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Io { path: path.into(), message: e.to_string() })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::Io { path: path.into(), message: e.to_string() })
}

pub fn load_config(path: &Path) -> Result<RunConfig, HarnessError> {
    read_json(path)
}

pub fn load_bundle(path: &Path) -> Result<Bundle, HarnessError> {
    read_json(path)
}

/// Builds the tower and basis, verifies conditions (a) and (b), and packages the result.
pub fn cmd_setup(config: &RunConfig) -> Result<Bundle, HarnessError> {
    config.validate()?;
    let f = FieldTower::build(config.field.base_order, config.field.chain_length)?;
    let (n, t) = (config.servers, config.effective_collusion());
    let basis = match &config.basis {
        BasisSource::Lemma3 => build_basis_lemma3(&f, n, t)?,
        BasisSource::Search { seed } => search_basis(&f, n, t, *seed)?,
        BasisSource::File { path } => {
            let block: BasisBlock = read_json(path)?;
            if block.n != n || block.t != t {
                return Err(HarnessError::Config(format!("basis file is for (n, t) = ({}, {})", block.n, block.t)));
            }
            BasisSet::from_block(&f, &block)?
        }
    };
    let verification = basis.verify(&f);
    if !verification.passed() {
        return Err(HarnessError::Verification(format!(
            "failed subsets {:?}, failed pairs {:?}",
            verification.failed_subsets, verification.failed_pairs
        )));
    }
    Ok(Bundle {
        config: config.clone(),
        effective_collusion: t,
        tower: f.description(),
        basis: basis.to_block(&f),
        verification,
    })
}

/// Files supplied as `F` rows of `2(N−T)` coordinate strings.
pub type FileTable = Vec<Vec<String>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub seed: u64,
    pub files_random: bool,
    /// `W = m_k`.
    pub correct: bool,
    pub transcript: Transcript,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub k: usize,
    pub files: Option<FileTable>,
    pub seed: u64,
    pub backend: Backend,
    pub network: Network,
}

pub fn cmd_run(bundle: &Bundle, opts: &RunOptions) -> Result<RunArtifact, HarnessError> {
    let inst = bundle.instance(opts.backend)?;
    let f = inst.tower().clone();
    if opts.k == 0 || opts.k > inst.files() {
        return Err(ProtocolError::IndexOutOfRange { k: opts.k, files: inst.files() }.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let m: Vec<FieldElem> = match &opts.files {
        Some(table) => {
            if table.len() != inst.files() || table.iter().any(|row| row.len() != inst.file_len()) {
                return Err(HarnessError::Config(format!(
                    "files must be {} rows of {} symbols",
                    inst.files(),
                    inst.file_len()
                )));
            }
            table.iter().flatten().map(|s| f.parse(s)).collect::<Result<_, _>>()?
        }
        None => sample_files(&inst, &mut rng),
    };
    let r = sample_randomness(&inst, &mut rng);
    let transcript = run_protocol_on(&inst, opts.k, &m, &r, opts.network)?;
    let target: Vec<String> = inst.file(&m, opts.k).iter().map(|&x| f.format(x)).collect();
    Ok(RunArtifact { seed: opts.seed, files_random: opts.files.is_none(), correct: transcript.decoded == target, transcript })
}

/// Full audit. Unverified or tampered bundles are still audited; the integrity
/// certificate fails and secrecy certificates report what the basis actually gives.
pub fn cmd_audit(bundle: &Bundle, plan: &AuditPlan) -> Result<AuditReport, HarnessError> {
    let f = bundle.tower()?;
    let basis = bundle.basis_set(&f)?;
    let integrity = bundle.check().map(|_| ());
    let inst = ProtocolInstance::new_unverified(&f, basis, bundle.config.collusion, bundle.config.files, Backend::Phase)?;
    let mut report = security_audit::audit(&inst, plan)?;
    report.certificates.insert(
        0,
        Certificate {
            name: "bundle_integrity".into(),
            passed: integrity.is_ok(),
            detail: integrity.err().map_or_else(|| "verification report matches basis".into(), |e| e.to_string()),
        },
    );
    report.passed = report.certificates.iter().all(|c| c.passed);
    Ok(report)
}

pub fn cmd_verify(bundle: &Bundle) -> Result<ConditionReport, HarnessError> {
    bundle.check().map(|(_, _, report)| report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalEntry {
    pub variant: ClassicalVariant,
    pub capacity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundFunctions {
    pub h2_alpha: f64,
    pub eta0: f64,
    pub f: f64,
    pub g: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsTable {
    pub servers: u64,
    pub collusion: u64,
    /// `None` is the `F → ∞` limit.
    pub files: Option<u64>,
    pub quantum_capacity: String,
    pub quantum_capacity_value: f64,
    pub classical: Vec<ClassicalEntry>,
    /// Quantum minus classical symmetric T-private capacity.
    pub symmetric_gap: f64,
    pub bound_functions: BoundFunctions,
    pub converse: Option<ConverseCertificate>,
}

#[derive(Clone, Debug, Default)]
pub struct BoundsQuery {
    pub servers: u64,
    pub collusion: u64,
    pub files: Option<u64>,
    pub p_err: f64,
    pub beta: f64,
    pub gamma: f64,
    pub log_m: Option<f64>,
    pub log_d: Option<f64>,
}

pub fn cmd_bounds(b: &BoundsQuery) -> Result<BoundsTable, HarnessError> {
    let quantum = capacity(b.servers, b.collusion)?;
    let qv = *quantum.numer() as f64 / *quantum.denom() as f64;
    let classical = ClassicalVariant::ALL
        .iter()
        .map(|&variant| Ok(ClassicalEntry { variant, capacity: classical_capacity(b.servers, b.collusion, b.files, variant)? }))
        .collect::<Result<Vec<_>, AuditError>>()?;
    let symmetric = classical_capacity(b.servers, b.collusion, b.files, ClassicalVariant::SymmetricTPrivate)?;
    // bound functions use the F of the query, or 2 in the limit where F only enters through γ
    let fl = b.files.unwrap_or(2) as u32;
    let s = 2.0 * (2.0 * fl as f64 * b.gamma).sqrt();
    let bound_functions = BoundFunctions {
        h2_alpha: security_audit::h2(b.p_err)?,
        eta0: security_audit::eta0(s)?,
        f: security_audit::f_bound(b.p_err, b.beta, b.gamma, fl)?,
        g: b.log_m.map(|lm| security_audit::g_bound(lm, b.gamma, fl)).transpose()?,
    };
    let converse = match (b.log_m, b.log_d) {
        (Some(log_m), Some(log_d)) => Some(converse_check(&ConverseInputs {
            log_m,
            log_d,
            servers: b.servers as u32,
            collusion: b.collusion as u32,
            files: fl,
            p_err: b.p_err,
            beta: b.beta,
            gamma: b.gamma,
        })?),
        _ => None,
    };
    Ok(BoundsTable {
        servers: b.servers,
        collusion: b.collusion,
        files: b.files,
        quantum_capacity: quantum.to_string(),
        quantum_capacity_value: qv,
        classical,
        symmetric_gap: qv - symmetric,
        bound_functions,
        converse,
    })
}

impl fmt::Display for BoundsTable {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let files = self.files.map_or("inf".to_string(), |x| x.to_string());
        writeln!(out, "N={} T={} F={}", self.servers, self.collusion, files)?;
        writeln!(out, "{:<34}{} ({:.6})", "quantum capacity", self.quantum_capacity, self.quantum_capacity_value)?;
        for c in &self.classical {
            let name = match c.variant {
                ClassicalVariant::Pir => "classical PIR",
                ClassicalVariant::SymmetricPir => "classical symmetric PIR",
                ClassicalVariant::TPrivate => "classical T-private PIR",
                ClassicalVariant::SymmetricTPrivate => "classical symmetric T-private PIR",
            };
            writeln!(out, "{name:<34}{:.6}", c.capacity)?;
        }
        writeln!(out, "{:<34}{:.6}", "gap to symmetric T-private", self.symmetric_gap)?;
        let bf = &self.bound_functions;
        writeln!(out, "{:<34}{:.6}", "h2(P_err)", bf.h2_alpha)?;
        writeln!(out, "{:<34}{:.6}", "eta0(2 sqrt(2 F gamma))", bf.eta0)?;
        writeln!(out, "{:<34}{:.6}", "f(P_err, beta, gamma, F)", bf.f)?;
        if let Some(g) = bf.g {
            writeln!(out, "{:<34}{:.6}", "g(M, gamma)", g)?;
        }
        if let Some(c) = &self.converse {
            writeln!(out, "{:<34}{:?} lhs {:.6} rhs {:?} slack {:?}", "converse", c.status, c.lhs, c.rhs, c.slack)?;
        }
        Ok(())
    }
}

#[derive(Parser, Debug)]
#[command(name = "qpir", version, about = "Stabilizer-based T-private quantum PIR: setup, run, audit, bounds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build and verify an instance bundle from a config.
    Setup(SetupArgs),
    /// Run the protocol once on a bundle and write the transcript.
    Run(RunArgs),
    /// Audit a bundle; exits nonzero if any certificate fails.
    Audit(AuditArgs),
    /// Print capacities, bound functions and the converse certificate.
    Bounds(BoundsArgs),
    /// Re-verify a bundle's basis against its embedded certificate.
    Verify(VerifyArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum BackendArg {
    Phase,
    Dense,
    Both,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Phase => Backend::Phase,
            BackendArg::Dense => Backend::Dense,
            BackendArg::Both => Backend::Both,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum NetworkArg {
    Channels,
    Sockets,
}

/// A bundle file, or a config that is set up in memory.
#[derive(Args, Debug)]
pub struct Source {
    #[arg(long, conflicts_with = "config")]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl Source {
    fn load(&self) -> Result<Bundle, HarnessError> {
        match (&self.bundle, &self.config) {
            (Some(b), _) => load_bundle(b),
            (None, Some(c)) => cmd_setup(&load_config(c)?),
            (None, None) => Err(HarnessError::Config("pass --bundle <path> or --config <path>".into())),
        }
    }
}

#[derive(Args, Debug)]
pub struct SetupArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: Source,
    /// 1-based target file index.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// JSON file with `F` rows of file symbols.
    #[arg(long, conflicts_with = "random")]
    pub files: Option<PathBuf>,
    /// Sample the files from the seed (the default when no files are given).
    #[arg(long)]
    pub random: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    #[arg(long, value_enum)]
    pub network: Option<NetworkArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[command(flatten)]
    pub source: Source,
    /// Enumerate the full randomness space for user secrecy.
    #[arg(long, conflicts_with = "samples")]
    pub exact: bool,
    /// Sampled mode with this many draws per file index.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BoundsArgs {
    #[arg(long)]
    pub servers: u64,
    #[arg(long)]
    pub collusion: u64,
    #[arg(long, default_value_t = 2, conflicts_with = "file_limit")]
    pub files: u64,
    /// Evaluate the classical formulas in the limit of infinitely many files.
    #[arg(long)]
    pub file_limit: bool,
    #[arg(long, default_value_t = 0.0)]
    pub p_err: f64,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Field order; sets `log M = 2(N−T) log q` and `log D = log q` unless overridden.
    #[arg(long)]
    pub field_order: Option<u64>,
    #[arg(long)]
    pub log_m: Option<f64>,
    #[arg(long)]
    pub log_d: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit status for certificate or verification failures.
pub const EXIT_FAILED: i32 = 1;
/// Exit status for usage, configuration and runtime errors.
pub const EXIT_ERROR: i32 = 2;

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), HarnessError> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Setup(a) => {
            let mut config = load_config(&a.config)?;
            if let Some(seed) = a.seed {
                config.seed = seed;
            }
            if let Some(b) = a.backend {
                config.backend = b.into();
            }
            let bundle = cmd_setup(&config)?;
            let out = a.out.or_else(|| config.outputs.bundle.clone());
            emit(&out, &to_json(&bundle))?;
            if out.is_some() {
                println!("verified basis for (N, T) = ({}, {})", config.servers, bundle.effective_collusion);
            }
            Ok(0)
        }
        Command::Run(a) => {
            let bundle = a.source.load()?;
            let files = a.files.as_deref().map(read_json::<FileTable>).transpose()?;
            let opts = RunOptions {
                k: a.k,
                files,
                seed: a.seed.unwrap_or(bundle.config.seed),
                backend: a.backend.map_or(bundle.config.backend, Into::into),
                network: a.network.map_or(bundle.config.network, |n| match n {
                    NetworkArg::Channels => Network::Channels,
                    NetworkArg::Sockets => Network::Sockets,
                }),
            };
            let artifact = cmd_run(&bundle, &opts)?;
            let out = a.out.or_else(|| bundle.config.outputs.transcript.clone());
            if let Some(p) = &out {
                write_text(p, &to_json(&artifact))?;
            }
            println!("decoded W = [{}]", artifact.transcript.decoded.join(", "));
            println!("W = m_{}: {}", opts.k, artifact.correct);
            Ok(if artifact.correct { 0 } else { EXIT_FAILED })
        }
        Command::Audit(a) => {
            let bundle = a.source.load()?;
            let mut plan = bundle.config.audit.clone();
            plan.seed = a.seed.unwrap_or(bundle.config.seed);
            if a.exact {
                plan.exact = true;
            }
            if let Some(n) = a.samples {
                plan.exact = false;
                plan.samples = n;
            }
            let report = cmd_audit(&bundle, &plan)?;
            let out = a.out.or_else(|| bundle.config.outputs.report.clone());
            if let Some(p) = &out {
                write_text(p, &to_json(&report))?;
            }
            print!("{}", report.table());
            Ok(if report.passed { 0 } else { EXIT_FAILED })
        }
        Command::Bounds(a) => {
            let t = a.collusion;
            let (log_m, log_d) = match a.field_order {
                Some(q) => {
                    let lq = (q as f64).log2();
                    let n = a.servers.saturating_sub(t);
                    (Some(a.log_m.unwrap_or(2.0 * n as f64 * lq)), Some(a.log_d.unwrap_or(lq)))
                }
                None => (a.log_m, a.log_d),
            };
            let table = cmd_bounds(&BoundsQuery {
                servers: a.servers,
                collusion: t,
                files: (!a.file_limit).then_some(a.files),
                p_err: a.p_err,
                beta: a.beta,
                gamma: a.gamma,
                log_m,
                log_d,
            })?;
            if let Some(p) = &a.out {
                write_text(p, &to_json(&table))?;
            }
            print!("{table}");
            Ok(if table.converse.as_ref().is_none_or(|c| c.passed()) { 0 } else { EXIT_FAILED })
        }
        Command::Verify(a) => {
            let bundle = a.source.load()?;
            match cmd_verify(&bundle) {
                Ok(report) => {
                    emit(&a.out, &to_json(&report))?;
                    println!("verified: {} subsets checked", report.subsets_checked);
                    Ok(0)
                }
                Err(e @ HarnessError::Tampered(_)) => {
                    eprintln!("{e}");
                    Ok(EXIT_FAILED)
                }
                Err(e) => Err(e),
            }
        }
    }
}

/// Parses arguments, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
