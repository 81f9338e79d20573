//! Symmetric T-private quantum private information retrieval over qudit stabilizers:
//! finite-field towers, symplectic linear algebra, a phase-space stabilizer engine,
//! a dense density-matrix oracle, the retrieval protocol and a security auditor.

pub mod finite_field;
pub mod linalg;
pub mod symplectic_space;
pub mod stabilizer_engine;
pub mod dense_backend;
pub mod qpir_protocol;
pub mod security_audit;
pub mod cli_harness;
