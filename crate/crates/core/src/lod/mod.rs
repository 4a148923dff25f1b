//! Localized orthogonal decomposition: quasi-interpolation, kernel
//! correctors and the multiscale basis.

mod basis;
mod corrector;
mod io;
mod quasi;
mod schwarz;

use thiserror::Error;

use crate::linalg::LinalgError;

pub use basis::{
    build_basis, build_basis_with, k_from_j, ms_coupling, ms_operators, BasisColumn, BasisMeta, BasisOptions, BuildStats, LodSetup, MsOperators,
    MultiscaleBasis,
};
pub use corrector::{corrector_pcg, support_radius, CorrectorContext, CorrectorOutput, WindowMode};
pub use io::{basis_from_bytes, fingerprint, load_basis, load_basis_checked, save_basis};
pub use quasi::{build_pi_h, kernel_project, QuasiInterpolant};
pub use schwarz::{LocalSolver, SchwarzPreconditioner};

#[derive(Debug, Error)]
pub enum LodError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("patch of coarse vertex {0} has no fine interior nodes")]
    EmptyPatch(usize),
    #[error("rank deficient {0}")]
    RankDeficient(String),
    #[error("corrector k must be at least 1")]
    InvalidK,
    #[error("corrector {column}: PCG breakdown at iteration {iteration} (p^T K p = {curvature:e})")]
    Breakdown { column: usize, iteration: usize, curvature: f64 },
    #[error("corrector {column}: preconditioner gave a non-descent direction at iteration {iteration} (r^T z = {value:e})")]
    NonDescent { column: usize, iteration: usize, value: f64 },
    #[error("column {column} has support radius {radius}, above the bound {bound}")]
    SupportViolation { column: usize, radius: usize, bound: usize },
    #[error("vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("basis file has wrong magic bytes")]
    BadMagic,
    #[error("basis file truncated: need {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("corrupt basis file: {0}")]
    Corrupt(String),
    #[error("basis fingerprint {found:016x} does not match expected {expected:016x}")]
    FingerprintMismatch { expected: u64, found: u64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
