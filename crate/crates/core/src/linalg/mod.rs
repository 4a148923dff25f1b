//! Sparse and dense linear algebra kernels.
//!
//! Everything in the crate is expressed with one sparse format, [`SparseMatrix`]
//! (compressed sparse rows). Symmetric positive definite systems are solved
//! either with an envelope Cholesky factorization or with preconditioned
//! conjugate gradients; [`SpdSolver`] picks between them by dimension.

mod cg;
mod cholesky;
mod solver;
mod sparse;

pub use cg::{cg_solve, pcg, JacobiPreconditioner, Preconditioner, SolveReport};
pub use cholesky::CholeskyFactor;
pub use solver::{SolverRule, SpdSolver};
pub use sparse::{SparseMatrix, TripletBuilder};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid CSR structure: {0}")]
    InvalidStructure(String),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("factorization failed: non-positive pivot {value:e} at row {pivot}")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("conjugate gradient breakdown at iteration {iteration}: p^T A p = {curvature:e}")]
    Breakdown { iteration: usize, curvature: f64 },
    #[error("preconditioner is not positive: r^T z = {value:e} at iteration {iteration}")]
    IndefinitePreconditioner { iteration: usize, value: f64 },
    #[error("iterative solve did not converge: residual {residual:e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },
}

/// Dot product with four independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let rem_a = chunks_a.remainder();
    let rem_b = chunks_b.remainder();
    for (x, y) in chunks_a.zip(chunks_b) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in rem_a.iter().zip(rem_b) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
