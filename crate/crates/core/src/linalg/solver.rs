use super::{cg_solve, norm2, CholeskyFactor, JacobiPreconditioner, LinalgError, SparseMatrix};

/// Chooses direct or iterative solution of SPD systems by dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverRule {
    /// Systems up to this dimension are factored.
    pub direct_max_dim: usize,
    pub iterative_tol: f64,
    pub iterative_max_iter: usize,
}

impl Default for SolverRule {
    fn default() -> Self {
        Self {
            direct_max_dim: 200_000,
            iterative_tol: 1e-10,
            iterative_max_iter: 20_000,
        }
    }
}

/// A reusable solver for one SPD matrix.
#[derive(Debug, Clone)]
pub enum SpdSolver {
    Direct(CholeskyFactor),
    Iterative {
        matrix: SparseMatrix,
        jacobi: JacobiPreconditioner,
        tol: f64,
        max_iter: usize,
    },
}

impl SpdSolver {
    pub fn new(a: &SparseMatrix, rule: SolverRule) -> Result<Self, LinalgError> {
        if a.nrows() <= rule.direct_max_dim {
            Ok(SpdSolver::Direct(CholeskyFactor::factor(a)?))
        } else {
            Ok(SpdSolver::Iterative {
                matrix: a.clone(),
                jacobi: JacobiPreconditioner::new(a),
                tol: rule.iterative_tol,
                max_iter: rule.iterative_max_iter,
            })
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SpdSolver::Direct(f) => f.dim(),
            SpdSolver::Iterative { matrix, .. } => matrix.nrows(),
        }
    }

    pub fn is_direct(&self) -> bool {
        matches!(self, SpdSolver::Direct(_))
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        match self {
            SpdSolver::Direct(f) => f.solve(b),
            SpdSolver::Iterative {
                matrix,
                jacobi,
                tol,
                max_iter,
            } => {
                if norm2(b) == 0.0 {
                    return Ok(vec![0.0; b.len()]);
                }
                let (x, rep) = cg_solve(matrix, b, *tol, *max_iter, Some(jacobi))?;
                if !rep.converged {
                    return Err(LinalgError::NotConverged {
                        iterations: rep.iterations,
                        residual: rep.final_residual,
                    });
                }
                Ok(x)
            }
        }
    }
}
