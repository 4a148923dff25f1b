//! Box-constrained distributed optimal control on a fine or multiscale state space.

mod kkt;
mod pdas;
mod pg;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::assembly::FemOperators;
use crate::linalg::{norm2, LinalgError, SolverRule, SparseMatrix, SpdSolver};
use crate::lod::MsOperators;

pub use kkt::{error_report, prolong_control, ErrorTable, KktReport};
pub use pdas::PdasOptions;
pub use pg::PgOptions;

#[derive(Debug, Error)]
pub enum OcpError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("regularization gamma must be positive, got {0}")]
    InvalidGamma(f64),
    #[error("bounds infeasible in cell {cell}: lower {lo} > upper {hi}")]
    InfeasibleBounds { cell: usize, lo: f64, hi: f64 },
    #[error("vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("multiscale stiffness is not positive definite")]
    NotPositiveDefinite,
    #[error("projected gradient diverged at iteration {iteration}: cost rose from {before:e} to {after:e}")]
    Diverged { iteration: usize, before: f64, after: f64 },
}

/// State operators in some basis of the state space.
#[derive(Debug, Clone)]
pub enum StateSpace {
    /// Fine Q1 space with sparse operators.
    Fine {
        stiffness: SparseMatrix,
        mass: SparseMatrix,
        coupling: SparseMatrix,
        solver: SpdSolver,
    },
    /// Small space with dense operators (the multiscale space).
    Dense {
        stiffness: DMatrix<f64>,
        mass: DMatrix<f64>,
        coupling: DMatrix<f64>,
        factor: Cholesky<f64, Dyn>,
    },
}

impl StateSpace {
    pub fn fine(ops: &FemOperators, rule: SolverRule) -> Result<Self, OcpError> {
        Ok(StateSpace::Fine {
            stiffness: ops.stiffness.clone(),
            mass: ops.mass.clone(),
            coupling: ops.control_coupling.clone(),
            solver: SpdSolver::new(&ops.stiffness, rule)?,
        })
    }

    pub fn dense(stiffness: DMatrix<f64>, mass: DMatrix<f64>, coupling: DMatrix<f64>) -> Result<Self, OcpError> {
        let factor = stiffness.clone().cholesky().ok_or(OcpError::NotPositiveDefinite)?;
        Ok(StateSpace::Dense {
            stiffness,
            mass,
            coupling,
            factor,
        })
    }

    pub fn multiscale(ms: &MsOperators) -> Result<Self, OcpError> {
        Self::dense(ms.stiffness.clone(), ms.mass.clone(), ms.coupling.clone())
    }

    pub fn dim(&self) -> usize {
        match self {
            StateSpace::Fine { stiffness, .. } => stiffness.nrows(),
            StateSpace::Dense { stiffness, .. } => stiffness.nrows(),
        }
    }

    pub fn ncells(&self) -> usize {
        match self {
            StateSpace::Fine { coupling, .. } => coupling.ncols(),
            StateSpace::Dense { coupling, .. } => coupling.ncols(),
        }
    }

    /// `K^{-1} b`
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, OcpError> {
        match self {
            StateSpace::Fine { solver, .. } => Ok(solver.solve(b)?),
            StateSpace::Dense { factor, .. } => Ok(factor.solve(&DVector::from_column_slice(b)).as_slice().to_vec()),
        }
    }

    pub fn apply_stiffness(&self, v: &[f64]) -> Vec<f64> {
        match self {
            StateSpace::Fine { stiffness, .. } => sparse_mul(stiffness, v),
            StateSpace::Dense { stiffness, .. } => dense_mul(stiffness, v),
        }
    }

    pub fn apply_mass(&self, v: &[f64]) -> Vec<f64> {
        match self {
            StateSpace::Fine { mass, .. } => sparse_mul(mass, v),
            StateSpace::Dense { mass, .. } => dense_mul(mass, v),
        }
    }

    /// `B u`
    pub fn apply_coupling(&self, u: &[f64]) -> Vec<f64> {
        match self {
            StateSpace::Fine { coupling, .. } => sparse_mul(coupling, u),
            StateSpace::Dense { coupling, .. } => dense_mul(coupling, u),
        }
    }

    /// `B^T v`
    pub fn apply_coupling_t(&self, v: &[f64]) -> Vec<f64> {
        match self {
            StateSpace::Fine { coupling, .. } => coupling.spmv_transpose(v).expect("state vector length"),
            StateSpace::Dense { coupling, .. } => coupling.tr_mul(&DVector::from_column_slice(v)).as_slice().to_vec(),
        }
    }

    /// Dense copies of `(K, M, B)`.
    pub fn dense_parts(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        fn d(a: &SparseMatrix) -> DMatrix<f64> {
            DMatrix::from_row_slice(a.nrows(), a.ncols(), &a.to_dense())
        }
        match self {
            StateSpace::Fine {
                stiffness,
                mass,
                coupling,
                ..
            } => (d(stiffness), d(mass), d(coupling)),
            StateSpace::Dense {
                stiffness,
                mass,
                coupling,
                ..
            } => (stiffness.clone(), mass.clone(), coupling.clone()),
        }
    }
}

fn sparse_mul(a: &SparseMatrix, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.nrows()];
    a.spmv_into(v, &mut out);
    out
}

fn dense_mul(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (a * DVector::from_column_slice(v)).as_slice().to_vec()
}

/// The discrete problem: minimize `J~(y,u) = 1/2 |y|^2 + gamma/2 |u|^2 - (y, y_d)`
/// subject to `K y = B u` and `lo <= u <= hi` cellwise.
#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub space: StateSpace,
    pub gamma: f64,
    /// `(y_d, phi_i)` for every state basis function.
    pub target_load: Vec<f64>,
    /// `|y_d|^2`, used only to report `J` itself.
    pub target_norm_sq: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cell_volumes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub j_tilde: f64,
    pub active_lo: Vec<usize>,
    pub active_hi: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub vi_violation: f64,
}

impl OcpProblem {
    pub fn new(
        space: StateSpace,
        gamma: f64,
        target_load: Vec<f64>,
        target_norm_sq: f64,
        lo: Vec<f64>,
        hi: Vec<f64>,
        cell_volumes: Vec<f64>,
    ) -> Result<Self, OcpError> {
        if !(gamma > 0.0) {
            return Err(OcpError::InvalidGamma(gamma));
        }
        let nc = space.ncells();
        for v in [&lo, &hi, &cell_volumes] {
            if v.len() != nc {
                return Err(OcpError::DimensionMismatch {
                    expected: nc,
                    got: v.len(),
                });
            }
        }
        if target_load.len() != space.dim() {
            return Err(OcpError::DimensionMismatch {
                expected: space.dim(),
                got: target_load.len(),
            });
        }
        for (cell, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if l > h {
                return Err(OcpError::InfeasibleBounds { cell, lo: l, hi: h });
            }
        }
        Ok(Self {
            space,
            gamma,
            target_load,
            target_norm_sq,
            lo,
            hi,
            cell_volumes,
        })
    }

    pub fn ncells(&self) -> usize {
        self.cell_volumes.len()
    }

    /// `y = K^{-1} B u`
    pub fn solve_state(&self, u: &[f64]) -> Result<Vec<f64>, OcpError> {
        self.check_cells(u)?;
        self.space.solve(&self.space.apply_coupling(u))
    }

    /// `p = K^{-1} (M y - l_d)`
    pub fn solve_adjoint(&self, y: &[f64]) -> Result<Vec<f64>, OcpError> {
        if y.len() != self.space.dim() {
            return Err(OcpError::DimensionMismatch {
                expected: self.space.dim(),
                got: y.len(),
            });
        }
        let mut rhs = self.space.apply_mass(y);
        for (r, l) in rhs.iter_mut().zip(&self.target_load) {
            *r -= l;
        }
        self.space.solve(&rhs)
    }

    /// Cell averages of a state-space function, `(B^T p)_c / |c|`.
    pub fn cell_average(&self, p: &[f64]) -> Vec<f64> {
        self.space
            .apply_coupling_t(p)
            .into_iter()
            .zip(&self.cell_volumes)
            .map(|(s, v)| s / v)
            .collect()
    }

    pub fn evaluate_j_tilde(&self, y: &[f64], u: &[f64]) -> f64 {
        let my = self.space.apply_mass(y);
        let yy: f64 = y.iter().zip(&my).map(|(a, b)| a * b).sum();
        let uu: f64 = u
            .iter()
            .zip(&self.cell_volumes)
            .map(|(a, v)| v * a * a)
            .sum();
        let yd: f64 = y.iter().zip(&self.target_load).map(|(a, b)| a * b).sum();
        0.5 * (yy + self.gamma * uu) - yd
    }

    /// `J = J~ + |y_d|^2 / 2`
    pub fn evaluate_j(&self, y: &[f64], u: &[f64]) -> f64 {
        self.evaluate_j_tilde(y, u) + 0.5 * self.target_norm_sq
    }

    /// `(clamp(-cellavg(p)/gamma, lo, hi))_c`
    pub fn projection(&self, avg_p: &[f64]) -> Vec<f64> {
        avg_p
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(a, (&l, &h))| (-a / self.gamma).clamp(l, h))
            .collect()
    }

    pub fn vi_violation(&self, u: &[f64], avg_p: &[f64]) -> f64 {
        u.iter()
            .zip(self.projection(avg_p))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Reduced Hessian action `gamma V u + B^T K^{-1} M K^{-1} B u`.
    pub fn hessian_apply(&self, u: &[f64]) -> Result<Vec<f64>, OcpError> {
        let y = self.solve_state(u)?;
        let w = self.space.solve(&self.space.apply_mass(&y))?;
        let mut out = self.space.apply_coupling_t(&w);
        for ((o, x), v) in out.iter_mut().zip(u).zip(&self.cell_volumes) {
            *o += self.gamma * v * x;
        }
        Ok(out)
    }

    /// Clamps the zero control into the box.
    pub fn feasible_start(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| 0.0f64.clamp(l, h))
            .collect()
    }

    /// Assembles the solution record for a control.
    pub fn solution_for(&self, u: Vec<f64>, iterations: usize, converged: bool) -> Result<OcpSolution, OcpError> {
        let y = self.solve_state(&u)?;
        let p = self.solve_adjoint(&y)?;
        let avg = self.cell_average(&p);
        let vi_violation = self.vi_violation(&u, &avg);
        let (active_lo, active_hi) = self.sets_at_bounds(&u);
        let j_tilde = self.evaluate_j_tilde(&y, &u);
        Ok(OcpSolution {
            y,
            u,
            p,
            j_tilde,
            active_lo,
            active_hi,
            iterations,
            converged,
            vi_violation,
        })
    }

    /// Cells where `u` sits on its lower or upper bound.
    pub fn sets_at_bounds(&self, u: &[f64]) -> (Vec<usize>, Vec<usize>) {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for (c, &x) in u.iter().enumerate() {
            if x <= self.lo[c] {
                lo.push(c);
            } else if x >= self.hi[c] {
                hi.push(c);
            }
        }
        (lo, hi)
    }

    fn check_cells(&self, u: &[f64]) -> Result<(), OcpError> {
        if u.len() != self.ncells() {
            return Err(OcpError::DimensionMismatch {
                expected: self.ncells(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// Relative residual `|K y - B u| / |B u|` (absolute when `B u = 0`).
    pub fn state_residual(&self, y: &[f64], u: &[f64]) -> f64 {
        let bu = self.space.apply_coupling(u);
        let ky = self.space.apply_stiffness(y);
        let diff: Vec<f64> = ky.iter().zip(&bu).map(|(a, b)| a - b).collect();
        relative(norm2(&diff), norm2(&bu))
    }

    pub fn adjoint_residual(&self, y: &[f64], p: &[f64]) -> f64 {
        let mut rhs = self.space.apply_mass(y);
        for (r, l) in rhs.iter_mut().zip(&self.target_load) {
            *r -= l;
        }
        let kp = self.space.apply_stiffness(p);
        let diff: Vec<f64> = kp.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        relative(norm2(&diff), norm2(&rhs))
    }
}

fn relative(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Ritz projection: the state-space solution of `a(w, z) = load(z)`.
pub fn ritz_project(space: &StateSpace, load: &[f64]) -> Result<Vec<f64>, OcpError> {
    if load.len() != space.dim() {
        return Err(OcpError::DimensionMismatch {
            expected: space.dim(),
            got: load.len(),
        });
    }
    space.solve(load)
}
