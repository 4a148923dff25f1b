//! One-level additive Schwarz preconditioner on the kernel of `Pi_H`.
//!
//! Each coarse interior vertex owns the fine DOFs strictly inside its star.
//! The local problem is the stiffness restricted to those DOFs with the local
//! rows of `Pi_H` imposed as constraints, eliminated through the bordered
//! system `z = A^{-1} r - W S^{-1} C A^{-1} r` with `W = A^{-1} C^T`, `S = C W`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{LodError, QuasiInterpolant};
use crate::grid::{ElementRect, MeshHierarchy, NodeBox};
use crate::linalg::{CholeskyFactor, SparseMatrix};

#[derive(Debug, Clone)]
pub struct LocalSolver {
    /// Coarse DOF of the patch center.
    pub vertex: usize,
    pub nodes: NodeBox,
    factor: CholeskyFactor,
    /// Constraint rows, `nc x n_loc` row-major.
    constraints: Vec<f64>,
    /// `A^{-1} C^T`, stored as `nc` columns of length `n_loc`.
    w: Vec<f64>,
    /// `S^{-1}`, `nc x nc` row-major.
    s_inv: Vec<f64>,
    nc: usize,
}

impl LocalSolver {
    fn build(hier: &MeshHierarchy, stiffness: &SparseMatrix, pi: &QuasiInterpolant, vx: usize, vy: usize) -> Result<Self, LodError> {
        let coarse = &hier.coarse;
        let fine = &hier.fine;
        let nh = fine.n();
        let vertex = coarse.dof(vx, vy).expect("interior vertex");
        let nodes = ElementRect::around_vertex(coarse.n(), vx, vy, 0)
            .open_fine_nodes(hier.coarse_ratio, nh)
            .ok_or(LodError::EmptyPatch(vertex))?;
        let dofs = nodes.dofs(nh);
        let n_loc = dofs.len();
        let factor = CholeskyFactor::factor(&stiffness.principal_submatrix(&dofs))?;

        let mut constraints = Vec::new();
        let mut nc = 0;
        for wy in vy - 1..=vy + 1 {
            for wx in vx - 1..=vx + 1 {
                let Some(row) = coarse.dof(wx, wy) else { continue };
                let mut dense = vec![0.0; n_loc];
                let (cols, vals) = pi.matrix.row(row);
                for (&c, &v) in cols.iter().zip(vals) {
                    let (ix, iy) = fine.dof_index(c);
                    if nodes.contains(ix, iy) {
                        dense[nodes.local(ix, iy)] = v;
                    }
                }
                constraints.extend_from_slice(&dense);
                nc += 1;
            }
        }
        let mut w = constraints.clone();
        for col in w.chunks_mut(n_loc) {
            factor.solve_in_place(col);
        }
        let s = DMatrix::from_fn(nc, nc, |a, b| {
            constraints[a * n_loc..(a + 1) * n_loc]
                .iter()
                .zip(&w[b * n_loc..(b + 1) * n_loc])
                .map(|(x, y)| x * y)
                .sum::<f64>()
        });
        let s = (&s + s.transpose()) * 0.5;
        let chol = s
            .cholesky()
            .ok_or_else(|| LodError::RankDeficient(format!("local constraint matrix of vertex {vertex}")))?;
        let inv = chol.inverse();
        let mut s_inv = vec![0.0; nc * nc];
        for a in 0..nc {
            for b in 0..nc {
                s_inv[a * nc + b] = inv[(a, b)];
            }
        }
        Ok(Self {
            vertex,
            nodes,
            factor,
            constraints,
            w,
            s_inv,
            nc,
        })
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn constraint_count(&self) -> usize {
        self.nc
    }

    /// Adds the local kernel solve for `r` into `z`. Returns false when the
    /// local residual is identically zero (nothing is added).
    pub fn apply_add(&self, r: &[f64], z: &mut [f64], nh: usize, scratch: &mut Vec<f64>) -> bool {
        let n_loc = self.dim();
        scratch.clear();
        for range in self.nodes.dof_rows(nh) {
            scratch.extend_from_slice(&r[range]);
        }
        if scratch.iter().all(|&v| v == 0.0) {
            return false;
        }
        self.factor.solve_in_place(scratch);
        let nc = self.nc;
        let mut t = [0.0; 9];
        for a in 0..nc {
            t[a] = self.constraints[a * n_loc..(a + 1) * n_loc]
                .iter()
                .zip(scratch.iter())
                .map(|(x, y)| x * y)
                .sum();
        }
        for b in 0..nc {
            let s: f64 = (0..nc).map(|a| self.s_inv[b * nc + a] * t[a]).sum();
            if s != 0.0 {
                for (y, wv) in scratch.iter_mut().zip(&self.w[b * n_loc..(b + 1) * n_loc]) {
                    *y -= s * wv;
                }
            }
        }
        let mut offset = 0;
        for range in self.nodes.dof_rows(nh) {
            let len = range.len();
            for (zi, yi) in z[range].iter_mut().zip(&scratch[offset..offset + len]) {
                *zi += yi;
            }
            offset += len;
        }
        true
    }
}

#[derive(Debug, Clone)]
pub struct SchwarzPreconditioner {
    pub hierarchy: MeshHierarchy,
    /// Indexed by coarse interior DOF.
    pub locals: Vec<LocalSolver>,
}

impl SchwarzPreconditioner {
    pub fn build(hier: &MeshHierarchy, stiffness: &SparseMatrix, pi: &QuasiInterpolant) -> Result<Self, LodError> {
        let coarse = &hier.coarse;
        let vertices: Vec<(usize, usize)> = (1..coarse.n())
            .flat_map(|vy| (1..coarse.n()).map(move |vx| (vx, vy)))
            .collect();
        let locals = vertices
            .par_iter()
            .map(|&(vx, vy)| LocalSolver::build(hier, stiffness, pi, vx, vy))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            hierarchy: *hier,
            locals,
        })
    }

    /// `z += sum_i R_i^T B_i R_i r` over the patches whose center lies in the
    /// inclusive coarse vertex range.
    pub(crate) fn apply_range(&self, r: &[f64], z: &mut [f64], range: (usize, usize, usize, usize), scratch: &mut Vec<f64>) {
        let coarse = &self.hierarchy.coarse;
        let nh = self.hierarchy.fine.n();
        let (x_lo, x_hi, y_lo, y_hi) = range;
        for vy in y_lo.max(1)..=y_hi.min(coarse.n() - 1) {
            for vx in x_lo.max(1)..=x_hi.min(coarse.n() - 1) {
                let i = coarse.dof(vx, vy).expect("interior vertex");
                self.locals[i].apply_add(r, z, nh, scratch);
            }
        }
    }

    /// `z = B r` over all patches.
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; r.len()];
        let n = self.hierarchy.coarse.n();
        let mut scratch = Vec::new();
        self.apply_range(r, &mut z, (1, n - 1, 1, n - 1), &mut scratch);
        z
    }

    /// Every fine interior DOF belongs to at least one patch.
    pub fn covers_all_dofs(&self) -> bool {
        let nh = self.hierarchy.fine.n();
        let mut seen = vec![false; self.hierarchy.fine.interior_node_count()];
        for l in &self.locals {
            for d in l.nodes.dofs(nh) {
                seen[d] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }
}
