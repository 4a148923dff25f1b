//! Quasi-interpolation onto the coarse space by averaged local L2 projections.

use crate::grid::{ElementRect, MeshHierarchy};
use crate::linalg::{SparseMatrix, TripletBuilder};

/// `Pi_H` together with the nodal embedding of coarse hats into the fine space.
#[derive(Debug, Clone)]
pub struct QuasiInterpolant {
    pub hierarchy: MeshHierarchy,
    /// Coarse interior DOFs x fine interior DOFs.
    pub matrix: SparseMatrix,
    /// Fine interior DOFs x coarse interior DOFs.
    pub embedding: SparseMatrix,
    /// Transpose of `embedding`: row `i` holds the fine nodal values of hat `i`.
    pub hats: SparseMatrix,
}

/// Weights `l[a][j]` of the 1D L2 projection onto linears on `[0,1]`:
/// coefficient `a` of the projection of the fine hat at `j/r`.
fn projection_weights_1d(r: usize) -> [Vec<f64>; 2] {
    // w[b][j] = int_0^1 Phi_b phi_j, exact with two Gauss points per interval
    let g = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    let rf = r as f64;
    let mut w = [vec![0.0; r + 1], vec![0.0; r + 1]];
    for cell in 0..r {
        for &s in &g {
            let x = (cell as f64 + s) / rf;
            let coarse = [1.0 - x, x];
            let fine = [(cell, 1.0 - s), (cell + 1, s)];
            for b in 0..2 {
                for &(j, v) in &fine {
                    w[b][j] += 0.5 / rf * coarse[b] * v;
                }
            }
        }
    }
    // inverse of the P1 mass matrix [[2,1],[1,2]]/6 is 2 [[2,-1],[-1,2]]
    let mut l = [vec![0.0; r + 1], vec![0.0; r + 1]];
    for j in 0..=r {
        l[0][j] = 2.0 * (2.0 * w[0][j] - w[1][j]);
        l[1][j] = 2.0 * (2.0 * w[1][j] - w[0][j]);
    }
    l
}

pub fn build_pi_h(hier: &MeshHierarchy) -> QuasiInterpolant {
    let coarse = &hier.coarse;
    let fine = &hier.fine;
    let r = hier.coarse_ratio;
    let nh = fine.n();
    let m = coarse.interior_node_count();
    let nf = fine.interior_node_count();
    let l = projection_weights_1d(r);

    let mut pb = TripletBuilder::with_capacity(m, nf, m * (2 * r + 1) * (2 * r + 1));
    let mut hb = TripletBuilder::with_capacity(m, nf, m * (2 * r - 1) * (2 * r - 1));
    for vy in 1..coarse.n() {
        for vx in 1..coarse.n() {
            let Some(row) = coarse.dof(vx, vy) else { continue };
            // average over the four coarse elements sharing the vertex
            for (tx, ax) in [(vx - 1, 1usize), (vx, 0)] {
                for (ty, ay) in [(vy - 1, 1usize), (vy, 0)] {
                    for jy in 0..=r {
                        let iy = ty * r + jy;
                        if iy == 0 || iy == nh {
                            continue;
                        }
                        for jx in 0..=r {
                            let ix = tx * r + jx;
                            if ix == 0 || ix == nh {
                                continue;
                            }
                            let val = 0.25 * l[ax][jx] * l[ay][jy];
                            if val != 0.0 {
                                pb.push(row, fine.dof(ix, iy).expect("interior node"), val);
                            }
                        }
                    }
                }
            }
            if let Some(nodes) = ElementRect::around_vertex(coarse.n(), vx, vy, 0).open_fine_nodes(r, nh) {
                for iy in nodes.iy_lo..=nodes.iy_hi {
                    let hy = 1.0 - (iy as f64 - (vy * r) as f64).abs() / r as f64;
                    for ix in nodes.ix_lo..=nodes.ix_hi {
                        let hx = 1.0 - (ix as f64 - (vx * r) as f64).abs() / r as f64;
                        hb.push(row, fine.dof(ix, iy).expect("interior node"), hx * hy);
                    }
                }
            }
        }
    }
    let hats = hb.build();
    QuasiInterpolant {
        hierarchy: *hier,
        matrix: pb.build(),
        embedding: hats.transpose(),
        hats,
    }
}

impl QuasiInterpolant {
    pub fn coarse_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn fine_dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Coarse coefficients `Pi_H v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.coarse_dim()];
        self.matrix.spmv_into(v, &mut out);
        out
    }

    /// Fine DOF vector of the coarse function with coefficients `c`.
    pub fn embed(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.fine_dim()];
        self.embedding.spmv_into(c, &mut out);
        out
    }

    /// Fine DOF vector of coarse hat `i`.
    pub fn hat(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.fine_dim()];
        let (cols, vals) = self.hats.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            out[c] = v;
        }
        out
    }

    /// `v - E Pi_H v`, restricted to the coarse vertices in the inclusive
    /// index range `(x_lo, x_hi, y_lo, y_hi)`. Vertices whose value is exactly
    /// zero are skipped.
    pub(crate) fn project_in_place_range(&self, v: &mut [f64], range: (usize, usize, usize, usize)) {
        let coarse = &self.hierarchy.coarse;
        let (x_lo, x_hi, y_lo, y_hi) = range;
        let mut values = Vec::new();
        for vy in y_lo.max(1)..=y_hi.min(coarse.n() - 1) {
            for vx in x_lo.max(1)..=x_hi.min(coarse.n() - 1) {
                let i = coarse.dof(vx, vy).expect("interior vertex");
                let c = self.matrix.row_dot(i, v);
                if c != 0.0 {
                    values.push((i, c));
                }
            }
        }
        for (i, c) in values {
            let (cols, vals) = self.hats.row(i);
            for (&col, &h) in cols.iter().zip(vals) {
                v[col] -= c * h;
            }
        }
    }

    /// Kernel projection `v - E Pi_H v` in place.
    pub fn project_in_place(&self, v: &mut [f64]) {
        let n = self.hierarchy.coarse.n();
        self.project_in_place_range(v, (1, n - 1, 1, n - 1));
    }
}

/// `P v = v - E Pi_H v`; the result lies in the kernel of `Pi_H`.
pub fn kernel_project(pi: &QuasiInterpolant, v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    pi.project_in_place(&mut out);
    out
}
