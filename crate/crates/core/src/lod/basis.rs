//! Multiscale basis `phi_i - C_{h,k} phi_i` and the Galerkin operators it induces.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::corrector::{corrector_pcg, support_radius, CorrectorContext, WindowMode};
use super::{build_pi_h, LodError, QuasiInterpolant, SchwarzPreconditioner};
use crate::assembly::FemOperators;
use crate::grid::{ElementRect, MeshHierarchy, NodeBox};
use crate::linalg::SparseMatrix;

/// `k = ceil(j ln(1/H))`, at least 1.
pub fn k_from_j(n_coarse: usize, j: f64) -> usize {
    let k = (j * (n_coarse as f64).ln()).ceil();
    if k < 1.0 {
        1
    } else {
        k as usize
    }
}

/// A basis column stored densely over a box of fine interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisColumn {
    pub nodes: NodeBox,
    /// Row-major over `nodes`.
    pub values: Vec<f64>,
}

impl BasisColumn {
    fn from_fine(v: &[f64], nodes: NodeBox, nh: usize) -> Self {
        let mut values = Vec::with_capacity(nodes.len());
        for range in nodes.dof_rows(nh) {
            values.extend_from_slice(&v[range]);
        }
        Self { nodes, values }
    }

    /// Scatters `scale * column` into a fine DOF vector.
    pub fn add_to(&self, scale: f64, out: &mut [f64], nh: usize) {
        let w = self.nodes.width();
        for (row, range) in self.nodes.dof_rows(nh).enumerate() {
            for (o, v) in out[range].iter_mut().zip(&self.values[row * w..(row + 1) * w]) {
                *o += scale * v;
            }
        }
    }

    pub fn to_fine(&self, nh: usize) -> Vec<f64> {
        let mut out = vec![0.0; (nh - 1) * (nh - 1)];
        self.add_to(1.0, &mut out, nh);
        out
    }

    /// Fine DOFs with nonzero value.
    pub fn support(&self, nh: usize) -> Vec<usize> {
        self.nodes
            .dofs(nh)
            .into_iter()
            .zip(&self.values)
            .filter(|(_, &v)| v != 0.0)
            .map(|(d, _)| d)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisMeta {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub k: usize,
    /// Set when `k` came from `ceil(j ln(1/H))`.
    pub j: Option<u32>,
    pub fingerprint: u64,
    /// Layers of the Schwarz patches (vertex stars).
    pub patch_layers: usize,
    /// Largest measured support radius over the columns, in coarse layers.
    pub support_radius: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiscaleBasis {
    pub meta: BasisMeta,
    pub columns: Vec<BasisColumn>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildStats {
    pub setup_seconds: f64,
    pub corrector_seconds: f64,
    pub total_pcg_iterations: usize,
}

impl MultiscaleBasis {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn fine_dim(&self) -> usize {
        (self.meta.n_fine - 1) * (self.meta.n_fine - 1)
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.columns[i].to_fine(self.meta.n_fine)
    }

    /// Fine DOF vector `G c`.
    pub fn lift(&self, coeffs: &[f64]) -> Result<Vec<f64>, LodError> {
        if coeffs.len() != self.len() {
            return Err(LodError::DimensionMismatch {
                expected: self.len(),
                got: coeffs.len(),
            });
        }
        let mut out = vec![0.0; self.fine_dim()];
        for (c, col) in coeffs.iter().zip(&self.columns) {
            if *c != 0.0 {
                col.add_to(*c, &mut out, self.meta.n_fine);
            }
        }
        Ok(out)
    }

    /// `G^T v` for a fine DOF vector (a load functional).
    pub fn restrict(&self, v: &[f64]) -> Result<Vec<f64>, LodError> {
        if v.len() != self.fine_dim() {
            return Err(LodError::DimensionMismatch {
                expected: self.fine_dim(),
                got: v.len(),
            });
        }
        let nh = self.meta.n_fine;
        Ok(self
            .columns
            .iter()
            .map(|col| {
                let w = col.nodes.width();
                col.nodes
                    .dof_rows(nh)
                    .enumerate()
                    .map(|(row, range)| {
                        v[range]
                            .iter()
                            .zip(&col.values[row * w..(row + 1) * w])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                    })
                    .sum()
            })
            .collect())
    }
}

/// Quasi-interpolant and preconditioner shared by all corrector solves.
#[derive(Debug, Clone)]
pub struct LodSetup {
    pub hierarchy: MeshHierarchy,
    pub pi: QuasiInterpolant,
    pub preconditioner: SchwarzPreconditioner,
}

impl LodSetup {
    pub fn new(hier: &MeshHierarchy, stiffness: &SparseMatrix) -> Result<Self, LodError> {
        let pi = build_pi_h(hier);
        let preconditioner = SchwarzPreconditioner::build(hier, stiffness, &pi)?;
        Ok(Self {
            hierarchy: *hier,
            pi,
            preconditioner,
        })
    }

    pub fn context<'a>(&'a self, stiffness: &'a SparseMatrix) -> CorrectorContext<'a> {
        CorrectorContext {
            hierarchy: &self.hierarchy,
            stiffness,
            pi: &self.pi,
            preconditioner: &self.preconditioner,
        }
    }
}

/// Options for [`build_basis`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisOptions {
    pub k: usize,
    pub j: Option<u32>,
    pub fingerprint: u64,
    pub mode: WindowMode,
}

/// Builds all `(nH-1)^2` columns, in parallel over columns.
pub fn build_basis(hier: &MeshHierarchy, stiffness: &SparseMatrix, opts: BasisOptions) -> Result<(MultiscaleBasis, BuildStats), LodError> {
    if opts.k == 0 {
        return Err(LodError::InvalidK);
    }
    let start = Instant::now();
    let setup = LodSetup::new(hier, stiffness)?;
    let setup_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let (basis, iters) = build_basis_with(&setup, stiffness, opts)?;
    let stats = BuildStats {
        setup_seconds,
        corrector_seconds: start.elapsed().as_secs_f64(),
        total_pcg_iterations: iters,
    };
    log::info!(
        "basis nH={} nh={} k={}: {} columns, radius {}, setup {:.2}s, correctors {:.2}s",
        hier.coarse.n(),
        hier.fine.n(),
        opts.k,
        basis.len(),
        basis.meta.support_radius,
        stats.setup_seconds,
        stats.corrector_seconds
    );
    Ok((basis, stats))
}

pub fn build_basis_with(setup: &LodSetup, stiffness: &SparseMatrix, opts: BasisOptions) -> Result<(MultiscaleBasis, usize), LodError> {
    let hier = &setup.hierarchy;
    let ctx = setup.context(stiffness);
    let m = hier.coarse_dofs();
    let nh = hier.fine.n();
    let bound = 2 * opts.k + 2;
    let results = (0..m)
        .into_par_iter()
        .map(|i| -> Result<(BasisColumn, usize, usize), LodError> {
            let out = corrector_pcg(&ctx, i, opts.k, opts.mode)?;
            let mut v = setup.pi.hat(i);
            for (vi, xi) in v.iter_mut().zip(&out.corrector) {
                *vi -= xi;
            }
            let vertex = hier.coarse.node_index(hier.coarse.interior_node_ids()[i]);
            let radius = support_radius(hier, vertex, &v).unwrap_or(0);
            if radius > bound {
                return Err(LodError::SupportViolation {
                    column: i,
                    radius,
                    bound,
                });
            }
            let nodes = ElementRect::around_vertex(hier.coarse.n(), vertex.0, vertex.1, radius)
                .open_fine_nodes(hier.coarse_ratio, nh)
                .expect("non-empty support");
            Ok((BasisColumn::from_fine(&v, nodes, nh), radius, out.iterations))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let support = results.iter().map(|r| r.1).max().unwrap_or(0);
    let iters = results.iter().map(|r| r.2).sum();
    let columns = results.into_iter().map(|r| r.0).collect();
    Ok((
        MultiscaleBasis {
            meta: BasisMeta {
                n_coarse: hier.coarse.n(),
                n_fine: nh,
                k: opts.k,
                j: opts.j,
                fingerprint: opts.fingerprint,
                patch_layers: 0,
                support_radius: support,
            },
            columns,
        },
        iters,
    ))
}

/// Galerkin operators on the multiscale space.
#[derive(Debug, Clone)]
pub struct MsOperators {
    /// `G^T K G`
    pub stiffness: DMatrix<f64>,
    /// `G^T M G`
    pub mass: DMatrix<f64>,
    /// `G^T B`, `m x n_cells`
    pub coupling: DMatrix<f64>,
}

/// `C = A^T B` for column-major `A` (`n x m`) and `B` (`n x p`).
fn gemm_tn(a: &[f64], b: &[f64], n: usize, m: usize, p: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * m);
    assert_eq!(b.len(), n * p);
    let mut c = vec![0.0; m * p];
    // SAFETY: slice lengths are checked above; strides describe column-major
    // A^T (m x n), B (n x p) and C (m x p) within those slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            n,
            p,
            1.0,
            a.as_ptr(),
            n as isize,
            1,
            b.as_ptr(),
            1,
            n as isize,
            0.0,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
    c
}

pub fn ms_operators(basis: &MultiscaleBasis, ops: &FemOperators) -> Result<MsOperators, LodError> {
    let n = basis.fine_dim();
    let m = basis.len();
    if ops.ndofs() != n {
        return Err(LodError::DimensionMismatch {
            expected: n,
            got: ops.ndofs(),
        });
    }
    let nh = basis.meta.n_fine;
    let mut dense = vec![0.0; n * m];
    dense
        .par_chunks_mut(n)
        .zip(&basis.columns)
        .for_each(|(out, col)| col.add_to(1.0, out, nh));

    let block = 64;
    let mut stiffness = DMatrix::zeros(m, m);
    let mut mass = DMatrix::zeros(m, m);
    let mut start = 0;
    while start < m {
        let width = block.min(m - start);
        let cols = &dense[start * n..(start + width) * n];
        let mut ky = vec![0.0; n * width];
        let mut my = vec![0.0; n * width];
        ky.par_chunks_mut(n)
            .zip(my.par_chunks_mut(n))
            .zip(cols.par_chunks(n))
            .for_each(|((k_out, m_out), c)| {
                ops.stiffness.spmv_into(c, k_out);
                ops.mass.spmv_into(c, m_out);
            });
        let kb = gemm_tn(&dense, &ky, n, m, width);
        let mb = gemm_tn(&dense, &my, n, m, width);
        for jj in 0..width {
            for i in 0..m {
                stiffness[(i, start + jj)] = kb[jj * m + i];
                mass[(i, start + jj)] = mb[jj * m + i];
            }
        }
        start += width;
    }
    let stiffness = (&stiffness + stiffness.transpose()) * 0.5;
    let mass = (&mass + mass.transpose()) * 0.5;

    let coupling = ms_coupling(basis, ops)?;
    if stiffness.clone().cholesky().is_none() {
        return Err(LodError::RankDeficient("multiscale stiffness".into()));
    }
    Ok(MsOperators {
        stiffness,
        mass,
        coupling,
    })
}

/// `G^T B` alone, for reuse of the Galerkin stiffness and mass across control meshes.
pub fn ms_coupling(basis: &MultiscaleBasis, ops: &FemOperators) -> Result<DMatrix<f64>, LodError> {
    let n = basis.fine_dim();
    if ops.ndofs() != n {
        return Err(LodError::DimensionMismatch {
            expected: n,
            got: ops.ndofs(),
        });
    }
    let nh = basis.meta.n_fine;
    let nc = ops.ncells();
    let rows: Vec<Vec<f64>> = basis
        .columns
        .par_iter()
        .map(|col| {
            let mut row = vec![0.0; nc];
            for (d, v) in col.nodes.dofs(nh).into_iter().zip(&col.values) {
                if *v == 0.0 {
                    continue;
                }
                let (cells, b) = ops.control_coupling.row(d);
                for (&c, &w) in cells.iter().zip(b) {
                    row[c] += v * w;
                }
            }
            row
        })
        .collect();
    Ok(DMatrix::from_fn(basis.len(), nc, |i, c| rows[i][c]))
}
