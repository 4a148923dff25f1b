//! Corrector computation by Schwarz-preconditioned CG in the kernel of `Pi_H`.

use super::{LodError, QuasiInterpolant, SchwarzPreconditioner};
use crate::grid::{ElementRect, MeshHierarchy, NodeBox};
use crate::linalg::SparseMatrix;

/// How much of the fine vectors each PCG iteration touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowMode {
    /// Only the coarse-layer rectangle the iterates can reach.
    #[default]
    Localized,
    /// Whole domain every iteration.
    Full,
}

/// Shared read-only state for corrector solves.
#[derive(Debug, Clone, Copy)]
pub struct CorrectorContext<'a> {
    pub hierarchy: &'a MeshHierarchy,
    pub stiffness: &'a SparseMatrix,
    pub pi: &'a QuasiInterpolant,
    pub preconditioner: &'a SchwarzPreconditioner,
}

#[derive(Debug, Clone)]
pub struct CorrectorOutput {
    /// Fine DOF vector approximating the corrector of the hat.
    pub corrector: Vec<f64>,
    /// PCG iterations actually performed (fewer than requested on early exact convergence).
    pub iterations: usize,
}

/// Sequential dot product over the rows of a box. Summation order is the
/// global DOF order, so adding zeros outside the box gives the same result.
fn box_dot(a: &[f64], b: &[f64], nodes: &NodeBox, nh: usize) -> f64 {
    let mut s = 0.0;
    for range in nodes.dof_rows(nh) {
        for (x, y) in a[range.clone()].iter().zip(&b[range]) {
            s += x * y;
        }
    }
    s
}

struct Window {
    nodes: NodeBox,
    vertices: (usize, usize, usize, usize),
}

fn window(hier: &MeshHierarchy, vertex: (usize, usize), t: usize, mode: WindowMode) -> Window {
    let n = hier.coarse.n();
    let rect = match mode {
        WindowMode::Localized => ElementRect::around_vertex(n, vertex.0, vertex.1, 2 * t + 2),
        WindowMode::Full => ElementRect {
            x0: 0,
            x1: n,
            y0: 0,
            y1: n,
        },
    };
    Window {
        nodes: rect
            .closed_fine_nodes(hier.coarse_ratio, hier.fine.n())
            .expect("non-empty window"),
        vertices: rect.vertex_bounds(),
    }
}

/// `k` PCG iterations from zero for `a(x, w) = a(phi_i, w)` over the kernel.
pub fn corrector_pcg(ctx: &CorrectorContext<'_>, coarse_dof: usize, k: usize, mode: WindowMode) -> Result<CorrectorOutput, LodError> {
    let hier = ctx.hierarchy;
    let nh = hier.fine.n();
    let nf = hier.fine.interior_node_count();
    let coarse_node = hier.coarse.interior_node_ids()[coarse_dof];
    let vertex = hier.coarse.node_index(coarse_node);
    let mut x = vec![0.0; nf];
    if k == 0 {
        return Ok(CorrectorOutput {
            corrector: x,
            iterations: 0,
        });
    }
    let k_mat = ctx.stiffness;
    let phi = ctx.pi.hat(coarse_dof);
    let mut r = vec![0.0; nf];
    let first = window(hier, vertex, 0, mode);
    for range in first.nodes.dof_rows(nh) {
        for i in range {
            r[i] = k_mat.row_dot(i, &phi);
        }
    }
    let mut z = vec![0.0; nf];
    let mut p = vec![0.0; nf];
    let mut q = vec![0.0; nf];
    let mut scratch = Vec::new();
    let mut rho_prev = 0.0;
    let mut rho0 = 0.0;
    let mut iterations = 0;
    for t in 0..k {
        let w = window(hier, vertex, t, mode);
        for range in w.nodes.dof_rows(nh) {
            z[range].fill(0.0);
        }
        ctx.preconditioner.apply_range(&r, &mut z, w.vertices, &mut scratch);
        ctx.pi.project_in_place_range(&mut z, w.vertices);
        let rho = box_dot(&r, &z, &w.nodes, nh);
        if rho < 0.0 {
            return Err(LodError::NonDescent {
                column: coarse_dof,
                iteration: t,
                value: rho,
            });
        }
        if t == 0 {
            rho0 = rho;
        }
        if rho == 0.0 || rho <= 1e-30 * rho0 {
            break;
        }
        let beta = if t == 0 { 0.0 } else { rho / rho_prev };
        for range in w.nodes.dof_rows(nh) {
            for i in range {
                p[i] = z[i] + beta * p[i];
            }
        }
        for range in w.nodes.dof_rows(nh) {
            for i in range {
                q[i] = k_mat.row_dot(i, &p);
            }
        }
        let curvature = box_dot(&p, &q, &w.nodes, nh);
        if !(curvature > 0.0) {
            return Err(LodError::Breakdown {
                column: coarse_dof,
                iteration: t,
                curvature,
            });
        }
        let alpha = rho / curvature;
        for range in w.nodes.dof_rows(nh) {
            for i in range {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
        }
        rho_prev = rho;
        iterations = t + 1;
    }
    Ok(CorrectorOutput {
        corrector: x,
        iterations,
    })
}

/// Smallest `L` such that `v` vanishes outside the `L`-layer patch of the
/// coarse vertex `(vx, vy)`; `None` for the zero vector.
pub fn support_radius(hier: &MeshHierarchy, vertex: (usize, usize), v: &[f64]) -> Option<usize> {
    let r = hier.coarse_ratio as isize;
    let cx = vertex.0 as isize * r;
    let cy = vertex.1 as isize * r;
    let mut radius = None;
    for (d, &val) in v.iter().enumerate() {
        if val != 0.0 {
            let (ix, iy) = hier.fine.dof_index(d);
            let dist = (ix as isize - cx).abs().max((iy as isize - cy).abs());
            let layer = (dist / r) as usize;
            radius = Some(radius.map_or(layer, |l: usize| l.max(layer)));
        }
    }
    radius
}
