//! Optimality diagnostics and error tables.

use super::{relative, OcpError, OcpProblem, OcpSolution};
use crate::assembly::FemOperators;

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    pub state_residual: f64,
    pub adjoint_residual: f64,
    pub vi_violation: f64,
    /// `cellavg(p) + gamma u` per cell.
    pub lambda: Vec<f64>,
    /// Largest violation of `lambda >= 0` on lower-active cells.
    pub lambda1_neg_part: f64,
    /// Largest violation of `lambda <= 0` on upper-active cells.
    pub lambda2_pos_part: f64,
    /// Largest `|lambda|` on inactive cells.
    pub inactive_multiplier: f64,
    /// Largest of `|max(lambda,0) (lo - u)|` and `|min(lambda,0) (hi - u)|`.
    pub complementarity_gap: f64,
}

impl KktReport {
    /// Largest multiplier-sign or complementarity violation.
    pub fn max_violation(&self) -> f64 {
        self.lambda1_neg_part
            .max(self.lambda2_pos_part)
            .max(self.inactive_multiplier)
            .max(self.complementarity_gap)
    }
}

impl OcpProblem {
    pub fn kkt_report(&self, sol: &OcpSolution) -> KktReport {
        let avg = self.cell_average(&sol.p);
        let lambda: Vec<f64> = avg
            .iter()
            .zip(&sol.u)
            .map(|(a, u)| a + self.gamma * u)
            .collect();
        let nc = self.ncells();
        let mut is_lo = vec![false; nc];
        let mut is_hi = vec![false; nc];
        for &c in &sol.active_lo {
            is_lo[c] = true;
        }
        for &c in &sol.active_hi {
            is_hi[c] = true;
        }
        let mut l1 = 0.0f64;
        let mut l2 = 0.0f64;
        let mut free = 0.0f64;
        let mut gap = 0.0f64;
        for c in 0..nc {
            let l = lambda[c];
            let pinned = self.lo[c] == self.hi[c];
            if !pinned {
                if is_lo[c] {
                    l1 = l1.max(-l);
                } else if is_hi[c] {
                    l2 = l2.max(l);
                } else {
                    free = free.max(l.abs());
                }
            }
            gap = gap
                .max((l.max(0.0) * (self.lo[c] - sol.u[c])).abs())
                .max((l.min(0.0) * (self.hi[c] - sol.u[c])).abs());
        }
        KktReport {
            state_residual: self.state_residual(&sol.y, &sol.u),
            adjoint_residual: self.adjoint_residual(&sol.y, &sol.p),
            vi_violation: self.vi_violation(&sol.u, &avg),
            lambda,
            lambda1_neg_part: l1.max(0.0),
            lambda2_pos_part: l2.max(0.0),
            inactive_multiplier: free,
            complementarity_gap: gap,
        }
    }
}

/// Injects a control on an `n_from x n_from` mesh into a nested `n_to x n_to` mesh.
pub fn prolong_control(u: &[f64], n_from: usize, n_to: usize) -> Result<Vec<f64>, OcpError> {
    if u.len() != n_from * n_from {
        return Err(OcpError::DimensionMismatch {
            expected: n_from * n_from,
            got: u.len(),
        });
    }
    if n_from == 0 || n_to % n_from != 0 {
        return Err(OcpError::DimensionMismatch {
            expected: n_from,
            got: n_to,
        });
    }
    let r = n_to / n_from;
    let mut out = Vec::with_capacity(n_to * n_to);
    for cy in 0..n_to {
        for cx in 0..n_to {
            out.push(u[(cy / r) * n_from + cx / r]);
        }
    }
    Ok(out)
}

/// Relative errors of a candidate against a fine reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorTable {
    pub rel_l2_u: f64,
    pub rel_l2_y: f64,
    pub rel_energy_y: f64,
    pub rel_l2_p: f64,
    pub rel_energy_p: f64,
}

/// Compares a candidate (state and adjoint as fine DOF vectors, control on an
/// `n_control` mesh nested in the reference control mesh) with the reference.
pub fn error_report(
    ops: &FemOperators,
    reference: &OcpSolution,
    cand_y: &[f64],
    cand_p: &[f64],
    cand_u: &[f64],
    n_control: usize,
) -> Result<ErrorTable, OcpError> {
    let n = ops.ndofs();
    for v in [&reference.y, &reference.p] {
        if v.len() != n {
            return Err(OcpError::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
    }
    if cand_y.len() != n || cand_p.len() != n {
        return Err(OcpError::DimensionMismatch {
            expected: n,
            got: cand_y.len().min(cand_p.len()),
        });
    }
    let u = prolong_control(cand_u, n_control, ops.control_mesh.n())?;
    if reference.u.len() != u.len() {
        return Err(OcpError::DimensionMismatch {
            expected: u.len(),
            got: reference.u.len(),
        });
    }
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    let (ey_l2, ey_a) = ops.norms(&diff(cand_y, &reference.y));
    let (ry_l2, ry_a) = ops.norms(&reference.y);
    let (ep_l2, ep_a) = ops.norms(&diff(cand_p, &reference.p));
    let (rp_l2, rp_a) = ops.norms(&reference.p);
    let weighted = |v: &[f64]| -> f64 {
        v.iter()
            .zip(&ops.cell_volumes)
            .map(|(x, w)| w * x * x)
            .sum::<f64>()
            .sqrt()
    };
    Ok(ErrorTable {
        rel_l2_u: relative(weighted(&diff(&u, &reference.u)), weighted(&reference.u)),
        rel_l2_y: relative(ey_l2, ry_l2),
        rel_energy_y: relative(ey_a, ry_a),
        rel_l2_p: relative(ep_l2, rp_l2),
        rel_energy_p: relative(ep_a, rp_a),
    })
}
