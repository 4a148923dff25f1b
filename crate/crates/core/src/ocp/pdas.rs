//! Primal-dual active set method on the reduced (control-only) problem.

use super::{OcpError, OcpProblem, OcpSolution};
use crate::linalg::pcg;

#[derive(Debug, Clone, PartialEq)]
pub struct PdasOptions {
    /// Bound on the variational-inequality violation, in control units.
    pub tol: f64,
    pub max_iter: usize,
    /// Inner CG iteration cap per active-set solve.
    pub cg_max_iter: usize,
    pub initial: Option<Vec<f64>>,
}

impl Default for PdasOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            cg_max_iter: 500,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Lower,
    Free,
    Upper,
}

impl OcpProblem {
    fn classify(&self, avg_p: &[f64]) -> Vec<Status> {
        avg_p
            .iter()
            .enumerate()
            .map(|(c, a)| {
                let t = -a / self.gamma;
                if t < self.lo[c] {
                    Status::Lower
                } else if t > self.hi[c] {
                    Status::Upper
                } else {
                    Status::Free
                }
            })
            .collect()
    }

    /// Solves the reduced problem on the free cells with the others fixed at
    /// their bounds, by CG warm-started from `u`.
    fn solve_free(&self, status: &[Status], u: &mut [f64], opts: &PdasOptions) -> Result<(), OcpError> {
        let nc = self.ncells();
        for c in 0..nc {
            match status[c] {
                Status::Lower => u[c] = self.lo[c],
                Status::Upper => u[c] = self.hi[c],
                Status::Free => {}
            }
        }
        let free: Vec<usize> = (0..nc).filter(|&c| status[c] == Status::Free).collect();
        if free.is_empty() {
            return Ok(());
        }
        // rhs = -(gradient at (u_A, 0))_I, gradient = H u - B^T K^{-1} l_d
        let mut base = u.to_vec();
        for &c in &free {
            base[c] = 0.0;
        }
        let y = self.solve_state(&base)?;
        let p = self.solve_adjoint(&y)?;
        let bp = self.space.apply_coupling_t(&p);
        let rhs: Vec<f64> = free
            .iter()
            .map(|&c| -(bp[c] + self.gamma * self.cell_volumes[c] * base[c]))
            .collect();
        let mut x: Vec<f64> = free.iter().map(|&c| u[c]).collect();
        let min_vol = self.cell_volumes.iter().copied().fold(f64::INFINITY, f64::min);
        let abs_tol = 0.1 * opts.tol * self.gamma * min_vol;
        let diag: Vec<f64> = free.iter().map(|&c| self.gamma * self.cell_volumes[c]).collect();
        let mut err = None;
        let mut full = vec![0.0; nc];
        pcg(
            |v, out| {
                full.fill(0.0);
                for (&c, &x) in free.iter().zip(v) {
                    full[c] = x;
                }
                match self.hessian_apply(&full) {
                    Ok(h) => {
                        for (o, &c) in out.iter_mut().zip(&free) {
                            *o = h[c];
                        }
                    }
                    Err(e) => {
                        err.get_or_insert(e);
                        out.copy_from_slice(v);
                    }
                }
            },
            |r, z| {
                for ((zi, ri), d) in z.iter_mut().zip(r).zip(&diag) {
                    *zi = ri / d;
                }
            },
            &rhs,
            &mut x,
            abs_tol,
            opts.cg_max_iter,
        )?;
        if let Some(e) = err {
            return Err(e);
        }
        for (&c, &v) in free.iter().zip(&x) {
            u[c] = v;
        }
        Ok(())
    }

    /// Primal-dual active set iteration. When the sets do not settle within
    /// `max_iter` the last iterate is returned with `converged = false`.
    pub fn solve_pdas(&self, opts: &PdasOptions) -> Result<OcpSolution, OcpError> {
        let mut u = match &opts.initial {
            Some(u0) => {
                self.check_cells(u0)?;
                u0.iter()
                    .zip(self.lo.iter().zip(&self.hi))
                    .map(|(x, (&l, &h))| x.clamp(l, h))
                    .collect()
            }
            None => self.feasible_start(),
        };
        let y = self.solve_state(&u)?;
        let p = self.solve_adjoint(&y)?;
        let mut status = self.classify(&self.cell_average(&p));
        for it in 1..=opts.max_iter {
            self.solve_free(&status, &mut u, opts)?;
            let y = self.solve_state(&u)?;
            let p = self.solve_adjoint(&y)?;
            let avg = self.cell_average(&p);
            let vi = self.vi_violation(&u, &avg);
            let next = self.classify(&avg);
            log::debug!("pdas iteration {it}: vi violation {vi:e}");
            if next == status && vi <= opts.tol {
                return Ok(self.finish(u, y, p, &status, vi, it, true));
            }
            if it == opts.max_iter {
                return Ok(self.finish(u, y, p, &status, vi, it, false));
            }
            status = next;
        }
        // max_iter == 0
        let y = self.solve_state(&u)?;
        let p = self.solve_adjoint(&y)?;
        let vi = self.vi_violation(&u, &self.cell_average(&p));
        Ok(self.finish(u, y, p, &status, vi, 0, false))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(&self, u: Vec<f64>, y: Vec<f64>, p: Vec<f64>, status: &[Status], vi: f64, iterations: usize, converged: bool) -> OcpSolution {
        let active_lo = (0..status.len()).filter(|&c| status[c] == Status::Lower).collect();
        let active_hi = (0..status.len()).filter(|&c| status[c] == Status::Upper).collect();
        let j_tilde = self.evaluate_j_tilde(&y, &u);
        OcpSolution {
            y,
            u,
            p,
            j_tilde,
            active_lo,
            active_hi,
            iterations,
            converged,
            vi_violation: vi,
        }
    }
}
