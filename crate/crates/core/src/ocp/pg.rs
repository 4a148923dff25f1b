//! Fixed-step projected gradient, used as a cross-check for the active set solver.

use super::{OcpError, OcpProblem, OcpSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct PgOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Overrides the step `1 / (gamma + |S|^2)`.
    pub step: Option<f64>,
    pub power_iterations: usize,
}

impl Default for PgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
            step: None,
            power_iterations: 30,
        }
    }
}

impl OcpProblem {
    /// Estimates the largest eigenvalue of `V^{-1} S^T M S`, `S = K^{-1} B`,
    /// by power iteration, inflated by 5%.
    pub fn control_to_state_norm_sq(&self, iterations: usize) -> Result<f64, OcpError> {
        let nc = self.ncells();
        let mut v: Vec<f64> = (0..nc).map(|c| 1.0 + (c % 7) as f64 * 0.1).collect();
        let mut est = 0.0;
        for _ in 0..iterations.max(1) {
            let vn: f64 = v
                .iter()
                .zip(&self.cell_volumes)
                .map(|(x, w)| w * x * x)
                .sum::<f64>()
                .sqrt();
            if vn == 0.0 {
                return Ok(0.0);
            }
            for x in v.iter_mut() {
                *x /= vn;
            }
            let y = self.solve_state(&v)?;
            let w = self.space.solve(&self.space.apply_mass(&y))?;
            let g = self.space.apply_coupling_t(&w);
            let next: Vec<f64> = g.iter().zip(&self.cell_volumes).map(|(a, w)| a / w).collect();
            est = next
                .iter()
                .zip(&v)
                .zip(&self.cell_volumes)
                .map(|((a, b), w)| w * a * b)
                .sum::<f64>();
            v = next;
        }
        Ok(1.05 * est)
    }

    pub fn solve_projected_gradient(&self, opts: &PgOptions) -> Result<OcpSolution, OcpError> {
        let norm_sq = match opts.step {
            Some(_) => 0.0,
            None => self.control_to_state_norm_sq(opts.power_iterations)?,
        };
        let step = opts.step.unwrap_or(1.0 / (self.gamma + norm_sq));
        let q = (1.0 - self.gamma * step).abs().min(1.0 - 1e-12);
        let stop = opts.tol * (1.0 - q);
        let mut u = self.feasible_start();
        let mut y = self.solve_state(&u)?;
        let mut cost = self.evaluate_j_tilde(&y, &u);
        for it in 1..=opts.max_iter {
            let p = self.solve_adjoint(&y)?;
            let avg = self.cell_average(&p);
            let next: Vec<f64> = (0..self.ncells())
                .map(|c| {
                    let lambda = avg[c] + self.gamma * u[c];
                    (u[c] - step * lambda).clamp(self.lo[c], self.hi[c])
                })
                .collect();
            let change = next
                .iter()
                .zip(&u)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let y_next = self.solve_state(&next)?;
            let cost_next = self.evaluate_j_tilde(&y_next, &next);
            if cost_next > cost + 1e-10 * cost.abs().max(f64::MIN_POSITIVE) {
                return Err(OcpError::Diverged {
                    iteration: it,
                    before: cost,
                    after: cost_next,
                });
            }
            u = next;
            y = y_next;
            cost = cost_next;
            if change <= stop {
                return self.solution_for(u, it, true);
            }
        }
        self.solution_for(u, opts.max_iter, false)
    }
}
