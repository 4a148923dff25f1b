//! Independent dense reference computations used to validate the fast paths.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::assembly::{assemble, q_rho_project, Affine};
use crate::coeff::{make_heterogeneous, unit_interval};
use crate::grid::StructuredMesh;
use crate::linalg::{SolverRule, SparseMatrix};
use crate::lod::QuasiInterpolant;
use crate::ocp::{OcpError, OcpProblem, PdasOptions, PgOptions, StateSpace};

fn dense(a: &SparseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.nrows(), a.ncols(), &a.to_dense())
}

/// Exact kernel corrector of coarse hat `i` from the saddle-point system
/// `[[K, Pi^T], [Pi, 0]] [x; l] = [K phi_i; 0]`, solved by dense LU.
pub fn dense_corrector(stiffness: &SparseMatrix, pi: &QuasiInterpolant, i: usize) -> Option<Vec<f64>> {
    let n = stiffness.nrows();
    let m = pi.coarse_dim();
    let k = dense(stiffness);
    let p = dense(&pi.matrix);
    let mut sys = DMatrix::zeros(n + m, n + m);
    sys.view_mut((0, 0), (n, n)).copy_from(&k);
    sys.view_mut((0, n), (n, m)).copy_from(&p.transpose());
    sys.view_mut((n, 0), (m, n)).copy_from(&p);
    let phi = DVector::from_vec(pi.hat(i));
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(&k * phi));
    let sol = sys.lu().solve(&rhs)?;
    Some(sol.rows(0, n).iter().copied().collect())
}

/// Result of exhaustive active-set enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationResult {
    pub u: Vec<f64>,
    /// Reduced cost `J~(u)`.
    pub cost: f64,
    pub feasible_assignments: usize,
    /// Whether the multipliers of the minimizer have the right signs.
    pub multipliers_consistent: bool,
}

/// Solves the control problem by trying every lower/free/upper assignment of
/// the cells, each as an equality-constrained QP on a dense reduced Hessian
/// built by LU (independent of the iterative solvers). Returns `None` for
/// more than 12 cells.
pub fn enumerate_active_sets(prob: &OcpProblem) -> Option<EnumerationResult> {
    let nc = prob.ncells();
    if nc > 12 {
        return None;
    }
    let (k, m, b) = prob.space.dense_parts();
    let s = k.clone().lu().solve(&b)?;
    let mut h = s.transpose() * &m * &s;
    for c in 0..nc {
        h[(c, c)] += prob.gamma * prob.cell_volumes[c];
    }
    let rhs = s.transpose() * DVector::from_column_slice(&prob.target_load);
    let cost = |u: &DVector<f64>| 0.5 * u.dot(&(&h * u)) - rhs.dot(u);

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut feasible = 0;
    let total = 3usize.pow(nc as u32);
    for code in 0..total {
        let mut state = vec![0u8; nc];
        let mut c = code;
        for st in state.iter_mut() {
            *st = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..nc).filter(|&i| state[i] == 1).collect();
        let mut u = DVector::zeros(nc);
        for i in 0..nc {
            match state[i] {
                0 => u[i] = prob.lo[i],
                2 => u[i] = prob.hi[i],
                _ => {}
            }
        }
        if !free.is_empty() {
            let nf = free.len();
            let hff = DMatrix::from_fn(nf, nf, |a, b| h[(free[a], free[b])]);
            let hu = &h * &u;
            let r = DVector::from_fn(nf, |a, _| rhs[free[a]] - hu[free[a]]);
            let Some(x) = hff.lu().solve(&r) else { continue };
            for (a, &i) in free.iter().enumerate() {
                u[i] = x[a];
            }
        }
        let ok = (0..nc).all(|i| {
            let slack = 1e-12 * (1.0 + prob.lo[i].abs().max(prob.hi[i].abs()));
            u[i] >= prob.lo[i] - slack && u[i] <= prob.hi[i] + slack
        });
        if !ok {
            continue;
        }
        feasible += 1;
        let j = cost(&u);
        if best.as_ref().map_or(true, |(bj, _)| j < *bj) {
            best = Some((j, u));
        }
    }
    let (cost_best, u) = best?;
    let grad = &h * &u - &rhs;
    let scale = grad.amax().max(rhs.amax()).max(f64::MIN_POSITIVE);
    let multipliers_consistent = (0..nc).all(|i| {
        let g = grad[i];
        let tol = 1e-9 * scale;
        if prob.lo[i] == prob.hi[i] {
            true
        } else if u[i] <= prob.lo[i] {
            g >= -tol
        } else if u[i] >= prob.hi[i] {
            g <= tol
        } else {
            g.abs() <= tol
        }
    });
    Some(EnumerationResult {
        u: u.iter().copied().collect(),
        cost: cost_best,
        feasible_assignments: feasible,
        multipliers_consistent,
    })
}

/// A small random control problem for oracle comparisons.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub seed: u64,
    pub nh: usize,
    pub n_control: usize,
    pub problem: OcpProblem,
}

/// Draws a problem with state mesh at most 16x16, control mesh at most 3x3,
/// a seeded heterogeneous coefficient, random nodal `y_d`, random `gamma` and
/// random feasible affine bounds.
pub fn random_instance(seed: u64) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * unit_interval(rng.next_u64());
    let n_control = 1 + (uniform(0.0, 3.0) as usize).min(2);
    let choices: &[usize] = match n_control {
        1 => &[4, 6, 8, 12, 16],
        2 => &[4, 8, 12, 16],
        _ => &[6, 12],
    };
    let nh = choices[(uniform(0.0, choices.len() as f64) as usize).min(choices.len() - 1)];
    let field_seed = uniform(0.0, 1e9) as u64;
    let field = make_heterogeneous(nh, field_seed, nh / 2, 1.0, 10.0).expect("nh is even");
    let mesh = StructuredMesh::new(nh).expect("nh >= 4");
    let control = StructuredMesh::new(n_control).expect("n_control >= 1");
    let ops = assemble(&mesh, &field, &control).expect("n_control divides nh");
    let y_d: Vec<f64> = (0..mesh.node_count()).map(|_| uniform(-1.0, 1.0)).collect();
    let gamma = 10f64.powf(uniform(-3.0, -1.0));
    let load = ops.load_nodal(&y_d).expect("sizes match");
    let norm_sq = ops.l2_norm_sq_nodal(&y_d).expect("sizes match");
    let space = StateSpace::fine(&ops, SolverRule::default()).expect("stiffness is SPD");
    // bounds are scaled to the unconstrained optimum so that both bounds and
    // the interior are hit
    let nc = ops.ncells();
    let wide = OcpProblem::new(space.clone(), gamma, load.clone(), norm_sq, vec![-1e6; nc], vec![1e6; nc], ops.cell_volumes.clone())
        .expect("bounds are ordered");
    let free = wide.solve_pdas(&PdasOptions::default()).expect("unconstrained solve").u;
    let mean = free.iter().sum::<f64>() / nc as f64;
    let spread = free.iter().map(|u| (u - mean).abs()).fold(0.0, f64::max) + 0.1 * mean.abs() + 1e-3;
    let phi1 = Affine::new(
        mean + spread * uniform(-1.0, 0.5),
        spread * uniform(-1.0, 1.0),
        spread * uniform(-1.0, 1.0),
    );
    let mut width = Affine::new(
        spread * uniform(0.0, 1.5),
        spread * uniform(-0.5, 0.5),
        spread * uniform(-0.5, 0.5),
    );
    let lo = q_rho_project(&phi1, &control).values;
    let min_w = q_rho_project(&width, &control)
        .values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_w < 0.0 {
        width.c0 -= min_w;
    }
    let w = q_rho_project(&width, &control).values;
    let hi: Vec<f64> = lo.iter().zip(&w).map(|(l, w)| l + w.max(0.0)).collect();
    let problem = OcpProblem::new(space, gamma, load, norm_sq, lo, hi, ops.cell_volumes.clone()).expect("bounds are ordered");
    RandomInstance {
        seed,
        nh,
        n_control,
        problem,
    }
}

/// Agreement of the active set solver with the oracles on one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    /// Max-norm distance to the enumeration minimizer.
    pub enumeration_gap: f64,
    /// Max-norm distance to the projected gradient solution.
    pub projected_gradient_gap: f64,
    pub kkt_violation: f64,
    pub vi_violation: f64,
    pub converged: bool,
}

impl OracleCheck {
    pub fn passes(&self) -> bool {
        self.converged && self.enumeration_gap <= 1e-9 && self.projected_gradient_gap <= 1e-6 && self.kkt_violation <= 1e-9
    }
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Solves with PDAS and compares against enumeration and projected gradient.
/// Returns `None` when the problem is too large to enumerate.
pub fn check_against_oracles(prob: &OcpProblem) -> Result<Option<OracleCheck>, OcpError> {
    let Some(reference) = enumerate_active_sets(prob) else {
        return Ok(None);
    };
    let sol = prob.solve_pdas(&PdasOptions::default())?;
    let pg = prob.solve_projected_gradient(&PgOptions::default())?;
    let kkt = prob.kkt_report(&sol);
    Ok(Some(OracleCheck {
        enumeration_gap: max_gap(&sol.u, &reference.u),
        projected_gradient_gap: max_gap(&sol.u, &pg.u),
        kkt_violation: kkt.max_violation(),
        vi_violation: kkt.vi_violation,
        converged: sol.converged,
    }))
}
