use super::{dot, norm2, LinalgError, SparseMatrix};

/// Action of an approximate inverse `z = M^{-1} r`.
pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

/// Diagonal scaling by `1 / a_ii`.
#[derive(Debug, Clone)]
pub struct JacobiPreconditioner {
    inv_diag: Vec<f64>,
}

impl JacobiPreconditioner {
    pub fn new(a: &SparseMatrix) -> Self {
        let inv_diag = a
            .diagonal()
            .into_iter()
            .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        Self { inv_diag }
    }
}

impl Preconditioner for JacobiPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative Euclidean residual `||b - Ax|| / ||b||` (absolute when `b = 0`).
    pub final_residual: f64,
    pub converged: bool,
    /// Euclidean residual norm after each iteration, starting with the initial one.
    pub residual_history: Vec<f64>,
}

/// Preconditioned conjugate gradients on `A x = b` with a CSR matrix.
///
/// Stops when `||b - Ax|| <= tol * ||b||`, or `||b - Ax|| <= 1e-14` when `b = 0`.
pub fn cg_solve(
    a: &SparseMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    preconditioner: Option<&dyn Preconditioner>,
) -> Result<(Vec<f64>, SolveReport), LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if b.len() != a.nrows() {
        return Err(LinalgError::DimensionMismatch {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    let bnorm = norm2(b);
    let abs_tol = if bnorm > 0.0 { tol * bnorm } else { 1e-14 };
    let mut x = vec![0.0; b.len()];
    let mut report = match preconditioner {
        Some(m) => pcg(
            |v, out| a.spmv_into(v, out),
            |r, z| m.apply(r, z),
            b,
            &mut x,
            abs_tol,
            max_iter,
        )?,
        None => pcg(
            |v, out| a.spmv_into(v, out),
            |r, z| z.copy_from_slice(r),
            b,
            &mut x,
            abs_tol,
            max_iter,
        )?,
    };
    if bnorm > 0.0 {
        report.final_residual /= bnorm;
        for r in &mut report.residual_history {
            *r /= bnorm;
        }
    }
    Ok((x, report))
}

/// Matrix-free preconditioned CG, warm-started from `x`.
///
/// `final_residual` in the returned report is the absolute Euclidean residual.
pub fn pcg(
    mut matvec: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    abs_tol: f64,
    max_iter: usize,
) -> Result<SolveReport, LinalgError> {
    let n = b.len();
    let mut r = vec![0.0; n];
    let mut q = vec![0.0; n];
    matvec(x, &mut q);
    for i in 0..n {
        r[i] = b[i] - q[i];
    }
    let mut rnorm = norm2(&r);
    let mut history = vec![rnorm];
    if rnorm <= abs_tol {
        return Ok(SolveReport {
            iterations: 0,
            final_residual: rnorm,
            converged: true,
            residual_history: history,
        });
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut rz = dot(&r, &z);
    if !(rz > 0.0) {
        return Err(LinalgError::IndefinitePreconditioner {
            iteration: 0,
            value: rz,
        });
    }
    let mut p = z.clone();
    for it in 1..=max_iter {
        matvec(&p, &mut q);
        let curvature = dot(&p, &q);
        if !(curvature > 0.0) {
            return Err(LinalgError::Breakdown {
                iteration: it,
                curvature,
            });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        rnorm = norm2(&r);
        history.push(rnorm);
        if rnorm <= abs_tol {
            return Ok(SolveReport {
                iterations: it,
                final_residual: rnorm,
                converged: true,
                residual_history: history,
            });
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        if !(rz_new > 0.0) {
            return Err(LinalgError::IndefinitePreconditioner {
                iteration: it,
                value: rz_new,
            });
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(SolveReport {
        iterations: max_iter,
        final_residual: rnorm,
        converged: false,
        residual_history: history,
    })
}
