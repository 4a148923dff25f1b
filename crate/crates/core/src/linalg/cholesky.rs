use super::{dot, LinalgError, SparseMatrix};

/// Envelope (profile) Cholesky factor `A = L L^T`.
///
/// Row `i` of `L` is stored densely from its first structural nonzero up to
/// the diagonal, so fill is confined to the envelope of the input ordering.
/// Natural orderings of structured grids are already banded, which is the
/// only case this crate factors at scale.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    first: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl CholeskyFactor {
    /// Factors a symmetric positive definite matrix; only the lower triangle is read.
    pub fn factor(a: &SparseMatrix) -> Result<Self, LinalgError> {
        if a.nrows() != a.ncols() {
            return Err(LinalgError::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        let n = a.nrows();
        let mut first = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for i in 0..n {
            let (cols, _) = a.row(i);
            let f = cols.first().copied().filter(|&c| c < i).unwrap_or(i);
            first.push(f);
            offsets.push(offsets[i] + (i - f + 1));
        }
        let mut data = vec![0.0; offsets[n]];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (c, v) in cols.iter().zip(vals) {
                if *c <= i {
                    data[offsets[i] + (c - first[i])] = *v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let (done, rest) = data.split_at_mut(offsets[i]);
            let row_i = &mut rest[..i - fi + 1];
            for j in fi..i {
                let fj = first[j];
                let s = fi.max(fj);
                let row_j = &done[offsets[j]..offsets[j + 1]];
                let lij = row_i[j - fi];
                let acc = dot(&row_i[s - fi..j - fi], &row_j[s - fj..j - fj]);
                row_i[j - fi] = (lij - acc) / row_j[j - fj];
            }
            let d = row_i[i - fi] - dot(&row_i[..i - fi], &row_i[..i - fi]);
            if !(d > 0.0) || !d.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { pivot: i, value: d });
            }
            row_i[i - fi] = d.sqrt();
        }
        Ok(Self {
            n,
            first,
            offsets,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if b.len() != self.n {
            return Err(LinalgError::DimensionMismatch {
                expected: self.n,
                got: b.len(),
            });
        }
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        Ok(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let fi = self.first[i];
            let row = &self.data[self.offsets[i]..self.offsets[i + 1]];
            let s = dot(&row[..i - fi], &x[fi..i]);
            x[i] = (x[i] - s) / row[i - fi];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.offsets[i]..self.offsets[i + 1]];
            let xi = x[i] / row[i - fi];
            x[i] = xi;
            if xi != 0.0 {
                for (xk, l) in x[fi..i].iter_mut().zip(&row[..i - fi]) {
                    *xk -= l * xi;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::TripletBuilder;

    #[test]
    fn scaled_identity() {
        let a = SparseMatrix::from_dense(2, 2, &[4.0, 0.0, 0.0, 4.0]);
        let f = CholeskyFactor::factor(&a).unwrap();
        assert_eq!(f.solve(&[8.0, 4.0]).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn zero_pivot_reports_index() {
        let a = SparseMatrix::from_dense(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        match CholeskyFactor::factor(&a) {
            Err(LinalgError::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn indefinite_rejected() {
        let a = SparseMatrix::from_dense(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            CholeskyFactor::factor(&a),
            Err(LinalgError::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn tridiagonal_residual() {
        let n = 50;
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 2.0);
            if i > 0 {
                b.push(i, i - 1, -1.0);
                b.push(i - 1, i, -1.0);
            }
        }
        let a = b.build();
        let f = CholeskyFactor::factor(&a).unwrap();
        assert_eq!(f.envelope_size(), 2 * n - 1);
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = f.solve(&rhs).unwrap();
        let r = a.spmv(&x).unwrap();
        let err: f64 = r.iter().zip(&rhs).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-12, "residual {err}");
    }
}
