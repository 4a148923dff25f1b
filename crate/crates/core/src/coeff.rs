//! Elementwise-constant coefficient fields `A(x)` on a fine mesh.
//!
//! Each fine element carries a symmetric 2x2 matrix `(a11, a12, a22)`. The
//! field records the extreme eigenvalues over all elements as `alpha` and
//! `beta`, and construction fails if any element is not positive definite.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

use crate::grid::StructuredMesh;

const MAGIC: &[u8; 8] = b"MSLODCF1";
const HEADER_LEN: usize = 8 + 4 + 4 + 8 + 8;

#[derive(Debug, Error)]
pub enum CoeffError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("element {element}: matrix is not positive definite (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { element: usize, min_eig: f64 },
    #[error("bad magic bytes in coefficient file")]
    BadMagic,
    #[error("unknown coefficient kind tag {0}")]
    UnknownKind(u32),
    #[error("coefficient file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("coefficient field has resolution {found}, mesh needs {expected}")]
    ResolutionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoeffKind {
    Identity,
    Heterogeneous,
    Oscillatory,
    File,
}

impl CoeffKind {
    fn tag(self) -> u32 {
        match self {
            CoeffKind::Identity => 0,
            CoeffKind::Heterogeneous => 1,
            CoeffKind::Oscillatory => 2,
            CoeffKind::File => 3,
        }
    }

    fn from_tag(tag: u32) -> Result<Self, CoeffError> {
        Ok(match tag {
            0 => CoeffKind::Identity,
            1 => CoeffKind::Heterogeneous,
            2 => CoeffKind::Oscillatory,
            3 => CoeffKind::File,
            t => return Err(CoeffError::UnknownKind(t)),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CoeffKind::Identity => "identity",
            CoeffKind::Heterogeneous => "heterogeneous",
            CoeffKind::Oscillatory => "oscillatory",
            CoeffKind::File => "file",
        }
    }
}

/// Symmetric 2x2 matrix `[[a11, a12], [a12, a22]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymMat2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl SymMat2 {
    pub const IDENTITY: SymMat2 = SymMat2 {
        a11: 1.0,
        a12: 0.0,
        a22: 1.0,
    };

    pub fn scalar(c: f64) -> Self {
        Self {
            a11: c,
            a12: 0.0,
            a22: c,
        }
    }

    /// Eigenvalues `(min, max)`.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.a11 + self.a22);
        let half_diff = 0.5 * (self.a11 - self.a22);
        let rad = (half_diff * half_diff + self.a12 * self.a12).sqrt();
        (mean - rad, mean + rad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    kind: CoeffKind,
    n: usize,
    values: Vec<SymMat2>,
    alpha: f64,
    beta: f64,
    seed: Option<u64>,
    epsilon: Option<f64>,
}

impl CoefficientField {
    /// Validates every element and computes the spectral bounds.
    pub fn from_values(
        kind: CoeffKind,
        n: usize,
        values: Vec<SymMat2>,
        seed: Option<u64>,
        epsilon: Option<f64>,
    ) -> Result<Self, CoeffError> {
        if n == 0 || values.len() != n * n {
            return Err(CoeffError::InvalidParameter(format!(
                "expected {} element matrices for resolution {n}, got {}",
                n * n,
                values.len()
            )));
        }
        let mut alpha = f64::INFINITY;
        let mut beta = f64::NEG_INFINITY;
        for (e, m) in values.iter().enumerate() {
            let (lo, hi) = m.eigenvalues();
            if !(lo > 0.0) || !hi.is_finite() {
                return Err(CoeffError::NotPositiveDefinite {
                    element: e,
                    min_eig: lo,
                });
            }
            alpha = alpha.min(lo);
            beta = beta.max(hi);
        }
        Ok(Self {
            kind,
            n,
            values,
            alpha,
            beta,
            seed,
            epsilon,
        })
    }

    pub fn kind(&self) -> CoeffKind {
        self.kind
    }

    /// Fine resolution the field is defined on.
    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    #[inline]
    pub fn element(&self, e: usize) -> SymMat2 {
        self.values[e]
    }

    pub fn values(&self) -> &[SymMat2] {
        &self.values
    }

    pub fn check_mesh(&self, mesh: &StructuredMesh) -> Result<(), CoeffError> {
        if mesh.n() != self.n {
            return Err(CoeffError::ResolutionMismatch {
                expected: mesh.n(),
                found: self.n,
            });
        }
        Ok(())
    }

    /// Little-endian serialization (see [`save_field`]).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.values.len() * 24);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&self.kind.tag().to_le_bytes());
        out.extend_from_slice(&self.seed.unwrap_or(0).to_le_bytes());
        out.extend_from_slice(&self.epsilon.unwrap_or(0.0).to_le_bytes());
        for m in &self.values {
            out.extend_from_slice(&m.a11.to_le_bytes());
            out.extend_from_slice(&m.a12.to_le_bytes());
            out.extend_from_slice(&m.a22.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CoeffError> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 8 && &bytes[..8] != MAGIC {
                return Err(CoeffError::BadMagic);
            }
            return Err(CoeffError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        if &bytes[..8] != MAGIC {
            return Err(CoeffError::BadMagic);
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let n = u32_at(8) as usize;
        let kind = CoeffKind::from_tag(u32_at(12))?;
        let seed = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let eps = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
        let expected = HEADER_LEN + n * n * 24;
        if bytes.len() != expected {
            return Err(CoeffError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        let f = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let values = (0..n * n)
            .map(|e| {
                let o = HEADER_LEN + 24 * e;
                SymMat2 {
                    a11: f(o),
                    a12: f(o + 8),
                    a22: f(o + 16),
                }
            })
            .collect();
        let seed = (kind == CoeffKind::Heterogeneous).then_some(seed);
        let epsilon = (kind == CoeffKind::Oscillatory).then_some(eps);
        Self::from_values(kind, n, values, seed, epsilon)
    }
}

pub fn make_identity(n: usize) -> CoefficientField {
    CoefficientField::from_values(CoeffKind::Identity, n, vec![SymMat2::IDENTITY; n * n], None, None)
        .expect("identity field is positive definite")
}

/// Maps a raw 64-bit draw to `[0, 1)` using its top 53 bits.
#[inline]
pub fn unit_interval(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Diagonal field with `a11`, `a22` constant on a `blocks x blocks` grid,
/// drawn independently and uniformly from `[lo, hi]`.
///
/// Draws come from ChaCha8 seeded with `seed`, visiting blocks row-major
/// (`bx` fastest) and taking `a11` then `a22` for each block; a draw `b` maps
/// to `lo + (hi - lo) * (b >> 11) / 2^53`.
pub fn make_heterogeneous(n: usize, seed: u64, blocks: usize, lo: f64, hi: f64) -> Result<CoefficientField, CoeffError> {
    if blocks == 0 || n % blocks != 0 {
        return Err(CoeffError::InvalidParameter(format!(
            "blocks={blocks} must divide the fine resolution {n}"
        )));
    }
    if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(CoeffError::InvalidParameter(format!(
            "need 0 < lo <= hi, got lo={lo}, hi={hi}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut block_vals = Vec::with_capacity(blocks * blocks);
    for _ in 0..blocks * blocks {
        let a11 = lo + (hi - lo) * unit_interval(rng.next_u64());
        let a22 = lo + (hi - lo) * unit_interval(rng.next_u64());
        block_vals.push((a11, a22));
    }
    let per = n / blocks;
    let mesh = StructuredMesh::new(n).map_err(|e| CoeffError::InvalidParameter(e.to_string()))?;
    let values = (0..n * n)
        .map(|e| {
            let (ex, ey) = mesh.element_index(e);
            let (a11, a22) = block_vals[(ex / per) + (ey / per) * blocks];
            SymMat2 { a11, a12: 0.0, a22 }
        })
        .collect();
    CoefficientField::from_values(CoeffKind::Heterogeneous, n, values, Some(seed), None)
}

/// The oscillatory scalar coefficient `c(x)`.
pub fn oscillatory_value(x1: f64, x2: f64, eps: f64) -> f64 {
    let s1 = (2.0 * PI * x1 / eps).sin();
    let s2 = (2.0 * PI * x2 / eps).sin();
    (2.0 + 1.8 * s1) / (2.0 + 1.8 * s2) + (2.0 + s2) / (2.0 + 1.8 * s1)
}

/// `c(x) I` sampled at fine element centroids.
pub fn make_oscillatory(n: usize, eps: f64) -> Result<CoefficientField, CoeffError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(CoeffError::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let mesh = StructuredMesh::new(n).map_err(|e| CoeffError::InvalidParameter(e.to_string()))?;
    let values = (0..n * n)
        .map(|e| {
            let (x1, x2) = mesh.element_centroid(e);
            SymMat2::scalar(oscillatory_value(x1, x2, eps))
        })
        .collect();
    CoefficientField::from_values(CoeffKind::Oscillatory, n, values, None, Some(eps))
}

pub fn save_field(field: &CoefficientField, path: &Path) -> Result<(), CoeffError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&field.to_bytes())?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<CoefficientField, CoeffError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    CoefficientField::from_bytes(&bytes)
}

/// Loads a field and checks it matches the mesh resolution.
pub fn load_field_for(path: &Path, mesh: &StructuredMesh) -> Result<CoefficientField, CoeffError> {
    let field = load_field(path)?;
    field.check_mesh(mesh)?;
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_field() {
        let f = make_identity(4);
        assert_eq!(f.element(7), SymMat2::IDENTITY);
        assert_eq!((f.alpha(), f.beta()), (1.0, 1.0));
    }

    #[test]
    fn heterogeneous_range_and_determinism() {
        let a = make_heterogeneous(80, 11, 40, 1.0, 1350.0).unwrap();
        for m in a.values() {
            assert!(m.a11 >= 1.0 && m.a11 <= 1350.0);
            assert!(m.a22 >= 1.0 && m.a22 <= 1350.0);
            assert_eq!(m.a12, 0.0);
        }
        assert!(a.alpha() >= 1.0 && a.beta() <= 1350.0);
        let b = make_heterogeneous(80, 11, 40, 1.0, 1350.0).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = make_heterogeneous(80, 12, 40, 1.0, 1350.0).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
        // blocks are constant over 2x2 fine elements
        assert_eq!(a.element(0), a.element(1));
        assert_eq!(a.element(0), a.element(80));
    }

    #[test]
    fn heterogeneous_constant_case() {
        let f = make_heterogeneous(8, 3, 4, 5.0, 5.0).unwrap();
        assert!(f.values().iter().all(|m| *m == SymMat2::scalar(5.0)));
        assert_eq!((f.alpha(), f.beta()), (5.0, 5.0));
    }

    #[test]
    fn heterogeneous_rejects_bad_blocks() {
        assert!(make_heterogeneous(10, 1, 4, 1.0, 2.0).is_err());
        assert!(make_heterogeneous(8, 1, 4, 0.0, 2.0).is_err());
        assert!(make_heterogeneous(8, 1, 4, 3.0, 2.0).is_err());
    }

    #[test]
    fn oscillatory_point_values() {
        let eps = 0.025;
        // both sines equal one
        let c = oscillatory_value(eps / 4.0, eps / 4.0, eps);
        assert!((c - (3.8 / 3.8 + 3.0 / 3.8)).abs() < 1e-12);
        assert!((c - 1.789474).abs() < 1e-6);
        // both sines vanish
        assert!((oscillatory_value(0.0, 0.0, eps) - 2.0).abs() < 1e-12);
        assert!((oscillatory_value(eps / 2.0, eps, eps) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn oscillatory_positive_on_fine_mesh() {
        let f = make_oscillatory(320, 0.025).unwrap();
        let lower = 0.2 / 3.8 + 1.0 / 3.8;
        assert!(f.alpha() >= lower);
        // exhaustive scan agrees with stored bounds
        let mesh = StructuredMesh::new(320).unwrap();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for e in 0..mesh.element_count() {
            let (x, y) = mesh.element_centroid(e);
            let c = oscillatory_value(x, y, 0.025);
            lo = lo.min(c);
            hi = hi.max(c);
        }
        assert_eq!((f.alpha(), f.beta()), (lo, hi));
        assert!(f.beta() / f.alpha() < 100.0);
    }

    #[test]
    fn rejects_indefinite_element() {
        let vals = vec![SymMat2 { a11: 1.0, a12: 2.0, a22: 1.0 }; 4];
        assert!(matches!(
            CoefficientField::from_values(CoeffKind::File, 2, vals, None, None),
            Err(CoeffError::NotPositiveDefinite { element: 0, .. })
        ));
    }

    #[test]
    fn bytes_round_trip_and_corruption() {
        let f = make_heterogeneous(8, 7, 4, 1.0, 10.0).unwrap();
        let bytes = f.to_bytes();
        assert_eq!(CoefficientField::from_bytes(&bytes).unwrap(), f);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(CoefficientField::from_bytes(&bad), Err(CoeffError::BadMagic)));
        assert!(matches!(
            CoefficientField::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CoeffError::Truncated { .. })
        ));
    }
}
