//! Basis persistence and fingerprints.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::basis::{BasisColumn, BasisMeta, MultiscaleBasis};
use super::corrector::support_radius;
use super::LodError;
use crate::coeff::CoefficientField;
use crate::grid::{build_hierarchy, ElementRect};

const MAGIC: &[u8; 8] = b"MSLODB1\0";

/// First eight bytes of SHA-256 over the field bytes followed by `nH`, `nh`, `k`.
pub fn fingerprint(field: &CoefficientField, n_coarse: usize, n_fine: usize, k: usize) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(field.to_bytes());
    hasher.update((n_coarse as u32).to_le_bytes());
    hasher.update((n_fine as u32).to_le_bytes());
    hasher.update((k as u32).to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn save_basis(basis: &MultiscaleBasis, path: &Path) -> Result<(), LodError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let meta = &basis.meta;
    w.write_all(MAGIC)?;
    for v in [meta.n_coarse, meta.n_fine, meta.k] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&meta.j.unwrap_or(0).to_le_bytes())?;
    w.write_all(&meta.fingerprint.to_le_bytes())?;
    w.write_all(&(basis.len() as u32).to_le_bytes())?;
    let nh = meta.n_fine;
    for col in &basis.columns {
        let entries: Vec<(u32, f64)> = col
            .nodes
            .dofs(nh)
            .into_iter()
            .zip(&col.values)
            .filter(|(_, &v)| v != 0.0)
            .map(|(d, &v)| (d as u32, v))
            .collect();
        w.write_all(&(entries.len() as u32).to_le_bytes())?;
        for (d, v) in entries {
            w.write_all(&d.to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], LodError> {
        if self.pos + n > self.bytes.len() {
            return Err(LodError::Truncated {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, LodError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, LodError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, LodError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn basis_from_bytes(bytes: &[u8]) -> Result<MultiscaleBasis, LodError> {
    let mut rd = Reader { bytes, pos: 0 };
    if rd.take(8)? != MAGIC {
        return Err(LodError::BadMagic);
    }
    let n_coarse = rd.u32()? as usize;
    let n_fine = rd.u32()? as usize;
    let k = rd.u32()? as usize;
    let j = rd.u32()?;
    let fp = rd.u64()?;
    let m = rd.u32()? as usize;
    let hier = build_hierarchy(n_coarse, n_fine, n_coarse).map_err(|e| LodError::Corrupt(e.to_string()))?;
    if m != hier.coarse_dofs() {
        return Err(LodError::Corrupt(format!("{m} columns for {} coarse vertices", hier.coarse_dofs())));
    }
    let nf = hier.fine.interior_node_count();
    let vertex_ids = hier.coarse.interior_node_ids();
    let mut columns = Vec::with_capacity(m);
    let mut radius_max = 0;
    let mut full = vec![0.0; nf];
    for (i, &node) in vertex_ids.iter().enumerate() {
        let nnz = rd.u32()? as usize;
        let mut touched = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let d = rd.u32()? as usize;
            let v = rd.f64()?;
            if d >= nf {
                return Err(LodError::Corrupt(format!("column {i}: DOF {d} out of range")));
            }
            full[d] = v;
            touched.push(d);
        }
        let vertex = hier.coarse.node_index(node);
        let radius = support_radius(&hier, vertex, &full).unwrap_or(0);
        radius_max = radius_max.max(radius);
        let nodes = ElementRect::around_vertex(n_coarse, vertex.0, vertex.1, radius)
            .open_fine_nodes(hier.coarse_ratio, n_fine)
            .ok_or_else(|| LodError::Corrupt(format!("column {i}: empty support")))?;
        let mut values = Vec::with_capacity(nodes.len());
        for range in nodes.dof_rows(n_fine) {
            values.extend_from_slice(&full[range]);
        }
        for d in touched {
            full[d] = 0.0;
        }
        columns.push(BasisColumn { nodes, values });
    }
    if rd.pos != bytes.len() {
        return Err(LodError::Corrupt(format!("{} trailing bytes", bytes.len() - rd.pos)));
    }
    Ok(MultiscaleBasis {
        meta: BasisMeta {
            n_coarse,
            n_fine,
            k,
            j: if j == 0 { None } else { Some(j) },
            fingerprint: fp,
            patch_layers: 0,
            support_radius: radius_max,
        },
        columns,
    })
}

pub fn load_basis(path: &Path) -> Result<MultiscaleBasis, LodError> {
    basis_from_bytes(&fs::read(path)?)
}

/// Loads a basis and refuses it unless its fingerprint matches.
pub fn load_basis_checked(path: &Path, expected: u64) -> Result<MultiscaleBasis, LodError> {
    let basis = load_basis(path)?;
    if basis.meta.fingerprint != expected {
        return Err(LodError::FingerprintMismatch {
            expected,
            found: basis.meta.fingerprint,
        });
    }
    Ok(basis)
}
