//! CSV writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{ExperimentError, SweepParam};
use crate::ocp::ErrorTable;

pub const SWEEP_HEADER: &str = "param,rel_l2_u,rel_l2_y,rel_energy_y,rel_l2_p,jtilde,k,seconds";

/// Writes a `quantity,value` table.
pub fn write_result_csv(path: &Path, rows: &[(String, String)]) -> Result<(), ExperimentError> {
    let mut text = String::from("quantity,value\n");
    for (k, v) in rows {
        text.push_str(k);
        text.push(',');
        text.push_str(v);
        text.push('\n');
    }
    super::write_text(path, &text)
}

/// Formats row-major values (row 0 first) as comma-separated lines. With
/// `integer` the values are printed as `0`/`1` style integers.
pub fn format_grid(values: &[f64], width: usize, height: usize, integer: bool) -> String {
    assert_eq!(values.len(), width * height);
    let mut out = String::new();
    for row in values.chunks(width) {
        let line: Vec<String> = row
            .iter()
            .map(|v| if integer { format!("{}", *v as i64) } else { format!("{v:e}") })
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Least-squares slope of `log y` against `log x`. `None` with fewer than two
/// usable points (non-positive values are skipped).
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// `H` or `rho`.
    pub param: f64,
    pub errors: ErrorTable,
    pub j_tilde: f64,
    pub k: usize,
    pub seconds: f64,
}

/// Sweep table streamed to disk one row at a time.
#[derive(Debug)]
pub struct SweepTable {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
    /// Slopes for `rel_l2_u, rel_l2_y, rel_energy_y, rel_l2_p`.
    pub slopes: [Option<f64>; 4],
    pub reference_j_tilde: Option<f64>,
    pub path: PathBuf,
    writer: Option<BufWriter<File>>,
}

impl SweepTable {
    pub fn create(path: &Path, param: SweepParam) -> Result<Self, ExperimentError> {
        let file = File::create(path).map_err(|e| ExperimentError::io(path, e))?;
        let mut table = Self {
            param,
            rows: Vec::new(),
            slopes: [None; 4],
            reference_j_tilde: None,
            path: path.to_path_buf(),
            writer: Some(BufWriter::new(file)),
        };
        table.write_line(SWEEP_HEADER)?;
        Ok(table)
    }

    fn write_line(&mut self, line: &str) -> Result<(), ExperimentError> {
        if let Some(w) = self.writer.as_mut() {
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| ExperimentError::io(&self.path, e))?;
        }
        Ok(())
    }

    pub fn push(&mut self, row: SweepRow) -> Result<(), ExperimentError> {
        let e = &row.errors;
        let line = format!(
            "{:e},{:e},{:e},{:e},{:e},{:e},{},{:.3}",
            row.param, e.rel_l2_u, e.rel_l2_y, e.rel_energy_y, e.rel_l2_p, row.j_tilde, row.k, row.seconds
        );
        self.rows.push(row);
        self.write_line(&line)
    }

    /// Appends the `slope` row and closes the file.
    pub fn finish(&mut self) -> Result<(), ExperimentError> {
        let x: Vec<f64> = self.rows.iter().map(|r| r.param).collect();
        let cols: [fn(&ErrorTable) -> f64; 4] = [|e| e.rel_l2_u, |e| e.rel_l2_y, |e| e.rel_energy_y, |e| e.rel_l2_p];
        for (slot, f) in self.slopes.iter_mut().zip(cols) {
            let y: Vec<f64> = self.rows.iter().map(|r| f(&r.errors)).collect();
            *slot = log_log_slope(&x, &y);
        }
        let fmt = |s: Option<f64>| s.map_or(String::new(), |v| format!("{v:.4}"));
        let line = format!(
            "slope,{},{},{},{},,,",
            fmt(self.slopes[0]),
            fmt(self.slopes[1]),
            fmt(self.slopes[2]),
            fmt(self.slopes[3])
        );
        self.write_line(&line)?;
        self.writer = None;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [0.25, 0.125, 0.0625];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((log_log_slope(&x, &y).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(log_log_slope(&x[..1], &y[..1]), None);
    }

    #[test]
    fn grid_rows_start_at_bottom() {
        let text = format_grid(&[1.0, 0.0, 0.0, 1.0, 1.0, 1.0], 3, 2, true);
        assert_eq!(text, "1,0,0\n1,1,1\n");
    }
}
