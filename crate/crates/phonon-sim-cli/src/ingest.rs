//! Readers for emitted snapshot files (round-trip support).

use std::fs;
use std::io;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use phonon_sim::{DensityMatrix, FockBasis};

#[derive(Debug)]
pub struct IngestError(pub String);

impl std::fmt::Display for IngestError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ingest error: {}", self.0)
    }
}
impl std::error::Error for IngestError {}

impl From<io::Error> for IngestError {
    fn from(e: io::Error) -> Self {
        IngestError(e.to_string())
    }
}

/// Reads a snapshot CSV back into a density matrix. The basis truncation is
/// reconstructed from the highest labels present.
pub fn read_snapshot_csv(path: &Path) -> Result<DensityMatrix, IngestError> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line != "row_index,col_index,row_label,col_label,re,im" {
                return Err(IngestError(format!("unexpected header: {line}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(IngestError(format!("line {} has {} fields", lineno + 1, parts.len())));
        }
        let row: usize = parts[0].parse().map_err(|_| bad(lineno, "row_index"))?;
        let col: usize = parts[1].parse().map_err(|_| bad(lineno, "col_index"))?;
        let re: f64 = parts[4].parse().map_err(|_| bad(lineno, "re"))?;
        let im: f64 = parts[5].parse().map_err(|_| bad(lineno, "im"))?;
        rows.push((row, col, re, im));
    }
    if rows.is_empty() {
        return Err(IngestError("snapshot file has no data rows".into()));
    }
    let dim = rows.iter().map(|r| r.0.max(r.1)).max().unwrap() + 1;
    if rows.len() != dim * dim {
        return Err(IngestError(format!(
            "expected {} entries for dimension {dim}, found {}",
            dim * dim,
            rows.len()
        )));
    }
    let mut m = DMatrix::zeros(dim, dim);
    for &(row, col, re, im) in &rows {
        m[(row, col)] = Complex64::new(re, im);
    }
    let basis = infer_basis(&text, dim)?;
    DensityMatrix::from_matrix(basis, m).map_err(|e| IngestError(e.to_string()))
}

fn bad(lineno: usize, field: &str) -> IngestError {
    IngestError(format!("line {}: malformed {field}", lineno + 1))
}

/// Row-major ordering puts state (1, 0) — label "10" — at flat index
/// n2_max + 1, which pins the basis shape unambiguously.
fn infer_basis(text: &str, dim: usize) -> Result<FockBasis, IngestError> {
    let mut ten_index = None;
    for line in text.lines().skip(1) {
        let mut parts = line.split(',');
        let (Some(row), Some(col), Some(label)) = (parts.next(), parts.next(), parts.next())
        else {
            continue;
        };
        if col == "0" && label == "10" {
            ten_index = row.parse::<usize>().ok();
            break;
        }
    }
    let first_excited =
        ten_index.ok_or_else(|| IngestError("state label '10' not found".into()))?;
    let n2_max = first_excited
        .checked_sub(1)
        .ok_or_else(|| IngestError("label '10' cannot sit at index 0".into()))?;
    if !dim.is_multiple_of(n2_max + 1) {
        return Err(IngestError(format!(
            "dimension {dim} is not a multiple of n2_max + 1 = {}",
            n2_max + 1
        )));
    }
    let n1_max = dim / (n2_max + 1) - 1;
    FockBasis::new(n1_max, n2_max).map_err(|e| IngestError(e.to_string()))
}
