//! Binary matrix files: row-major little-endian f64 at `<stem>.bin` with a
//! JSON sidecar `<stem>.json` holding `{rows, cols, dtype: "f64"}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    rows: usize,
    cols: usize,
    dtype: String,
}

pub fn bin_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

pub fn sidecar_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

pub fn write_matrix(stem: &Path, m: &Matrix) -> Result<()> {
    if let Some(parent) = stem.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut bytes = Vec::with_capacity(m.as_slice().len() * 8);
    for v in m.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(bin_path(stem), bytes)?;
    let sidecar = Sidecar {
        rows: m.rows(),
        cols: m.cols(),
        dtype: "f64".to_string(),
    };
    fs::write(sidecar_path(stem), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_matrix(stem: &Path) -> Result<Matrix> {
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(stem))?)?;
    if sidecar.dtype != "f64" {
        return Err(Error::Integrity(format!(
            "unsupported dtype {:?}",
            sidecar.dtype
        )));
    }
    let bytes = fs::read(bin_path(stem))?;
    let expected = sidecar.rows * sidecar.cols * 8;
    if bytes.len() != expected {
        return Err(Error::Integrity(format!(
            "{} is {} bytes, sidecar expects {expected}",
            bin_path(stem).display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Matrix::from_vec(sidecar.rows, sidecar.cols, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_file_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("m");
        let m = Matrix::from_vec(2, 3, vec![0.1, -0.0, 1.0e-300, f64::MAX, -2.5, 3.0]);
        write_matrix(&stem, &m).unwrap();
        let back = read_matrix(&stem).unwrap();
        for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_bin_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("m");
        write_matrix(&stem, &Matrix::scalar(1.0)).unwrap();
        fs::write(bin_path(&stem), [0u8; 4]).unwrap();
        assert!(matches!(read_matrix(&stem), Err(Error::Integrity(_))));
    }
}
