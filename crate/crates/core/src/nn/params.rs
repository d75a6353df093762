//! Parameter blob serialization: ordered (name, shape, f64 array) entries,
//! stored as one row-major little-endian binary blob next to a JSON manifest
//! listing names and shapes in order. Round-trips are bit-exact.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

pub fn param_entries(params: &[(String, &Matrix)]) -> Vec<ParamEntry> {
    params
        .iter()
        .map(|(name, m)| ParamEntry {
            name: name.clone(),
            rows: m.rows(),
            cols: m.cols(),
        })
        .collect()
}

pub fn params_to_bytes(params: &[(String, &Matrix)]) -> Vec<u8> {
    let total: usize = params.iter().map(|(_, m)| m.as_slice().len()).sum();
    let mut out = Vec::with_capacity(total * 8);
    for (_, m) in params {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn params_from_bytes(bytes: &[u8], entries: &[ParamEntry]) -> Result<Vec<(String, Matrix)>> {
    let expected: usize = entries.iter().map(|e| e.rows * e.cols * 8).sum();
    if bytes.len() != expected {
        return Err(Error::Integrity(format!(
            "parameter blob is {} bytes, manifest expects {expected}",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(entries.len());
    let mut offset = 0;
    for e in entries {
        let n = e.rows * e.cols;
        let mut data = Vec::with_capacity(n);
        for k in 0..n {
            let start = offset + k * 8;
            let raw: [u8; 8] = bytes[start..start + 8].try_into().unwrap();
            data.push(f64::from_le_bytes(raw));
        }
        offset += n * 8;
        out.push((e.name.clone(), Matrix::from_vec(e.rows, e.cols, data)));
    }
    Ok(out)
}

/// SHA-256 over the serialized blob; the frozen-expert contract compares
/// these digests before and after fine-tuning.
pub fn params_digest(params: &[(String, &Matrix)]) -> String {
    let bytes = params_to_bytes(params);
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_roundtrip_is_bit_exact() {
        let a = Matrix::from_vec(2, 3, vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5e300, -1.25, 0.1]);
        let b = Matrix::scalar(42.0);
        let params = vec![("a".to_string(), &a), ("b".to_string(), &b)];
        let entries = param_entries(&params);
        let bytes = params_to_bytes(&params);
        let back = params_from_bytes(&bytes, &entries).unwrap();
        assert_eq!(back[0].1.as_slice(), a.as_slice());
        assert_eq!(back[1].1.as_slice(), b.as_slice());
        assert_eq!(
            back[0].1.as_slice()[1].to_bits(),
            (-0.0f64).to_bits(),
            "negative zero must survive"
        );
    }

    #[test]
    fn truncated_blob_is_an_integrity_error() {
        let a = Matrix::scalar(1.0);
        let params = vec![("a".to_string(), &a)];
        let entries = param_entries(&params);
        let mut bytes = params_to_bytes(&params);
        bytes.pop();
        assert!(matches!(
            params_from_bytes(&bytes, &entries),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn digest_changes_with_any_bit() {
        let a = Matrix::scalar(1.0);
        let d1 = params_digest(&[("a".to_string(), &a)]);
        let b = Matrix::scalar(1.0 + f64::EPSILON);
        let d2 = params_digest(&[("a".to_string(), &b)]);
        assert_ne!(d1, d2);
    }
}
