//! Truncated SVD via cyclic Jacobi eigendecomposition of the smaller Gram
//! matrix. Returns U_k Σ_k (left singular vectors scaled by singular
//! values); adequate and dependency-free at desk scale.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Relative cutoff on Gram eigenvalues below which a singular value is
/// treated as zero and its output column zeroed. Numerical noise in the
/// eigensolve sits at machine epsilon relative to the top eigenvalue, well
/// under this.
const EIG_RELATIVE_TOL: f64 = 1e-12;

/// Leading `rank` columns of U Σ, singular values non-increasing. Sign
/// convention: each output column's largest-magnitude entry is non-negative.
pub fn truncated_svd(m: &Matrix, rank: usize) -> Result<Matrix> {
    let (n, d) = m.shape();
    if rank == 0 || rank > n.min(d) {
        return Err(Error::InvalidInput(format!(
            "rank {rank} infeasible for a {n}x{d} matrix"
        )));
    }
    // eigendecompose the smaller Gram side
    let use_right = d <= n;
    let gram = if use_right {
        m.transpose().matmul(m)
    } else {
        m.matmul(&m.transpose())
    };
    let (eigvals, eigvecs) = jacobi_eigen(&gram);

    let eig_max = eigvals.first().map(|&e| e.max(0.0)).unwrap_or(0.0);
    let mut out = Matrix::zeros(n, rank);
    for k in 0..rank {
        let eig = eigvals[k].max(0.0);
        if eig <= EIG_RELATIVE_TOL * eig_max || eig == 0.0 {
            continue; // vanished singular value: column stays zero
        }
        let sigma = eig.sqrt();
        // column of U Σ
        let mut col = vec![0.0; n];
        if use_right {
            // u σ = X v
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += m[(i, j)] * eigvecs[(j, k)];
                }
                col[i] = acc;
            }
        } else {
            for (i, c) in col.iter_mut().enumerate() {
                *c = eigvecs[(i, k)] * sigma;
            }
        }
        // fix sign so the largest-magnitude entry is non-negative
        let mut arg = 0;
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > col[arg].abs() {
                arg = i;
            }
        }
        let flip = if col[arg] < 0.0 { -1.0 } else { 1.0 };
        for (i, &v) in col.iter().enumerate() {
            out[(i, k)] = flip * v;
        }
    }
    Ok(out)
}

/// Cyclic Jacobi on a symmetric matrix; returns (eigenvalues descending,
/// eigenvectors as columns in matching order).
fn jacobi_eigen(g: &Matrix) -> (Vec<f64>, Matrix) {
    let n = g.rows();
    let mut a = g.clone();
    let mut v = Matrix::identity(n);
    let tol = 1e-14 * g.frobenius_norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap());
    let eigvals: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (newk, &oldk) in order.iter().enumerate() {
        for i in 0..n {
            vecs[(i, newk)] = v[(i, oldk)];
        }
    }
    (eigvals, vecs)
}
