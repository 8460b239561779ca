//! Dense symmetric eigensolver used for PCA and spectral embeddings.
//!
//! Cyclic Jacobi rotations: dependency-free, deterministic, and accurate
//! enough for the desk-scale matrices handled here (calibration datasets,
//! covariance matrices, affinity graphs).

use ndarray::{Array1, Array2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not square: {0} x {1}")]
    NotSquare(usize, usize),
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("jacobi sweep limit reached (off-diagonal norm {0:.3e})")]
    NoConvergence(f64),
}

/// Eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted ascending; `vectors` holds the matching
/// eigenvectors as columns. Each eigenvector is sign-fixed so that its
/// entry of largest magnitude is positive.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

const OFF_DIAG_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-9;

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Stops when the off-diagonal Frobenius norm drops below `1e-10`, erroring
/// after 100 sweeps.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<Eigen, LinalgError> {
    let (n, m) = a.dim();
    if n != m {
        return Err(LinalgError::NotSquare(n, m));
    }
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    if asym > SYMMETRY_TOL {
        return Err(LinalgError::NotSymmetric(asym));
    }

    let mut mat = a.clone();
    let mut vecs = Array2::<f64>::eye(n);

    if n > 1 {
        let mut converged = false;
        for _ in 0..MAX_SWEEPS {
            if off_diag_norm(&mat) < OFF_DIAG_TOL {
                converged = true;
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    rotate(&mut mat, &mut vecs, p, q);
                }
            }
        }
        if !converged && off_diag_norm(&mat) >= OFF_DIAG_TOL {
            return Err(LinalgError::NoConvergence(off_diag_norm(&mat)));
        }
    }

    // Sort ascending and fix signs.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| mat[[i, i]].partial_cmp(&mat[[j, j]]).unwrap());
    let mut values = Array1::<f64>::zeros(n);
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        values[col] = mat[[src, src]];
        let mut best = 0;
        for r in 0..n {
            if vecs[[r, src]].abs() > vecs[[best, src]].abs() {
                best = r;
            }
        }
        let sign = if vecs[[best, src]] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[[r, col]] = sign * vecs[[r, src]];
        }
    }
    Ok(Eigen { values, vectors })
}

fn off_diag_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[[i, j]] * a[[i, j]];
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating `a[p, q]`.
fn rotate(a: &mut Array2<f64>, v: &mut Array2<f64>, p: usize, q: usize) {
    let apq = a[[p, q]];
    if apq.abs() < f64::MIN_POSITIVE {
        return;
    }
    let app = a[[p, p]];
    let aqq = a[[q, q]];
    let theta = (aqq - app) / (2.0 * apq);
    // Stable tangent of the rotation angle.
    let t = if theta >= 0.0 {
        1.0 / (theta + (1.0 + theta * theta).sqrt())
    } else {
        1.0 / (theta - (1.0 + theta * theta).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let n = a.nrows();

    for k in 0..n {
        let akp = a[[k, p]];
        let akq = a[[k, q]];
        a[[k, p]] = c * akp - s * akq;
        a[[k, q]] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[[p, k]];
        let aqk = a[[q, k]];
        a[[p, k]] = c * apk - s * aqk;
        a[[q, k]] = s * apk + c * aqk;
    }
    for k in 0..n {
        let vkp = v[[k, p]];
        let vkq = v[[k, q]];
        v[[k, p]] = c * vkp - s * vkq;
        v[[k, q]] = s * vkp + c * vkq;
    }
}
