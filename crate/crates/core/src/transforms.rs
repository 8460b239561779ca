//! The ordered relation-transform vocabulary: distance-to-probability
//! calibrations, symmetrizations, normalization, low-dimensional kernels,
//! and scalar rescaling.
//!
//! Calibrations and symmetrize/normalize/rescale act on global relation
//! matrices; the kernels act on differentiable batch relations.

use crate::relations::{
    off_diag_mask, BatchForm, BatchRel, DenseRelations, RelationMatrix, SparseRelations,
};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("'{0}' requires a sparse neighbor relation")]
    NeedsSparse(&'static str),
    #[error("perplexity {perplexity} exceeds the neighbor count {k} of row {row}")]
    PerplexityTooLarge {
        perplexity: f64,
        k: usize,
        row: usize,
    },
    #[error("row {row} has {k} neighbors, need at least {need}")]
    RowTooSmall { row: usize, k: usize, need: usize },
    #[error("bisection did not converge for row {row} (residual {residual:.3e})")]
    NonConvergence { row: usize, residual: f64 },
    #[error("cannot normalize an all-zero relation matrix")]
    AllZero,
    #[error("relation matrix has negative entries")]
    NegativeEntries,
    #[error("curve fit failed: non-finite residual")]
    FitFailure,
    #[error("transform '{0}' does not apply to batch relations")]
    NotBatchApplicable(&'static str),
    #[error("transform '{0}' does not apply to global relations")]
    NotGlobalApplicable(&'static str),
}

/// Result of a bandwidth calibration: the recalibrated relation plus the
/// per-row solver state.
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub probabilities: RelationMatrix,
    /// Per-row bandwidths sigma_i.
    pub sigmas: Vec<f64>,
    /// Per-row nearest-neighbor shifts rho_i (connectivity calibration only).
    pub rhos: Option<Vec<f64>>,
}

const BISECT_LO: f64 = 1e-12;
const BISECT_HI: f64 = 1e12;
const BISECT_MAX_ITERS: usize = 100;
const CALIBRATION_TOL: f64 = 1e-4;

/// Per-row Gaussian calibration: probabilities `p(j|i) ~ exp(-d_ij^2 /
/// (2 sigma_i^2))` with sigma_i solved by bisection so the row's
/// `2^entropy` matches the target perplexity within 1e-4.
pub fn perplexity_calibrate(
    dists: &RelationMatrix,
    perplexity: f64,
) -> Result<CalibrationResult, TransformError> {
    let sparse = match dists {
        RelationMatrix::Sparse(s) => s,
        RelationMatrix::Dense(_) => return Err(TransformError::NeedsSparse("perplexity")),
    };
    let mut rows = Vec::with_capacity(sparse.n);
    let mut sigmas = Vec::with_capacity(sparse.n);
    for (row_idx, row) in sparse.rows.iter().enumerate() {
        let k = row.len();
        if k < 2 {
            return Err(TransformError::RowTooSmall {
                row: row_idx,
                k,
                need: 2,
            });
        }
        if perplexity > k as f64 {
            return Err(TransformError::PerplexityTooLarge {
                perplexity,
                k,
                row: row_idx,
            });
        }
        let d: Vec<f64> = row.iter().map(|(_, v)| *v).collect();
        let d_min_sq = d.iter().map(|x| x * x).fold(f64::INFINITY, f64::min);
        let probs_for = |sigma: f64| -> Vec<f64> {
            // Shift by the smallest squared distance for stable exponents.
            let mut p: Vec<f64> = d
                .iter()
                .map(|&x| (-(x * x - d_min_sq) / (2.0 * sigma * sigma)).exp())
                .collect();
            let total: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= total);
            p
        };
        let perp_of = |p: &[f64]| -> f64 {
            let entropy: f64 = p
                .iter()
                .filter(|v| **v > 0.0)
                .map(|v| -v * v.log2())
                .sum();
            entropy.exp2()
        };

        let mut lo = BISECT_LO;
        let mut hi = BISECT_HI;
        let mut sigma = 1.0;
        let mut residual = f64::INFINITY;
        for _ in 0..BISECT_MAX_ITERS {
            let p = probs_for(sigma);
            let f = perp_of(&p) - perplexity;
            residual = f.abs();
            if residual <= CALIBRATION_TOL {
                break;
            }
            // 2^entropy increases with sigma.
            if f < 0.0 {
                lo = sigma;
            } else {
                hi = sigma;
            }
            sigma = 0.5 * (lo + hi);
        }
        if residual > CALIBRATION_TOL {
            return Err(TransformError::NonConvergence {
                row: row_idx,
                residual,
            });
        }
        let p = probs_for(sigma);
        let entries: Vec<(usize, f64)> = row
            .iter()
            .zip(p.iter())
            .map(|(&(j, _), &prob)| (j, prob))
            .collect();
        rows.push(entries);
        sigmas.push(sigma);
    }
    Ok(CalibrationResult {
        probabilities: RelationMatrix::Sparse(SparseRelations {
            n: sparse.n,
            rows,
            symmetric: false,
            normalized: false,
        }),
        sigmas,
        rhos: None,
    })
}

/// Connectivity-based calibration: `v(j|i) = exp(-max(0, d_ij - rho_i) /
/// sigma_i)` with rho_i the distance to the nearest neighbor and sigma_i
/// solved so the row sum matches `log2(n_neighbors)` within 1e-4.
///
/// Rows whose sum cannot reach the target (e.g. all distances equal) clamp
/// to the nearest attainable value instead of erroring.
pub fn connectivity_calibrate(
    dists: &RelationMatrix,
    n_neighbors: usize,
) -> Result<CalibrationResult, TransformError> {
    let sparse = match dists {
        RelationMatrix::Sparse(s) => s,
        RelationMatrix::Dense(_) => return Err(TransformError::NeedsSparse("connect")),
    };
    let target = (n_neighbors as f64).log2();
    let mut rows = Vec::with_capacity(sparse.n);
    let mut sigmas = Vec::with_capacity(sparse.n);
    let mut rhos = Vec::with_capacity(sparse.n);
    for (row_idx, row) in sparse.rows.iter().enumerate() {
        let k = row.len();
        if k < n_neighbors {
            return Err(TransformError::RowTooSmall {
                row: row_idx,
                k,
                need: n_neighbors,
            });
        }
        let d: Vec<f64> = row.iter().map(|(_, v)| *v).collect();
        let rho = d.iter().copied().fold(f64::INFINITY, f64::min);
        let values_for = |sigma: f64| -> Vec<f64> {
            d.iter().map(|&x| (-((x - rho).max(0.0)) / sigma).exp()).collect()
        };
        let sum_of = |v: &[f64]| -> f64 { v.iter().sum() };

        let mut lo = BISECT_LO;
        let mut hi = BISECT_HI;
        let mut sigma = 1.0;
        let mut residual = f64::INFINITY;
        for _ in 0..BISECT_MAX_ITERS {
            let f = sum_of(&values_for(sigma)) - target;
            residual = f.abs();
            if residual <= CALIBRATION_TOL {
                break;
            }
            if f < 0.0 {
                lo = sigma;
            } else {
                hi = sigma;
            }
            sigma = 0.5 * (lo + hi);
        }
        if residual > CALIBRATION_TOL {
            // Unreachable targets clamp to the nearest attainable sum.
            let at_lo = sum_of(&values_for(BISECT_LO)) - target;
            let at_hi = sum_of(&values_for(BISECT_HI)) - target;
            let reachable = at_lo.signum() != at_hi.signum();
            if reachable {
                return Err(TransformError::NonConvergence {
                    row: row_idx,
                    residual,
                });
            }
            sigma = if at_lo.abs() <= at_hi.abs() { BISECT_LO } else { BISECT_HI };
        }
        let v = values_for(sigma);
        let entries: Vec<(usize, f64)> = row
            .iter()
            .zip(v.iter())
            .map(|(&(j, _), &val)| (j, val))
            .collect();
        rows.push(entries);
        sigmas.push(sigma);
        rhos.push(rho);
    }
    Ok(CalibrationResult {
        probabilities: RelationMatrix::Sparse(SparseRelations {
            n: sparse.n,
            rows,
            symmetric: false,
            normalized: false,
        }),
        sigmas,
        rhos: Some(rhos),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymmetrizeMode {
    /// `(R + R^T) / 2`
    Mean,
    /// Fuzzy union `R + R^T - R o R^T`.
    SubProd,
}

/// Symmetrize a square relation. The mean mode preserves the grand total, so
/// a normalized input stays normalized.
pub fn symmetrize(rel: &RelationMatrix, mode: SymmetrizeMode) -> RelationMatrix {
    let combine = |a: f64, b: f64| match mode {
        SymmetrizeMode::Mean => 0.5 * (a + b),
        SymmetrizeMode::SubProd => a + b - a * b,
    };
    match rel {
        RelationMatrix::Dense(d) => {
            let n = d.values.nrows();
            let mut out = d.values.clone();
            for i in 0..n {
                for j in 0..n {
                    out[[i, j]] = combine(d.values[[i, j]], d.values[[j, i]]);
                }
            }
            RelationMatrix::Dense(DenseRelations {
                values: out,
                symmetric: true,
                normalized: d.normalized && mode == SymmetrizeMode::Mean,
            })
        }
        RelationMatrix::Sparse(s) => {
            let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); s.n];
            for (i, row) in s.rows.iter().enumerate() {
                for &(j, v) in row {
                    let transposed = s.rows[j]
                        .binary_search_by(|(idx, _)| idx.cmp(&i))
                        .map(|pos| s.rows[j][pos].1)
                        .unwrap_or(0.0);
                    let combined = combine(v, transposed);
                    maps[i].insert(j, combined);
                    maps[j].insert(i, combined);
                }
            }
            let rows: Vec<Vec<(usize, f64)>> =
                maps.into_iter().map(|m| m.into_iter().collect()).collect();
            RelationMatrix::Sparse(SparseRelations {
                n: s.n,
                rows,
                symmetric: true,
                normalized: s.normalized && mode == SymmetrizeMode::Mean,
            })
        }
    }
}

/// Divide all entries by the grand total of off-diagonal entries.
pub fn normalize(rel: &RelationMatrix) -> Result<RelationMatrix, TransformError> {
    let check = |v: f64| -> Result<(), TransformError> {
        if v < 0.0 {
            Err(TransformError::NegativeEntries)
        } else {
            Ok(())
        }
    };
    match rel {
        RelationMatrix::Dense(d) => {
            for v in d.values.iter() {
                check(*v)?;
            }
            let total = rel.off_diag_total();
            if total <= 0.0 {
                return Err(TransformError::AllZero);
            }
            RelationMatrixOk::dense(d.values.mapv(|v| v / total), d.symmetric)
        }
        RelationMatrix::Sparse(s) => {
            for row in &s.rows {
                for &(_, v) in row {
                    check(v)?;
                }
            }
            let total = rel.off_diag_total();
            if total <= 0.0 {
                return Err(TransformError::AllZero);
            }
            let rows = s
                .rows
                .iter()
                .map(|row| row.iter().map(|&(j, v)| (j, v / total)).collect())
                .collect();
            Ok(RelationMatrix::Sparse(SparseRelations {
                n: s.n,
                rows,
                symmetric: s.symmetric,
                normalized: true,
            }))
        }
    }
}

// Small constructor shim keeping `normalize` tidy.
struct RelationMatrixOk;
impl RelationMatrixOk {
    fn dense(values: ndarray::Array2<f64>, symmetric: bool) -> Result<RelationMatrix, TransformError> {
        Ok(RelationMatrix::Dense(DenseRelations {
            values,
            symmetric,
            normalized: true,
        }))
    }
}

/// Multiply all entries by a constant factor.
pub fn rescale(rel: &RelationMatrix, factor: f64) -> RelationMatrix {
    match rel {
        RelationMatrix::Dense(d) => RelationMatrix::Dense(DenseRelations {
            values: d.values.mapv(|v| v * factor),
            symmetric: d.symmetric,
            normalized: d.normalized && factor == 1.0,
        }),
        RelationMatrix::Sparse(s) => RelationMatrix::Sparse(SparseRelations {
            n: s.n,
            rows: s
                .rows
                .iter()
                .map(|row| row.iter().map(|&(j, v)| (j, v * factor)).collect())
                .collect(),
            symmetric: s.symmetric,
            normalized: s.normalized && factor == 1.0,
        }),
    }
}

/// Student-t kernel on batch distances: `(1 + d^2/alpha)^(-(alpha+1)/2)`,
/// with the diagonal forced to zero on square batch relations.
pub fn student_t_kernel<'t>(rel: BatchRel<'t>, alpha: f64) -> BatchRel<'t> {
    assert!(alpha > 0.0, "alpha must be positive");
    let d = rel.values;
    let kernel = d
        .mul(d)
        .mul_scalar(1.0 / alpha)
        .add_scalar(1.0)
        .pow(-(alpha + 1.0) / 2.0);
    let values = match rel.form {
        BatchForm::Square => {
            let b = kernel.shape()[0];
            kernel.mul(d.tape().constant(off_diag_mask(b)))
        }
        BatchForm::Edges => kernel,
    };
    BatchRel {
        values,
        form: rel.form,
    }
}

/// Modified Cauchy kernel on batch distances: `(1 + a d^(2b))^(-1)` with the
/// diagonal forced to zero on square batch relations. `a` and `b` come from
/// [`fit_cauchy_params`], computed once per routine.
pub fn cauchy_kernel<'t>(rel: BatchRel<'t>, a: f64, b: f64) -> BatchRel<'t> {
    let d = rel.values;
    // d^(2b) as (d^2 + eps)^b keeps the gradient finite at zero distance.
    let kernel = d
        .mul(d)
        .add_scalar(1e-12)
        .pow(b)
        .mul_scalar(a)
        .add_scalar(1.0)
        .pow(-1.0);
    let values = match rel.form {
        BatchForm::Square => {
            let n = kernel.shape()[0];
            kernel.mul(d.tape().constant(off_diag_mask(n)))
        }
        BatchForm::Edges => kernel,
    };
    BatchRel {
        values,
        form: rel.form,
    }
}

const CAUCHY_GRID_POINTS: usize = 300;
const CAUCHY_MAX_ITERS: usize = 200;

/// Least-squares fit of `(1 + a d^(2b))^(-1)` to the target curve
/// `psi(d) = 1` for `d <= min_dist`, `exp(-(d - min_dist)/spread)` beyond,
/// over a 300-point grid on `[0, 3 spread]`. Gauss-Newton from `(1, 1)` with
/// step halving.
pub fn fit_cauchy_params(spread: f64, min_dist: f64) -> Result<(f64, f64), TransformError> {
    assert!(spread > 0.0, "spread must be positive");
    assert!(min_dist >= 0.0, "min_dist must be non-negative");
    let grid: Vec<f64> = (0..CAUCHY_GRID_POINTS)
        .map(|i| 3.0 * spread * i as f64 / (CAUCHY_GRID_POINTS - 1) as f64)
        .collect();
    let psi: Vec<f64> = grid
        .iter()
        .map(|&d| {
            if d <= min_dist {
                1.0
            } else {
                (-(d - min_dist) / spread).exp()
            }
        })
        .collect();
    let residuals = |a: f64, b: f64| -> Vec<f64> {
        grid.iter()
            .zip(psi.iter())
            .map(|(&d, &t)| 1.0 / (1.0 + a * d.powf(2.0 * b)) - t)
            .collect()
    };
    let norm_sq = |r: &[f64]| -> f64 { r.iter().map(|x| x * x).sum() };

    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut r = residuals(a, b);
    let mut cost = norm_sq(&r);
    if !cost.is_finite() {
        return Err(TransformError::FitFailure);
    }
    for _ in 0..CAUCHY_MAX_ITERS {
        // Jacobian of the residuals w.r.t. (a, b).
        let mut jtj = [[0.0f64; 2]; 2];
        let mut jtr = [0.0f64; 2];
        for (i, &d) in grid.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let pw = d.powf(2.0 * b);
            let denom = 1.0 + a * pw;
            let common = -pw / (denom * denom);
            let ja = common;
            let jb = common * a * 2.0 * d.ln();
            jtj[0][0] += ja * ja;
            jtj[0][1] += ja * jb;
            jtj[1][1] += jb * jb;
            jtr[0] += ja * r[i];
            jtr[1] += jb * r[i];
        }
        jtj[1][0] = jtj[0][1];
        let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
        if !det.is_finite() || det.abs() < 1e-30 {
            break;
        }
        let mut da = (-jtr[0] * jtj[1][1] + jtr[1] * jtj[0][1]) / det;
        let mut db = (-jtr[1] * jtj[0][0] + jtr[0] * jtj[1][0]) / det;
        if !(da.is_finite() && db.is_finite()) {
            return Err(TransformError::FitFailure);
        }
        // Step halving on residual increase.
        let mut improved = false;
        for _ in 0..25 {
            let na = (a + da).max(1e-8);
            let nb = (b + db).max(1e-8);
            let nr = residuals(na, nb);
            let nc = norm_sq(&nr);
            if nc.is_finite() && nc < cost {
                a = na;
                b = nb;
                r = nr;
                cost = nc;
                improved = true;
                break;
            }
            da *= 0.5;
            db *= 0.5;
        }
        if !improved {
            break;
        }
        if da.abs() < 1e-12 && db.abs() < 1e-12 {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite() && cost.is_finite()) {
        return Err(TransformError::FitFailure);
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{finite_difference, rel_err, Tape};
    use crate::relations::{batch_pdist, knn_brute, Metric};
    use ndarray::{array, Array2, ArrayD};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sparse_row(dists: Vec<f64>) -> RelationMatrix {
        // Single calibrated row embedded in a (k+1)-item relation.
        let k = dists.len();
        let mut rows = vec![Vec::new(); k + 1];
        rows[0] = dists.iter().enumerate().map(|(j, &d)| (j + 1, d)).collect();
        for (j, &d) in dists.iter().enumerate() {
            // Mirror rows (spread distances) so every row is calibratable.
            rows[j + 1] = (0..=k)
                .filter(|&m| m != j + 1)
                .map(|m| (m, if m == 0 { d } else { 0.5 + 0.4 * m as f64 }))
                .collect();
        }
        RelationMatrix::Sparse(SparseRelations {
            n: k + 1,
            rows,
            symmetric: false,
            normalized: false,
        })
    }

    fn row_probs(rel: &RelationMatrix, i: usize) -> Vec<f64> {
        match rel {
            RelationMatrix::Sparse(s) => s.rows[i].iter().map(|(_, v)| *v).collect(),
            RelationMatrix::Dense(_) => panic!("expected sparse"),
        }
    }

    #[test]
    fn perplexity_equal_distances_uniform() {
        let rel = sparse_row(vec![2.0, 2.0, 2.0, 2.0]);
        let cal = perplexity_calibrate(&rel, 4.0).unwrap();
        for p in row_probs(&cal.probabilities, 0) {
            assert!((p - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn perplexity_max_entropy_boundary() {
        let rel = sparse_row(vec![1.0, 2.0]);
        let cal = perplexity_calibrate(&rel, 2.0).unwrap();
        let p = row_probs(&cal.probabilities, 0);
        assert!((p[0] - 0.5).abs() < 1e-3, "near-uniform: {p:?}");
        assert!((p[1] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn perplexity_self_consistency() {
        let rel = sparse_row(vec![1.0, 2.0, 3.0, 4.0]);
        let cal = perplexity_calibrate(&rel, 2.0).unwrap();
        let p = row_probs(&cal.probabilities, 0);
        let entropy: f64 = p.iter().map(|v| -v * v.log2()).sum();
        assert!((entropy.exp2() - 2.0).abs() < 1e-4);
        assert!(cal.sigmas[0] > 0.0);
    }

    #[test]
    fn perplexity_self_consistency_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let data = Array2::from_shape_fn((40, 3), |_| rng.gen_range(-1.0..1.0));
        let knn = knn_brute(&data, 12, Metric::Euclidean).unwrap();
        let cal = perplexity_calibrate(&knn, 8.0).unwrap();
        for i in 0..40 {
            let p = row_probs(&cal.probabilities, i);
            let entropy: f64 = p.iter().filter(|v| **v > 0.0).map(|v| -v * v.log2()).sum();
            assert!((entropy.exp2() - 8.0).abs() < 1e-4, "row {i}");
        }
    }

    #[test]
    fn perplexity_rejects_exceeding_k() {
        let rel = sparse_row(vec![1.0, 2.0]);
        assert!(matches!(
            perplexity_calibrate(&rel, 5.0),
            Err(TransformError::PerplexityTooLarge { .. })
        ));
    }

    #[test]
    fn connectivity_nearest_neighbor_gets_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = Array2::from_shape_fn((30, 3), |_| rng.gen_range(-1.0..1.0));
        let knn = knn_brute(&data, 8, Metric::Euclidean).unwrap();
        let cal = connectivity_calibrate(&knn, 8).unwrap();
        for i in 0..30 {
            let p = row_probs(&cal.probabilities, i);
            let max = p.iter().fold(0.0f64, |a, &b| a.max(b));
            assert!((max - 1.0).abs() < 1e-12, "rho shift puts nearest at 1");
        }
    }

    #[test]
    fn connectivity_self_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = Array2::from_shape_fn((30, 3), |_| rng.gen_range(-1.0..1.0));
        let knn = knn_brute(&data, 8, Metric::Euclidean).unwrap();
        let cal = connectivity_calibrate(&knn, 8).unwrap();
        for i in 0..30 {
            let sum: f64 = row_probs(&cal.probabilities, i).iter().sum();
            assert!((sum - 3.0).abs() < 1e-4, "row {i}: {sum}");
        }
        assert!(cal.rhos.is_some());
    }

    #[test]
    fn connectivity_degenerate_all_equal_clamps() {
        let rel = sparse_row(vec![2.0, 2.0, 2.0, 2.0]);
        let cal = connectivity_calibrate(&rel, 4).unwrap();
        let p = row_probs(&cal.probabilities, 0);
        // All values 1 regardless of sigma; the row sum clamps at k.
        for v in &p {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetrize_mean_and_sub_prod_arithmetic() {
        let rel = RelationMatrix::Dense(DenseRelations {
            values: array![[0.0, 1.0], [0.0, 0.0]],
            symmetric: false,
            normalized: false,
        });
        let mean = symmetrize(&rel, SymmetrizeMode::Mean).to_dense();
        assert_eq!(mean, array![[0.0, 0.5], [0.5, 0.0]]);

        let rel2 = RelationMatrix::Dense(DenseRelations {
            values: array![[0.0, 0.5], [0.4, 0.0]],
            symmetric: false,
            normalized: false,
        });
        let sp = symmetrize(&rel2, SymmetrizeMode::SubProd).to_dense();
        assert!((sp[[0, 1]] - 0.7).abs() < 1e-12);
        assert!((sp[[1, 0]] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn sub_prod_idempotent_on_binary_symmetric() {
        let rel = crate::relations::pairwise_equality(&[0, 0, 1, 1]);
        let sp = symmetrize(&rel, SymmetrizeMode::SubProd).to_dense();
        assert_eq!(sp, rel.to_dense());
    }

    #[test]
    fn symmetrize_output_is_symmetric_sparse() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data = Array2::from_shape_fn((20, 3), |_| rng.gen_range(-1.0..1.0));
        let knn = knn_brute(&data, 4, Metric::Euclidean).unwrap();
        for mode in [SymmetrizeMode::Mean, SymmetrizeMode::SubProd] {
            let sym = symmetrize(&knn, mode).to_dense();
            for i in 0..20 {
                for j in 0..20 {
                    assert!((sym[[i, j]] - sym[[j, i]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn normalize_arithmetic_and_idempotence() {
        let rel = RelationMatrix::Dense(DenseRelations {
            values: array![[0.0, 2.0], [2.0, 0.0]],
            symmetric: true,
            normalized: false,
        });
        let n1 = normalize(&rel).unwrap();
        assert_eq!(n1.to_dense(), array![[0.0, 0.5], [0.5, 0.0]]);
        assert!(n1.is_normalized());
        let n2 = normalize(&n1).unwrap();
        assert_eq!(n2.to_dense(), n1.to_dense());

        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut m = Array2::from_shape_fn((5, 5), |_| rng.gen_range(0.0..1.0));
        for i in 0..5 {
            m[[i, i]] = 0.0;
        }
        let rel = RelationMatrix::Dense(DenseRelations {
            values: m,
            symmetric: false,
            normalized: false,
        });
        let n = normalize(&rel).unwrap();
        assert!((n.off_diag_total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_all_zero() {
        let rel = RelationMatrix::Dense(DenseRelations {
            values: Array2::zeros((3, 3)),
            symmetric: true,
            normalized: false,
        });
        assert!(matches!(normalize(&rel), Err(TransformError::AllZero)));
    }

    #[test]
    fn rescale_examples() {
        let rel = RelationMatrix::Dense(DenseRelations {
            values: array![[0.0, 0.5], [0.5, 0.0]],
            symmetric: true,
            normalized: true,
        });
        let scaled = rescale(&rel, 12.0);
        assert!((scaled.total() - 12.0).abs() < 1e-12);
        assert!(!scaled.is_normalized());
        assert_eq!(rescale(&rel, 1.0).to_dense(), rel.to_dense());
        assert_eq!(rescale(&rel, 0.0).total(), 0.0);
    }

    #[test]
    fn student_t_values_and_gradient() {
        // d = 1, alpha = 1 -> 0.5; d = 0 (off-diagonal edge form) -> 1.
        let tape = Tape::new();
        let d = tape.leaf(ArrayD::from_shape_vec(ndarray::IxDyn(&[2]), vec![1.0, 0.0]).unwrap());
        let rel = BatchRel {
            values: d,
            form: BatchForm::Edges,
        };
        let q = student_t_kernel(rel, 1.0);
        let v = q.values.value();
        assert!((v[[0]] - 0.5).abs() < 1e-12);
        assert!((v[[1]] - 1.0).abs() < 1e-12);
        // Gradient w.r.t. d at d=1: -2d/(1+d^2)^2 = -0.5.
        let selector =
            tape.constant(ArrayD::from_shape_vec(ndarray::IxDyn(&[2]), vec![1.0, 0.0]).unwrap());
        q.values.mul(selector).sum().backward();
        let g = d.grad();
        assert!((g[[0]] + 0.5).abs() < 1e-9, "{}", g[[0]]);
    }

    #[test]
    fn kernels_monotone_bounded_and_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = Array2::from_shape_fn((5, 2), |_| rng.gen_range(-2.0..2.0)).into_dyn();
        let (a, b) = fit_cauchy_params(1.0, 0.1).unwrap();
        #[derive(Clone, Copy)]
        enum K {
            T(f64),
            C(f64, f64),
        }
        fn apply<'t>(kernel: K, rel: BatchRel<'t>) -> BatchRel<'t> {
            match kernel {
                K::T(alpha) => student_t_kernel(rel, alpha),
                K::C(a, b) => cauchy_kernel(rel, a, b),
            }
        }
        for kernel in [K::T(1.0), K::T(2.5), K::C(a, b)] {
            // Monotone decreasing in d, bounded in (0, 1].
            let tape = Tape::new();
            let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
            let d = tape.leaf(ArrayD::from_shape_vec(ndarray::IxDyn(&[50]), grid).unwrap());
            let q = apply(kernel, BatchRel {
                values: d,
                form: BatchForm::Edges,
            });
            let v = q.values.value();
            for i in 0..50 {
                assert!(v[[i]] > 0.0 && v[[i]] <= 1.0 + 1e-12);
                if i > 0 {
                    assert!(v[[i]] <= v[[i - 1]] + 1e-12);
                }
            }
            // Gradient check through batch distances.
            let f = |inputs: &[ArrayD<f64>]| {
                let tape = Tape::new();
                let out = tape.leaf(inputs[0].clone());
                let rel = batch_pdist(out, Metric::Euclidean).unwrap();
                apply(kernel, rel).values.mean().scalar_value()
            };
            let fd = finite_difference(f, &[data.clone()], 1e-6);
            let tape = Tape::new();
            let out = tape.leaf(data.clone());
            let rel = batch_pdist(out, Metric::Euclidean).unwrap();
            apply(kernel, rel).values.mean().backward();
            for (x, y) in out.grad().iter().zip(fd[0].iter()) {
                assert!(rel_err(*x, *y) < 1e-5, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn cauchy_fit_matches_reference_values() {
        // Frozen from an independent coarse grid search + polish over the
        // same 300-point target curve (spread 1.0, min_dist 0.1).
        let (a, b) = fit_cauchy_params(1.0, 0.1).unwrap();
        assert!((a - 1.58).abs() < 0.03, "a = {a}");
        assert!((b - 0.90).abs() < 0.02, "b = {b}");

        // Independent oracle: coarse grid search over (a, b) must not find a
        // substantially better fit.
        let grid: Vec<f64> = (0..CAUCHY_GRID_POINTS)
            .map(|i| 3.0 * i as f64 / (CAUCHY_GRID_POINTS - 1) as f64)
            .collect();
        let psi: Vec<f64> = grid
            .iter()
            .map(|&d| if d <= 0.1 { 1.0 } else { (-(d - 0.1)).exp() })
            .collect();
        let cost = |a: f64, b: f64| -> f64 {
            grid.iter()
                .zip(psi.iter())
                .map(|(&d, &t)| {
                    let r = 1.0 / (1.0 + a * d.powf(2.0 * b)) - t;
                    r * r
                })
                .sum()
        };
        let fit_cost = cost(a, b);
        let mut best = f64::INFINITY;
        for ia in 0..60 {
            for ib in 0..60 {
                let ga = 0.5 + ia as f64 * 0.05;
                let gb = 0.5 + ib as f64 * 0.02;
                best = best.min(cost(ga, gb));
            }
        }
        assert!(fit_cost <= best + 1e-6, "fit {fit_cost} vs grid {best}");
    }

    #[test]
    fn cauchy_with_unit_params_matches_student_t() {
        let tape = Tape::new();
        let d = tape.constant(
            ArrayD::from_shape_vec(ndarray::IxDyn(&[4]), vec![0.0, 0.5, 1.0, 2.0]).unwrap(),
        );
        let rel = BatchRel {
            values: d,
            form: BatchForm::Edges,
        };
        let t = student_t_kernel(rel, 1.0).values.value();
        let c = cauchy_kernel(rel, 1.0, 1.0).values.value();
        for i in 0..4 {
            assert!((t[[i]] - c[[i]]).abs() < 1e-9);
        }
    }

    #[test]
    fn transform_chain_application_order() {
        // Chained (calibrate -> symmetrize -> normalize) equals manual
        // application in listing order.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let data = Array2::from_shape_fn((20, 3), |_| rng.gen_range(-1.0..1.0));
        let knn = knn_brute(&data, 6, Metric::Euclidean).unwrap();
        let step1 = perplexity_calibrate(&knn, 4.0).unwrap().probabilities;
        let step2 = symmetrize(&step1, SymmetrizeMode::Mean);
        let chained = normalize(&step2).unwrap().to_dense();

        let manual = {
            let c = perplexity_calibrate(&knn, 4.0).unwrap().probabilities;
            let s = symmetrize(&c, SymmetrizeMode::Mean);
            normalize(&s).unwrap().to_dense()
        };
        assert_eq!(chained, manual);
        assert!((chained.sum() - 1.0).abs() < 1e-9);
    }
}
