//! Relation matrices between data items.
//!
//! Global relations are computed once over the whole dataset before
//! training; batch relations are computed between model outputs during
//! training and stay differentiable. Global relations come in two forms:
//! dense square matrices and sparse per-row neighbor lists.

use crate::diff::Tensor;
use ndarray::{Array2, ArrayD, IxDyn};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

mod vptree;
pub use vptree::VpTree;

#[derive(Debug, Error)]
pub enum RelationError {
    #[error("unknown metric '{0}'")]
    UnknownMetric(String),
    #[error("non-finite value in input data")]
    NonFiniteInput,
    #[error("k = {k} must satisfy 1 <= k < n = {n}")]
    BadNeighborCount { k: usize, n: usize },
    #[error("batch index {index} out of range for {n} items")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("duplicate batch index {0}")]
    DuplicateIndex(usize),
    #[error("metric '{0}' is not supported for differentiable batch relations")]
    BatchMetricUnsupported(String),
    #[error("batch needs at least two items, got {0}")]
    BatchTooSmall(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    SqEuclidean,
    Manhattan,
    Cosine,
}

impl Metric {
    pub fn parse(name: &str) -> Result<Metric, RelationError> {
        match name {
            "euclidean" => Ok(Metric::Euclidean),
            "sqeuclidean" => Ok(Metric::SqEuclidean),
            "manhattan" => Ok(Metric::Manhattan),
            "cosine" => Ok(Metric::Cosine),
            other => Err(RelationError::UnknownMetric(other.to_string())),
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Metric::SqEuclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    if na == nb {
                        0.0
                    } else {
                        1.0
                    }
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

/// Dense square relations, e.g. pairwise distances or equality matrices.
#[derive(Debug, Clone)]
pub struct DenseRelations {
    pub values: Array2<f64>,
    pub symmetric: bool,
    pub normalized: bool,
}

/// Sparse neighbor relations: per-row `(neighbor index, value)` lists,
/// sorted by index.
#[derive(Debug, Clone)]
pub struct SparseRelations {
    pub n: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub symmetric: bool,
    pub normalized: bool,
}

#[derive(Debug, Clone)]
pub enum RelationMatrix {
    Dense(DenseRelations),
    Sparse(SparseRelations),
}

impl RelationMatrix {
    pub fn n(&self) -> usize {
        match self {
            RelationMatrix::Dense(d) => d.values.nrows(),
            RelationMatrix::Sparse(s) => s.n,
        }
    }

    pub fn is_normalized(&self) -> bool {
        match self {
            RelationMatrix::Dense(d) => d.normalized,
            RelationMatrix::Sparse(s) => s.normalized,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            RelationMatrix::Dense(d) => d.symmetric,
            RelationMatrix::Sparse(s) => s.symmetric,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            RelationMatrix::Dense(d) => d.values[[i, j]],
            RelationMatrix::Sparse(s) => s.rows[i]
                .binary_search_by(|(idx, _)| idx.cmp(&j))
                .map(|pos| s.rows[i][pos].1)
                .unwrap_or(0.0),
        }
    }

    /// Number of stored entries (dense: count of nonzeros).
    pub fn nnz(&self) -> usize {
        match self {
            RelationMatrix::Dense(d) => d.values.iter().filter(|v| **v != 0.0).count(),
            RelationMatrix::Sparse(s) => s.rows.iter().map(Vec::len).sum(),
        }
    }

    pub fn total(&self) -> f64 {
        match self {
            RelationMatrix::Dense(d) => d.values.sum(),
            RelationMatrix::Sparse(s) => {
                s.rows.iter().flat_map(|r| r.iter().map(|(_, v)| *v)).sum()
            }
        }
    }

    /// Sum of off-diagonal entries.
    pub fn off_diag_total(&self) -> f64 {
        match self {
            RelationMatrix::Dense(d) => {
                let mut s = 0.0;
                for i in 0..d.values.nrows() {
                    for j in 0..d.values.ncols() {
                        if i != j {
                            s += d.values[[i, j]];
                        }
                    }
                }
                s
            }
            RelationMatrix::Sparse(s) => s
                .rows
                .iter()
                .enumerate()
                .flat_map(|(i, r)| r.iter().filter(move |(j, _)| *j != i).map(|(_, v)| *v))
                .sum(),
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        match self {
            RelationMatrix::Dense(d) => d.values.clone(),
            RelationMatrix::Sparse(s) => {
                let mut out = Array2::zeros((s.n, s.n));
                for (i, row) in s.rows.iter().enumerate() {
                    for &(j, v) in row {
                        out[[i, j]] = v;
                    }
                }
                out
            }
        }
    }

    /// Debug export: dense matrices as CSV, sparse ones as `i,j,value`
    /// triples.
    pub fn export_csv(&self, path: &Path) -> Result<(), RelationError> {
        let mut file = std::fs::File::create(path)?;
        match self {
            RelationMatrix::Dense(d) => {
                for i in 0..d.values.nrows() {
                    let row: Vec<String> = (0..d.values.ncols())
                        .map(|j| d.values[[i, j]].to_string())
                        .collect();
                    writeln!(file, "{}", row.join(","))?;
                }
            }
            RelationMatrix::Sparse(s) => {
                writeln!(file, "i,j,value")?;
                for (i, row) in s.rows.iter().enumerate() {
                    for &(j, v) in row {
                        writeln!(file, "{i},{j},{v}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_finite(data: &Array2<f64>) -> Result<(), RelationError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(RelationError::NonFiniteInput)
    }
}

fn row(data: &Array2<f64>, i: usize) -> &[f64] {
    data.row(i).to_slice().expect("row-major data")
}

/// Exact pairwise distances between all rows: symmetric, zero diagonal.
pub fn pairwise_dist(data: &Array2<f64>, metric: Metric) -> Result<RelationMatrix, RelationError> {
    check_finite(data)?;
    let n = data.nrows();
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = metric.distance(row(data, i), row(data, j));
            values[[i, j]] = d;
            values[[j, i]] = d;
        }
    }
    Ok(RelationMatrix::Dense(DenseRelations {
        values,
        symmetric: true,
        normalized: false,
    }))
}

/// k nearest neighbors per row (self excluded), ties broken by lower index.
///
/// Exact everywhere: brute force at desk scale, a vantage-point tree for
/// larger inputs under true metrics.
pub fn knn_relations(
    data: &Array2<f64>,
    k: usize,
    metric: Metric,
) -> Result<RelationMatrix, RelationError> {
    let n = data.nrows();
    let use_tree = n > 5000 && matches!(metric, Metric::Euclidean | Metric::Manhattan);
    if use_tree {
        knn_vptree(data, k, metric)
    } else {
        knn_brute(data, k, metric)
    }
}

/// Brute-force kNN, also the equivalence oracle for the vantage-point tree.
pub fn knn_brute(
    data: &Array2<f64>,
    k: usize,
    metric: Metric,
) -> Result<RelationMatrix, RelationError> {
    check_finite(data)?;
    let n = data.nrows();
    if k == 0 || k >= n {
        return Err(RelationError::BadNeighborCount { k, n });
    }
    let mut rows = Vec::with_capacity(n);
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        candidates.clear();
        for j in 0..n {
            if j != i {
                candidates.push((metric.distance(row(data, i), row(data, j)), j));
            }
        }
        candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut entries: Vec<(usize, f64)> = candidates[..k].iter().map(|&(d, j)| (j, d)).collect();
        entries.sort_by_key(|(j, _)| *j);
        rows.push(entries);
    }
    Ok(RelationMatrix::Sparse(SparseRelations {
        n,
        rows,
        symmetric: false,
        normalized: false,
    }))
}

/// kNN via a vantage-point tree (exact for true metrics).
pub fn knn_vptree(
    data: &Array2<f64>,
    k: usize,
    metric: Metric,
) -> Result<RelationMatrix, RelationError> {
    check_finite(data)?;
    let n = data.nrows();
    if k == 0 || k >= n {
        return Err(RelationError::BadNeighborCount { k, n });
    }
    let tree = VpTree::build(data, metric);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut entries = tree.knn(row(data, i), k, Some(i));
        entries.sort_by_key(|(j, _)| *j);
        rows.push(entries);
    }
    Ok(RelationMatrix::Sparse(SparseRelations {
        n,
        rows,
        symmetric: false,
        normalized: false,
    }))
}

/// Binary label-equality relation with zero diagonal, so self-pairs are
/// never sampled as positive edges.
pub fn pairwise_equality(labels: &[usize]) -> RelationMatrix {
    let n = labels.len();
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j && labels[i] == labels[j] {
                values[[i, j]] = 1.0;
            }
        }
    }
    RelationMatrix::Dense(DenseRelations {
        values,
        symmetric: true,
        normalized: false,
    })
}

/// Batch-level subset of a global relation.
#[derive(Debug, Clone)]
pub struct BatchSubset {
    pub values: Array2<f64>,
    /// Set when the selected submatrix was entirely zero; renormalization is
    /// skipped in that case.
    pub all_zero: bool,
}

/// Submatrix of a global relation over the batch indices. Normalized
/// relations are renormalized so the off-diagonal entries of the subset sum
/// to one; an all-zero subset is returned as-is with a flag.
pub fn subset_for_batch(
    global: &RelationMatrix,
    indices: &[usize],
) -> Result<BatchSubset, RelationError> {
    let n = global.n();
    let mut seen = vec![false; n];
    for &i in indices {
        if i >= n {
            return Err(RelationError::IndexOutOfRange { index: i, n });
        }
        if seen[i] {
            return Err(RelationError::DuplicateIndex(i));
        }
        seen[i] = true;
    }
    let b = indices.len();
    let mut values = Array2::zeros((b, b));
    match global {
        RelationMatrix::Dense(d) => {
            for (r, &i) in indices.iter().enumerate() {
                for (c, &j) in indices.iter().enumerate() {
                    values[[r, c]] = d.values[[i, j]];
                }
            }
        }
        RelationMatrix::Sparse(s) => {
            let mut pos = vec![usize::MAX; n];
            for (r, &i) in indices.iter().enumerate() {
                pos[i] = r;
            }
            for (r, &i) in indices.iter().enumerate() {
                for &(j, v) in &s.rows[i] {
                    if pos[j] != usize::MAX {
                        values[[r, pos[j]]] = v;
                    }
                }
            }
        }
    }
    let mut all_zero = false;
    if global.is_normalized() {
        let mut total = 0.0;
        for r in 0..b {
            for c in 0..b {
                if r != c {
                    total += values[[r, c]];
                }
            }
        }
        if total > 0.0 {
            values.mapv_inplace(|v| v / total);
        } else {
            all_zero = true;
        }
    }
    Ok(BatchSubset { values, all_zero })
}

/// Differentiable relations over a processed batch: either a square
/// batch-by-batch matrix or a per-edge vector.
#[derive(Clone, Copy)]
pub struct BatchRel<'t> {
    pub values: Tensor<'t>,
    pub form: BatchForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchForm {
    Square,
    Edges,
}

/// Constant mask with zeros on the diagonal and ones elsewhere.
pub(crate) fn off_diag_mask(b: usize) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(&[b, b]), |ix| if ix[0] == ix[1] { 0.0 } else { 1.0 })
}

/// Differentiable pairwise distances between the rows of a batch output.
///
/// Euclidean distances use `sqrt(squared distance + 1e-12)` so the gradient
/// stays finite at coincident points; the diagonal is exactly zero.
pub fn batch_pdist<'t>(output: Tensor<'t>, metric: Metric) -> Result<BatchRel<'t>, RelationError> {
    let shape = output.shape();
    assert_eq!(shape.len(), 2, "batch_pdist expects a rank-2 batch");
    let b = shape[0];
    if b < 2 {
        return Err(RelationError::BatchTooSmall(b));
    }
    let tape = output.tape();
    let values = match metric {
        Metric::Euclidean => {
            let sq = batch_sq_dists(output);
            sq.sqrt_eps(1e-12).mul(tape.constant(off_diag_mask(b)))
        }
        Metric::SqEuclidean => batch_sq_dists(output).mul(tape.constant(off_diag_mask(b))),
        Metric::Manhattan => {
            let d = shape[1];
            let mut acc: Option<Tensor<'t>> = None;
            for k in 0..d {
                let diffs = output.select_column(k).outer_diff().abs();
                acc = Some(match acc {
                    Some(a) => a.add(diffs),
                    None => diffs,
                });
            }
            acc.expect("at least one column")
        }
        Metric::Cosine => return Err(RelationError::BatchMetricUnsupported("cosine".into())),
    };
    Ok(BatchRel {
        values,
        form: BatchForm::Square,
    })
}

/// Squared pairwise distances via the Gram matrix, clamped at zero.
fn batch_sq_dists<'t>(output: Tensor<'t>) -> Tensor<'t> {
    let gram = output.matmul(output.transpose());
    let sq_norms = output.mul(output).sum_axis(1);
    gram.mul_scalar(-2.0)
        .add_rowvec(sq_norms)
        .add_colvec(sq_norms)
        .relu()
}

/// Differentiable distances along an explicit edge list:
/// `dist(rows[heads[e]], rows[tails[e]])` per edge.
pub fn edge_distances<'t>(
    output: Tensor<'t>,
    heads: &[usize],
    tails: &[usize],
    metric: Metric,
) -> Result<BatchRel<'t>, RelationError> {
    assert_eq!(heads.len(), tails.len(), "edge list endpoint mismatch");
    let a = output.gather_rows(heads);
    let b = output.gather_rows(tails);
    let diff = a.sub(b);
    let values = match metric {
        Metric::Euclidean => diff.mul(diff).sum_axis(1).sqrt_eps(1e-12),
        Metric::SqEuclidean => diff.mul(diff).sum_axis(1),
        Metric::Manhattan => diff.abs().sum_axis(1),
        Metric::Cosine => return Err(RelationError::BatchMetricUnsupported("cosine".into())),
    };
    Ok(BatchRel {
        values,
        form: BatchForm::Edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{finite_difference, rel_err, Tape};
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn three_four_five_triangle() {
        let data = array![[0.0, 0.0], [3.0, 4.0]];
        let rel = pairwise_dist(&data, Metric::Euclidean).unwrap();
        assert_eq!(rel.to_dense(), array![[0.0, 5.0], [5.0, 0.0]]);
    }

    #[test]
    fn manhattan_matches_brute_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-2.0..2.0));
        let dense = pairwise_dist(&data, Metric::Manhattan).unwrap().to_dense();
        for i in 0..5 {
            assert_eq!(dense[[i, i]], 0.0);
            for j in 0..5 {
                let mut want = 0.0;
                for k in 0..3 {
                    want += (data[[i, k]] - data[[j, k]]).abs();
                }
                assert!((dense[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn triangle_inequality_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = Array2::from_shape_fn((12, 4), |_| rng.gen_range(-1.0..1.0));
        for metric in [Metric::Euclidean, Metric::Manhattan] {
            let d = pairwise_dist(&data, metric).unwrap().to_dense();
            for i in 0..12 {
                for j in 0..12 {
                    for k in 0..12 {
                        assert!(d[[i, j]] <= d[[i, k]] + d[[k, j]] + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn knn_collinear_points() {
        let data = array![[0.0], [1.0], [10.0]];
        let rel = knn_brute(&data, 1, Metric::Euclidean).unwrap();
        if let RelationMatrix::Sparse(s) = &rel {
            assert_eq!(s.rows[0], vec![(1, 1.0)]);
            assert_eq!(s.rows[1], vec![(0, 1.0)]);
            assert_eq!(s.rows[2], vec![(1, 9.0)]);
        } else {
            panic!("expected sparse");
        }
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        let data = array![[0.0], [0.0], [0.0]];
        let rel = knn_brute(&data, 1, Metric::Euclidean).unwrap();
        if let RelationMatrix::Sparse(s) = &rel {
            assert_eq!(s.rows[0], vec![(1, 0.0)]);
            assert_eq!(s.rows[1], vec![(0, 0.0)]);
            assert_eq!(s.rows[2], vec![(0, 0.0)]);
        } else {
            panic!("expected sparse");
        }
    }

    #[test]
    fn knn_matches_dense_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data = Array2::from_shape_fn((50, 5), |_| rng.gen_range(-1.0..1.0));
        let rel = knn_brute(&data, 10, Metric::Euclidean).unwrap();
        let dense = pairwise_dist(&data, Metric::Euclidean).unwrap().to_dense();
        if let RelationMatrix::Sparse(s) = &rel {
            for i in 0..50 {
                let mut cand: Vec<(f64, usize)> = (0..50)
                    .filter(|&j| j != i)
                    .map(|j| (dense[[i, j]], j))
                    .collect();
                cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let mut want: Vec<(usize, f64)> = cand[..10].iter().map(|&(d, j)| (j, d)).collect();
                want.sort_by_key(|(j, _)| *j);
                assert_eq!(s.rows[i], want);
                for &(j, v) in &s.rows[i] {
                    assert_eq!(v, dense[[i, j]]);
                }
            }
        } else {
            panic!("expected sparse");
        }
    }

    #[test]
    fn vptree_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut data = Array2::from_shape_fn((200, 4), |_| rng.gen_range(-1.0..1.0));
        // Duplicates exercise tie-breaking.
        for i in 0..10 {
            let src = i * 3;
            for k in 0..4 {
                data[[i + 100, k]] = data[[src, k]];
            }
        }
        for metric in [Metric::Euclidean, Metric::Manhattan] {
            let brute = knn_brute(&data, 7, metric).unwrap();
            let tree = knn_vptree(&data, 7, metric).unwrap();
            if let (RelationMatrix::Sparse(a), RelationMatrix::Sparse(b)) = (&brute, &tree) {
                for i in 0..200 {
                    assert_eq!(a.rows[i], b.rows[i], "row {i} metric {metric:?}");
                }
            }
        }
    }

    #[test]
    fn knn_rejects_bad_k() {
        let data = array![[0.0], [1.0]];
        assert!(matches!(
            knn_brute(&data, 2, Metric::Euclidean),
            Err(RelationError::BadNeighborCount { .. })
        ));
    }

    #[test]
    fn pairwise_equality_examples() {
        let rel = pairwise_equality(&[0, 0, 1]);
        assert_eq!(
            rel.to_dense(),
            array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
        );
        let all_same = pairwise_equality(&[2, 2, 2]);
        assert_eq!(all_same.off_diag_total(), 6.0);
        let all_diff = pairwise_equality(&[0, 1, 2]);
        assert_eq!(all_diff.total(), 0.0);
    }

    #[test]
    fn subset_renormalizes_probability_matrices() {
        let mut p = Array2::zeros((4, 4));
        let mut total = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    p[[i, j]] = (i * 4 + j + 1) as f64;
                    total += p[[i, j]];
                }
            }
        }
        p.mapv_inplace(|v| v / total);
        let rel = RelationMatrix::Dense(DenseRelations {
            values: p.clone(),
            symmetric: false,
            normalized: true,
        });
        let sub = subset_for_batch(&rel, &[0, 1]).unwrap();
        let off_sum = sub.values[[0, 1]] + sub.values[[1, 0]];
        assert!((off_sum - 1.0).abs() < 1e-12);
        assert!(!sub.all_zero);

        // Identity subset leaves a normalized matrix unchanged.
        let full = subset_for_batch(&rel, &[0, 1, 2, 3]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((full.values[[i, j]] - p[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn subset_all_zero_sets_flag() {
        let rel = RelationMatrix::Sparse(SparseRelations {
            n: 4,
            rows: vec![vec![(1, 1.0)], vec![(0, 1.0)], vec![], vec![]],
            symmetric: true,
            normalized: true,
        });
        let sub = subset_for_batch(&rel, &[2, 3]).unwrap();
        assert!(sub.all_zero);
        assert!(sub.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn subset_rejects_bad_indices() {
        let rel = pairwise_equality(&[0, 1]);
        assert!(matches!(
            subset_for_batch(&rel, &[0, 5]),
            Err(RelationError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            subset_for_batch(&rel, &[0, 0]),
            Err(RelationError::DuplicateIndex(0))
        ));
    }

    #[test]
    fn batch_pdist_triangle_value_and_gradient() {
        let tape = Tape::new();
        let out = tape.leaf(array![[0.0, 0.0], [3.0, 4.0]].into_dyn());
        let rel = batch_pdist(out, Metric::Euclidean).unwrap();
        let v = rel.values.value();
        assert!((v[[0, 1]] - 5.0).abs() < 1e-9);
        assert_eq!(v[[0, 0]], 0.0);
        // Gradient of the single (0, 1) entry w.r.t. the second row.
        let mask = ArrayD::from_shape_fn(IxDyn(&[2, 2]), |ix| f64::from(ix[0] == 0 && ix[1] == 1));
        rel.values.mul(tape.constant(mask)).sum().backward();
        let g = out.grad();
        assert!((g[[1, 0]] - 0.6).abs() < 1e-6);
        assert!((g[[1, 1]] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn batch_pdist_coincident_rows_near_zero() {
        let tape = Tape::new();
        let out = tape.leaf(array![[1.0, 2.0], [1.0, 2.0]].into_dyn());
        let rel = batch_pdist(out, Metric::Euclidean).unwrap();
        assert!(rel.values.value()[[0, 1]] <= 2e-6);
        rel.values.sum().backward();
        assert!(out.grad().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn batch_pdist_matches_pairwise_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        // Spread points out so the epsilon guard is negligible.
        let data = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-4.0..4.0));
        let dense = pairwise_dist(&data, Metric::Euclidean).unwrap().to_dense();
        let tape = Tape::new();
        let out = tape.leaf(data.into_dyn());
        let v = batch_pdist(out, Metric::Euclidean).unwrap().values.value();
        for i in 0..4 {
            for j in 0..4 {
                assert!((v[[i, j]] - dense[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_pdist_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let data = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-4.0..4.0)).into_dyn();
        for metric in [Metric::Euclidean, Metric::SqEuclidean, Metric::Manhattan] {
            let f = |inputs: &[ArrayD<f64>]| {
                let tape = Tape::new();
                let out = tape.leaf(inputs[0].clone());
                batch_pdist(out, metric).unwrap().values.mean().scalar_value()
            };
            let fd = finite_difference(f, &[data.clone()], 1e-6);
            let tape = Tape::new();
            let out = tape.leaf(data.clone());
            batch_pdist(out, metric).unwrap().values.mean().backward();
            for (a, b) in out.grad().iter().zip(fd[0].iter()) {
                assert!(rel_err(*a, *b) < 1e-5, "{metric:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn edge_distances_match_square_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let data = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-2.0..2.0));
        let tape = Tape::new();
        let out = tape.leaf(data.into_dyn());
        let square = batch_pdist(out, Metric::Euclidean).unwrap().values.value();
        let heads = [0, 1, 4];
        let tails = [2, 3, 0];
        let edges = edge_distances(out, &heads, &tails, Metric::Euclidean).unwrap();
        let ev = edges.values.value();
        for (e, (&h, &t)) in heads.iter().zip(tails.iter()).enumerate() {
            assert!((ev[[e]] - square[[h, t]]).abs() < 1e-12);
        }
        assert_eq!(edges.form, BatchForm::Edges);
    }
}
