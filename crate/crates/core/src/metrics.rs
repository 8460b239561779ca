//! Embedding-quality metrics: normalized stress, trustworthiness, and
//! classification accuracy. Evaluation is offline; high-dimensional ranks
//! are computed exactly.

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("condensed distance vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("high-dimensional distances are all zero")]
    DegenerateReference,
    #[error("k = {k} must satisfy 1 <= k < n/2 = {half}")]
    BadNeighborCount { k: usize, half: usize },
    #[error("row counts differ: {0} vs {1}")]
    RowMismatch(usize, usize),
}

/// Condensed pairwise euclidean distances (upper triangle, row-major).
pub fn condensed_distances(data: &Array2<f64>) -> Vec<f64> {
    let n = data.nrows();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for k in 0..data.ncols() {
                let d = data[[i, k]] - data[[j, k]];
                s += d * d;
            }
            out.push(s.sqrt());
        }
    }
    out
}

/// `sum (d_hi - d_lo)^2 / sum d_hi^2` over item pairs.
pub fn normalized_stress(d_hi: &[f64], d_lo: &[f64]) -> Result<f64, MetricError> {
    if d_hi.len() != d_lo.len() {
        return Err(MetricError::LengthMismatch(d_hi.len(), d_lo.len()));
    }
    let denom: f64 = d_hi.iter().map(|d| d * d).sum();
    if denom <= 0.0 {
        return Err(MetricError::DegenerateReference);
    }
    let num: f64 = d_hi
        .iter()
        .zip(d_lo)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / denom)
}

/// Neighbor ranks of every item: `ranks[i][j]` is the rank of j among i's
/// neighbors by euclidean distance (rank 1 = nearest, self excluded), ties
/// broken by lower index.
fn neighbor_ranks(data: &Array2<f64>) -> Vec<Vec<usize>> {
    let n = data.nrows();
    let mut ranks = vec![vec![0usize; n]; n];
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        for j in 0..n {
            if j != i {
                let mut s = 0.0;
                for k in 0..data.ncols() {
                    let d = data[[i, k]] - data[[j, k]];
                    s += d * d;
                }
                order.push((s, j));
            }
        }
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for (rank, &(_, j)) in order.iter().enumerate() {
            ranks[i][j] = rank + 1;
        }
    }
    ranks
}

/// Trustworthiness at `k`:
/// `1 - 2/(n k (2n - 3k - 1)) * sum_i sum_{j in U_i^k} (r(i, j) - k)`,
/// where `U_i^k` are low-dimensional k-neighbors of i absent from the
/// high-dimensional k-neighborhood and `r(i, j)` the high-dimensional rank.
pub fn trustworthiness(hi: &Array2<f64>, lo: &Array2<f64>, k: usize) -> Result<f64, MetricError> {
    let n = hi.nrows();
    if lo.nrows() != n {
        return Err(MetricError::RowMismatch(n, lo.nrows()));
    }
    if k == 0 || 2 * k >= n {
        return Err(MetricError::BadNeighborCount { k, half: n / 2 });
    }
    let hi_ranks = neighbor_ranks(hi);
    let lo_ranks = neighbor_ranks(lo);
    let mut penalty = 0.0;
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            // j is a low-dim neighbor of i but not a high-dim one.
            if lo_ranks[i][j] <= k && hi_ranks[i][j] > k {
                penalty += (hi_ranks[i][j] - k) as f64;
            }
        }
    }
    let nf = n as f64;
    let kf = k as f64;
    Ok(1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * penalty)
}

/// Fraction of argmax matches; ties break towards the lowest class index.
pub fn accuracy(logits: &Array2<f64>, labels: &[usize]) -> Result<f64, MetricError> {
    if logits.nrows() != labels.len() {
        return Err(MetricError::RowMismatch(logits.nrows(), labels.len()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let mut best = 0usize;
        for c in 1..logits.ncols() {
            if logits[[i, c]] > logits[[i, best]] {
                best = c;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}
