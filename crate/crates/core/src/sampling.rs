//! Training batch construction: item permutations, negative-edge sampling
//! over a global relation, and triplet construction from equality relations.
//!
//! Samplers own a seedable ChaCha generator, so batch sequences are
//! reproducible across platforms.

use crate::dataset::{Dataset, Field};
use crate::relations::RelationMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("batch size must be at least 1")]
    EmptyBatch,
    #[error("relation has no positive entries to sample edges from")]
    NoPositiveEntries,
    #[error("edge batch does not pair each positive edge with its negatives")]
    MismatchedPairing,
}

/// A sampled edge between two items; negatives are the repulsive samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub is_negative: bool,
}

/// One training batch: unique item indices, data slices for the keys the
/// losses touch, and (for edge sampling) the signed edge list.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub data: BTreeMap<String, Field>,
    pub edges: Option<Vec<Edge>>,
}

impl Batch {
    fn from_items(indices: Vec<usize>) -> Batch {
        Batch {
            indices,
            data: BTreeMap::new(),
            edges: None,
        }
    }

    /// Deduplicated item list in first-occurrence order over the edge stream.
    fn from_edges(edges: Vec<Edge>, n: usize) -> Batch {
        let mut seen = vec![false; n];
        let mut indices = Vec::new();
        for e in &edges {
            for v in [e.i, e.j] {
                if !seen[v] {
                    seen[v] = true;
                    indices.push(v);
                }
            }
        }
        Batch {
            indices,
            data: BTreeMap::new(),
            edges: Some(edges),
        }
    }

    /// Fill `data` with row slices of the referenced dataset fields.
    pub fn slice_data(&mut self, dataset: &Dataset, keys: &[String]) -> Result<(), crate::dataset::DataError> {
        for key in keys {
            if self.data.contains_key(key) {
                continue;
            }
            let slice = match dataset.field(key)? {
                Field::Matrix(m) => {
                    let mut out = ndarray::Array2::zeros((self.indices.len(), m.ncols()));
                    for (r, &i) in self.indices.iter().enumerate() {
                        out.row_mut(r).assign(&m.row(i));
                    }
                    Field::Matrix(out)
                }
                Field::Labels(l) => {
                    Field::Labels(self.indices.iter().map(|&i| l[i]).collect())
                }
            };
            self.data.insert(key.clone(), slice);
        }
        Ok(())
    }
}

/// One epoch of item batches: a uniform random permutation of `0..n` cut
/// into consecutive chunks; the last chunk may be short.
pub fn item_batches(
    n: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Batch>, SamplingError> {
    if batch_size == 0 {
        return Err(SamplingError::EmptyBatch);
    }
    let mut perm: Vec<usize> = (0..n).collect();
    // Fisher-Yates, driven by the counter-based generator.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    Ok(perm
        .chunks(batch_size)
        .map(|chunk| Batch::from_items(chunk.to_vec()))
        .collect())
}

const NEGATIVE_RESAMPLE_LIMIT: usize = 100;

/// One epoch of negative-edge batches over a non-negative global relation.
///
/// Each batch holds `n_pos` positive edges drawn with probability
/// proportional to the relation values, plus `rate` negatives per positive:
/// pairs `(i, k)` with `k` uniform over items with `rel(i, k) = 0`, `k != i`.
/// An epoch is `ceil(nnz / n_pos)` batches. Items are not guaranteed to
/// all appear.
pub fn negative_edge_batches(
    rel: &RelationMatrix,
    n_pos: usize,
    rate: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Batch>, SamplingError> {
    if n_pos == 0 {
        return Err(SamplingError::EmptyBatch);
    }
    let n = rel.n();
    // Cumulative-weight table over stored positive entries.
    let mut entries: Vec<(usize, usize)> = Vec::new();
    let mut cumulative: Vec<f64> = Vec::new();
    let mut total = 0.0;
    match rel {
        RelationMatrix::Dense(d) => {
            for i in 0..n {
                for j in 0..n {
                    let w = d.values[[i, j]];
                    if w > 0.0 && i != j {
                        total += w;
                        entries.push((i, j));
                        cumulative.push(total);
                    }
                }
            }
        }
        RelationMatrix::Sparse(s) => {
            for (i, row) in s.rows.iter().enumerate() {
                for &(j, w) in row {
                    if w > 0.0 && i != j {
                        total += w;
                        entries.push((i, j));
                        cumulative.push(total);
                    }
                }
            }
        }
    }
    if entries.is_empty() {
        return Err(SamplingError::NoPositiveEntries);
    }

    let batches_per_epoch = entries.len().div_ceil(n_pos);
    let mut batches = Vec::with_capacity(batches_per_epoch);
    for _ in 0..batches_per_epoch {
        let mut edges = Vec::with_capacity(n_pos * (1 + rate));
        for _ in 0..n_pos {
            let u: f64 = rng.gen::<f64>() * total;
            let pos = cumulative.partition_point(|&c| c <= u).min(entries.len() - 1);
            let (i, j) = entries[pos];
            edges.push(Edge {
                i,
                j,
                is_negative: false,
            });
            // Negatives attach to the first vertex of the positive edge.
            for _ in 0..rate {
                let mut found = false;
                for _ in 0..NEGATIVE_RESAMPLE_LIMIT {
                    let k = rng.gen_range(0..n);
                    if k != i && rel.get(i, k) == 0.0 {
                        edges.push(Edge {
                            i,
                            j: k,
                            is_negative: true,
                        });
                        found = true;
                        break;
                    }
                }
                if !found {
                    log::warn!(
                        "negative-edge sampling: no zero-relation partner found for item {i} \
                         after {NEGATIVE_RESAMPLE_LIMIT} attempts; skipping negative"
                    );
                }
            }
        }
        batches.push(Batch::from_edges(edges, n));
    }
    Ok(batches)
}

/// Pair each positive edge `(a, b)` with its following negative edges
/// `(a, c)` into triplets `(a, b, c)`.
pub fn triplets_from_edges(batch: &Batch) -> Result<Vec<(usize, usize, usize)>, SamplingError> {
    let Some(edges) = &batch.edges else {
        return Err(SamplingError::MismatchedPairing);
    };
    let mut triplets = Vec::new();
    let mut current_pos: Option<(usize, usize)> = None;
    for e in edges {
        if e.is_negative {
            let Some((a, b)) = current_pos else {
                return Err(SamplingError::MismatchedPairing);
            };
            if e.i != a {
                return Err(SamplingError::MismatchedPairing);
            }
            triplets.push((a, b, e.j));
        } else {
            current_pos = Some((e.i, e.j));
        }
    }
    if triplets.is_empty() {
        log::warn!("edge batch produced no triplets (no valid negative partners)");
    }
    Ok(triplets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relations::{pairwise_equality, DenseRelations};
    use ndarray::Array2;
    use rand::SeedableRng;

    #[test]
    fn item_epoch_covers_every_item_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batches = item_batches(10, 3, &mut rng).unwrap();
        let sizes: Vec<usize> = batches.iter().map(|b| b.indices.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        let mut all: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn oversized_batch_clamps_to_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batches = item_batches(5, 100, &mut rng).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].indices.len(), 5);
    }

    #[test]
    fn item_sampling_determinism() {
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            item_batches(20, 6, &mut rng)
                .unwrap()
                .iter()
                .map(|b| b.indices.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn single_support_edge_always_sampled() {
        let mut values = Array2::zeros((3, 3));
        values[[0, 1]] = 1.0;
        let rel = RelationMatrix::Dense(DenseRelations {
            values,
            symmetric: false,
            normalized: false,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batches = negative_edge_batches(&rel, 4, 1, &mut rng).unwrap();
        for batch in &batches {
            for e in batch.edges.as_ref().unwrap() {
                if !e.is_negative {
                    assert_eq!((e.i, e.j), (0, 1));
                }
            }
        }
    }

    #[test]
    fn edge_counts_scale_with_rate() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let rel = pairwise_equality(&labels);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batches = negative_edge_batches(&rel, 300, 2, &mut rng).unwrap();
        let batch = &batches[0];
        let edges = batch.edges.as_ref().unwrap();
        let positives = edges.iter().filter(|e| !e.is_negative).count();
        let negatives = edges.iter().filter(|e| e.is_negative).count();
        assert_eq!(positives, 300);
        assert_eq!(negatives, 600);
        // Every endpoint appears in the unique index list, no duplicates.
        let mut sorted = batch.indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), batch.indices.len());
        for e in edges {
            assert!(batch.indices.contains(&e.i));
            assert!(batch.indices.contains(&e.j));
        }
    }

    #[test]
    fn negatives_are_zero_relation_pairs() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let rel = pairwise_equality(&labels);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batches = negative_edge_batches(&rel, 50, 2, &mut rng).unwrap();
        for batch in &batches {
            for e in batch.edges.as_ref().unwrap() {
                if e.is_negative {
                    assert_ne!(e.i, e.j);
                    assert_eq!(rel.get(e.i, e.j), 0.0);
                }
            }
        }
    }

    #[test]
    fn positive_frequencies_match_weights() {
        // 10^5 draws against a 4-item relation with distinct weights; counts
        // must sit within 3 sigma of the multinomial expectation.
        let mut values = Array2::zeros((4, 4));
        values[[0, 1]] = 0.1;
        values[[0, 2]] = 0.2;
        values[[1, 3]] = 0.3;
        values[[2, 3]] = 0.4;
        let rel = RelationMatrix::Dense(DenseRelations {
            values: values.clone(),
            symmetric: false,
            normalized: false,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n_draws = 100_000usize;
        let batches = negative_edge_batches(&rel, n_draws, 0, &mut rng).unwrap();
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for e in batches[0].edges.as_ref().unwrap() {
            *counts.entry((e.i, e.j)).or_default() += 1;
        }
        for (&(i, j), &count) in &counts {
            let p = values[[i, j]];
            let expect = n_draws as f64 * p;
            let sigma = (n_draws as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (count as f64 - expect).abs() <= 3.0 * sigma,
                "edge ({i},{j}): {count} vs {expect} +- {sigma}"
            );
        }
    }

    #[test]
    fn triplet_construction_from_labels() {
        let rel = pairwise_equality(&[0, 0, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batches = negative_edge_batches(&rel, 2, 1, &mut rng).unwrap();
        let triplets = triplets_from_edges(&batches[0]).unwrap();
        assert_eq!(triplets.len(), 2);
        for (a, b, c) in triplets {
            assert!(a < 2 && b < 2 && a != b, "positive pair shares label 0");
            assert_eq!(c, 2, "only item 2 differs");
        }
    }

    #[test]
    fn all_equal_labels_yield_no_triplets() {
        let rel = pairwise_equality(&[1, 1, 1, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batches = negative_edge_batches(&rel, 5, 1, &mut rng).unwrap();
        let triplets = triplets_from_edges(&batches[0]).unwrap();
        assert!(triplets.is_empty());
    }

    #[test]
    fn rate_one_produces_one_triplet_per_positive() {
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let rel = pairwise_equality(&labels);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batches = negative_edge_batches(&rel, 300, 1, &mut rng).unwrap();
        let triplets = triplets_from_edges(&batches[0]).unwrap();
        assert_eq!(triplets.len(), 300);
    }

    #[test]
    fn epoch_size_follows_nnz() {
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let rel = pairwise_equality(&labels);
        let nnz = rel.nnz();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let batches = negative_edge_batches(&rel, 30, 0, &mut rng).unwrap();
        assert_eq!(batches.len(), nnz.div_ceil(30));
    }

    #[test]
    fn batch_slices_data_by_indices() {
        let mut ds = Dataset::new();
        let m = Array2::from_shape_fn((5, 2), |(i, j)| (i * 10 + j) as f64);
        ds.insert("main", Field::Matrix(m)).unwrap();
        ds.insert("labels", Field::Labels(vec![0, 1, 2, 3, 4]))
            .unwrap();
        let mut batch = Batch::from_items(vec![3, 1]);
        batch
            .slice_data(&ds, &["main".into(), "labels".into()])
            .unwrap();
        match batch.data.get("main").unwrap() {
            Field::Matrix(m) => {
                assert_eq!(m[[0, 0]], 30.0);
                assert_eq!(m[[1, 0]], 10.0);
            }
            _ => panic!("expected matrix"),
        }
        match batch.data.get("labels").unwrap() {
            Field::Labels(l) => assert_eq!(l, &vec![3, 1]),
            _ => panic!("expected labels"),
        }
    }
}
