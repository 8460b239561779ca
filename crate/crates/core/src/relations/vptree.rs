//! Vantage-point tree for exact nearest-neighbor queries under true metrics.
//!
//! Construction is deterministic: the vantage point of each partition is the
//! candidate with the lowest original index, and the split radius is the
//! median distance. Queries use inclusive pruning bounds so distance ties
//! are still resolved towards the lower item index.

use super::Metric;
use ndarray::Array2;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

struct Node {
    vantage: usize,
    threshold: f64,
    inside: Option<Box<Node>>,
    outside: Option<Box<Node>>,
}

pub struct VpTree {
    data: Array2<f64>,
    metric: Metric,
    root: Option<Box<Node>>,
}

/// Max-heap entry ordered by (distance, index); the "worst" neighbor is the
/// farthest one, with higher index losing ties.
#[derive(PartialEq)]
struct HeapItem {
    dist: f64,
    index: usize,
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .partial_cmp(&other.dist)
            .unwrap()
            .then(self.index.cmp(&other.index))
    }
}

impl VpTree {
    pub fn build(data: &Array2<f64>, metric: Metric) -> VpTree {
        let items: Vec<usize> = (0..data.nrows()).collect();
        let data = data.clone();
        let root = build_node(&data, metric, items);
        VpTree { data, metric, root }
    }

    fn row(&self, i: usize) -> &[f64] {
        self.data.row(i).to_slice().expect("row-major data")
    }

    /// k nearest neighbors of `query`, optionally excluding one item (used
    /// when the query is itself a dataset row). Results are sorted by
    /// (distance, index).
    pub fn knn(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut heap: BinaryHeap<HeapItem> = BinaryHeap::with_capacity(k + 1);
        if let Some(root) = &self.root {
            self.search(root, query, k, exclude, &mut heap);
        }
        let mut out: Vec<(usize, f64)> = heap.into_iter().map(|h| (h.index, h.dist)).collect();
        out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    fn search(
        &self,
        node: &Node,
        query: &[f64],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<HeapItem>,
    ) {
        let d = self.metric.distance(query, self.row(node.vantage));
        if Some(node.vantage) != exclude {
            let cand = HeapItem {
                dist: d,
                index: node.vantage,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if let Some(worst) = heap.peek() {
                if cand.cmp(worst) == Ordering::Less {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        let near_inside = d < node.threshold;
        let (first, second) = if near_inside {
            (&node.inside, &node.outside)
        } else {
            (&node.outside, &node.inside)
        };
        if let Some(child) = first {
            self.search(child, query, k, exclude, heap);
        }
        // Radius within which candidates can still improve the heap.
        let tau = if heap.len() < k {
            f64::INFINITY
        } else {
            heap.peek().map(|h| h.dist).unwrap_or(f64::INFINITY)
        };
        let crosses = if near_inside {
            // Outside ring reachable when d + tau >= threshold.
            d + tau >= node.threshold
        } else {
            // Inside ball reachable when d - tau <= threshold.
            d - tau <= node.threshold
        };
        if crosses {
            if let Some(child) = second {
                self.search(child, query, k, exclude, heap);
            }
        }
    }
}

fn build_node(data: &Array2<f64>, metric: Metric, items: Vec<usize>) -> Option<Box<Node>> {
    if items.is_empty() {
        return None;
    }
    let vantage = items[0];
    let rest = &items[1..];
    if rest.is_empty() {
        return Some(Box::new(Node {
            vantage,
            threshold: 0.0,
            inside: None,
            outside: None,
        }));
    }
    let vp_row: Vec<f64> = data.row(vantage).to_vec();
    let mut dists: Vec<(f64, usize)> = rest
        .iter()
        .map(|&j| {
            (
                metric.distance(&vp_row, data.row(j).to_slice().expect("row-major")),
                j,
            )
        })
        .collect();
    dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let half = dists.len() / 2;
    let threshold = dists[half].0;
    let inside: Vec<usize> = dists[..half].iter().map(|&(_, j)| j).collect();
    let outside: Vec<usize> = dists[half..].iter().map(|&(_, j)| j).collect();
    Some(Box::new(Node {
        vantage,
        threshold,
        inside: build_node(data, metric, inside),
        outside: build_node(data, metric, outside),
    }))
}
