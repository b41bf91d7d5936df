//! Vectors, datasets, Euclidean distance, brute-force k-NN and recall.
//!
//! Components are stored as f32 (file formats and memory favor it); all
//! distance arithmetic widens to f64 before accumulating so that sums over
//! long vectors don't drift. Every ranking in the crate breaks distance ties
//! by ascending object id, which makes results reproducible bit-for-bit.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::{Error, Result};

/// Distance function tag. Only the Euclidean metric is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
}

/// One object: an id unique within its dataset plus its components.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    pub id: u64,
    pub components: Vec<f32>,
}

impl Vector {
    pub fn new(id: u64, components: Vec<f32>) -> Self {
        Self { id, components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }
}

/// A set of equally-dimensioned vectors.
///
/// Invariants: every vector has `dimension` components and ids are unique.
/// `push` enforces the dimension; id uniqueness is enforced where vectors
/// enter an index (the store keeps an id map anyway). A dataset read from an
/// empty file has `dimension == 0`, meaning "undefined until the first
/// vector".
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub dimension: usize,
    pub metric: Metric,
    pub vectors: Vec<Vector>,
}

impl Dataset {
    pub fn new(dimension: usize) -> Self {
        Self { dimension, metric: Metric::Euclidean, vectors: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Appends a vector, fixing the dimension on first push if it was
    /// undefined.
    pub fn push(&mut self, v: Vector) -> Result<()> {
        if self.dimension == 0 && self.vectors.is_empty() {
            self.dimension = v.dim();
        }
        if v.dim() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, found: v.dim() });
        }
        self.vectors.push(v);
        Ok(())
    }
}

/// Exact k-NN answers for a query batch; row q holds the ids of query q's
/// k nearest objects, ascending by (distance, id).
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub k: usize,
    pub per_query: Vec<Vec<u64>>,
}

/// Euclidean distance with a dimension check. f64 accumulation.
pub fn euclidean_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    Ok(distance_unchecked(a, b))
}

/// Hot-path distance; callers guarantee equal dimensions.
#[inline]
pub(crate) fn distance_unchecked(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        let d = f64::from(a[i]) - f64::from(b[i]);
        acc += d * d;
    }
    acc.sqrt()
}

/// k smallest (distance, id) pairs from an id/components stream, ascending
/// by (distance, id). Single pass with a bounded max-heap.
pub(crate) fn knn_scan<'a>(
    pairs: impl Iterator<Item = (u64, &'a [f32])>,
    query: &[f32],
    k: usize,
) -> Vec<(u64, f64)> {
    // Max-heap keyed by (distance, id) so the worst kept candidate is on top.
    #[derive(PartialEq)]
    struct Cand(f64, u64);
    impl Eq for Cand {}
    impl PartialOrd for Cand {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Cand {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
        }
    }

    let mut heap = std::collections::BinaryHeap::with_capacity(k + 1);
    for (id, comps) in pairs {
        let d = distance_unchecked(comps, query);
        if heap.len() < k {
            heap.push(Cand(d, id));
        } else if let Some(worst) = heap.peek() {
            if Cand(d, id) < *worst {
                heap.pop();
                heap.push(Cand(d, id));
            }
        }
    }
    let mut out: Vec<(u64, f64)> = heap.into_iter().map(|Cand(d, id)| (id, d)).collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out
}

/// Brute-force exact k-NN over a dataset: ascending (distance, id), ties by
/// lower id. Errors when k is 0 or exceeds the dataset size.
pub fn knn_bruteforce(dataset: &Dataset, query: &[f32], k: usize) -> Result<Vec<(u64, f64)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if k > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {} exceeds dataset size {}",
            k,
            dataset.len()
        )));
    }
    if query.len() != dataset.dimension {
        return Err(Error::DimensionMismatch { expected: dataset.dimension, found: query.len() });
    }
    Ok(knn_scan(dataset.vectors.iter().map(|v| (v.id, v.components.as_slice())), query, k))
}

/// Exact ground truth for a query batch, queries fanned out across threads;
/// the output order follows the input order, so results are deterministic.
pub fn ground_truth(dataset: &Dataset, queries: &[Vector], k: usize) -> Result<GroundTruth> {
    let per_query = queries
        .par_iter()
        .map(|q| {
            knn_bruteforce(dataset, &q.components, k)
                .map(|nn| nn.into_iter().map(|(id, _)| id).collect())
        })
        .collect::<Result<Vec<Vec<u64>>>>()?;
    Ok(GroundTruth { k, per_query })
}

/// Fraction of the k true neighbors present among the returned ids.
pub fn recall(returned: &[u64], truth: &[u64], k: usize) -> f64 {
    debug_assert_eq!(truth.len(), k);
    if k == 0 {
        return 0.0;
    }
    let returned: HashSet<u64> = returned.iter().copied().collect();
    let hits = truth.iter().filter(|id| returned.contains(id)).count();
    hits as f64 / k as f64
}
