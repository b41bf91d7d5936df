//! Seeded synthetic datasets: isotropic Gaussian blobs with distinct means.
//!
//! The generator is fully determined by its arguments — same seed, same
//! bytes — which is what makes benchmark CSVs reproducible end to end.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Dataset, Vector};
use crate::{Error, Result};

/// Shape knobs for blob generation. Defaults give clearly separated blobs
/// (centers uniform in ±10 per axis, unit spread); raising `spread` blurs
/// cluster boundaries, which makes nearest-neighbor workloads harder.
#[derive(Debug, Clone, Copy)]
pub struct BlobParams {
    /// Cluster centers are drawn uniformly from [-center_box, center_box]
    /// per axis.
    pub center_box: f32,
    /// Standard deviation of each blob around its center.
    pub spread: f32,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self { center_box: 10.0, spread: 1.0 }
    }
}

/// Draws `n` points of `dim` dimensions from `n_clusters` Gaussian blobs.
/// Returns the dataset (ids 0..n) plus each point's generating cluster.
pub fn synthetic_blobs(
    n: usize,
    dim: usize,
    n_clusters: usize,
    seed: u64,
    params: BlobParams,
) -> Result<(Dataset, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("dim must be >= 1".into()));
    }
    if n_clusters == 0 {
        return Err(Error::InvalidArgument("n_clusters must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f32>> = (0..n_clusters)
        .map(|_| (0..dim).map(|_| rng.gen_range(-params.center_box..=params.center_box)).collect())
        .collect();
    let noise = Normal::new(0.0f32, params.spread)
        .map_err(|e| Error::InvalidArgument(format!("bad spread: {e}")))?;
    let mut dataset = Dataset::new(dim);
    let mut assignment = Vec::with_capacity(n);
    for id in 0..n {
        let cluster = rng.gen_range(0..n_clusters);
        let comps: Vec<f32> =
            centers[cluster].iter().map(|c| c + noise.sample(&mut rng)).collect();
        dataset.push(Vector::new(id as u64, comps))?;
        assignment.push(cluster);
    }
    Ok((dataset, assignment))
}

/// Blob dataset with default shape parameters.
pub fn synthetic_dataset(n: usize, dim: usize, n_clusters: usize, seed: u64) -> Result<Dataset> {
    Ok(synthetic_blobs(n, dim, n_clusters, seed, BlobParams::default())?.0)
}

/// Index order that groups points by generating cluster (stable within a
/// cluster). Streaming inserts in this order simulates distribution shift:
/// an index built on a prefix has never seen the clusters that arrive later.
pub fn cluster_shift_order(assignment: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..assignment.len()).collect();
    order.sort_by_key(|&i| (assignment[i], i));
    order
}
