//! k-means clustering: k-means++ seeding plus Lloyd iterations.
//!
//! Everything is deterministic for a fixed seed. Assignment breaks
//! equal-distance ties toward the lower centroid index; clusters that come
//! out of an update empty are re-seeded with the points currently farthest
//! from their own centroid. Distance evaluations are counted so callers can
//! charge clustering work to their build-cost budgets.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Default Lloyd iteration cap.
pub const DEFAULT_MAX_ITERS: usize = 50;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// Cluster label per input point; at return each point's label is its
    /// nearest centroid (ties toward the lower index).
    pub labels: Vec<usize>,
    /// k centroids of input dimension.
    pub centroids: Vec<Vec<f32>>,
    /// Lloyd rounds actually run (update + reassign).
    pub iterations: usize,
    /// Sum of squared point-to-centroid distances after the initial
    /// assignment and after each Lloyd round. Nonincreasing.
    pub inertia_per_iter: Vec<f64>,
    /// Distance evaluations performed (seeding + assignments).
    pub dist_comps: u64,
    /// Whether labels stopped changing before the iteration cap.
    pub converged: bool,
}

#[inline]
fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        let d = f64::from(a[i]) - f64::from(b[i]);
        acc += d * d;
    }
    acc
}

/// Assigns each point to its nearest centroid. Returns (labels, inertia,
/// per-point squared distance to the chosen centroid).
fn assign(
    points: &[&[f32]],
    centroids: &[Vec<f32>],
    dist_comps: &mut u64,
) -> (Vec<usize>, f64, Vec<f64>) {
    let mut labels = Vec::with_capacity(points.len());
    let mut dmin = Vec::with_capacity(points.len());
    let mut inertia = 0.0f64;
    for p in points {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (j, c) in centroids.iter().enumerate() {
            let d = sq_dist(p, c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        *dist_comps += centroids.len() as u64;
        labels.push(best);
        dmin.push(best_d);
        inertia += best_d;
    }
    (labels, inertia, dmin)
}

fn update_centroids(points: &[&[f32]], labels: &[usize], centroids: &mut [Vec<f32>]) {
    let dim = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, &x) in sums[l].iter_mut().zip(*p) {
            *s += f64::from(x);
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            for (c, s) in centroids[j].iter_mut().zip(&sums[j]) {
                *c = (*s / counts[j] as f64) as f32;
            }
        }
        // Empty clusters keep their centroid here; the repair pass below
        // re-seeds them.
    }
}

/// Gives every empty cluster the point currently farthest from its own
/// centroid (largest assignment distance, ties toward the lower point
/// index). Donor clusters emptied by the theft are handled in later passes.
fn repair_empty_clusters(
    points: &[&[f32]],
    labels: &mut [usize],
    centroids: &mut [Vec<f32>],
    dmin: &[f64],
) {
    let k = centroids.len();
    let mut candidates: Vec<usize> = (0..points.len()).collect();
    candidates.sort_by(|&a, &b| dmin[b].total_cmp(&dmin[a]).then(a.cmp(&b)));
    let mut next_candidate = 0usize;
    for _ in 0..=k {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let empties: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        if empties.is_empty() {
            break;
        }
        for j in empties {
            if next_candidate >= candidates.len() {
                return;
            }
            let p = candidates[next_candidate];
            next_candidate += 1;
            centroids[j] = points[p].to_vec();
            labels[p] = j;
        }
    }
}

/// k-means++ seeding: first center uniform, then D²-weighted draws.
fn seed_centroids(
    points: &[&[f32]],
    k: usize,
    rng: &mut ChaCha8Rng,
    dist_comps: &mut u64,
) -> Vec<Vec<f32>> {
    let n = points.len();
    let first = rng.gen_range(0..n);
    let mut centroids: Vec<Vec<f32>> = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    *dist_comps += n as u64;
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let chosen = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let r = rng.gen::<f64>() * total;
            let mut acc = 0.0f64;
            let mut idx = n - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if r < acc {
                    idx = i;
                    break;
                }
            }
            idx
        };
        let c = points[chosen].to_vec();
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, &c);
            if d < d2[i] {
                d2[i] = d;
            }
        }
        *dist_comps += n as u64;
        centroids.push(c);
    }
    centroids
}

/// Clusters `points` into `k` groups. Errors when there are no points, k is
/// zero, or k exceeds the point count.
pub fn kmeans(points: &[&[f32]], k: usize, max_iters: usize, seed: u64) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(Error::KMeans("no points to cluster".into()));
    }
    if k == 0 {
        return Err(Error::KMeans("k must be >= 1".into()));
    }
    if k > points.len() {
        return Err(Error::KMeans(format!("k = {} exceeds point count {}", k, points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dist_comps = 0u64;
    let mut centroids = seed_centroids(points, k, &mut rng, &mut dist_comps);

    let (mut labels, inertia, mut dmin) = assign(points, &centroids, &mut dist_comps);
    let mut inertia_per_iter = vec![inertia];
    let mut iterations = 0usize;
    let mut converged = false;
    for _ in 0..max_iters {
        update_centroids(points, &labels, &mut centroids);
        repair_empty_clusters(points, &mut labels, &mut centroids, &dmin);
        let (new_labels, inertia, new_dmin) = assign(points, &centroids, &mut dist_comps);
        iterations += 1;
        inertia_per_iter.push(inertia);
        let same = new_labels == labels;
        labels = new_labels;
        dmin = new_dmin;
        if same {
            converged = true;
            break;
        }
    }
    Ok(KMeansResult { labels, centroids, iterations, inertia_per_iter, dist_comps, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{synthetic_blobs, BlobParams};

    fn as_refs(data: &[Vec<f32>]) -> Vec<&[f32]> {
        data.iter().map(|v| v.as_slice()).collect()
    }

    #[test]
    fn k1_centroid_is_the_mean() {
        // Hand oracle: mean of 0, 2, 4 is 2; inertia 4 + 0 + 4 = 8.
        let pts = vec![vec![0.0f32], vec![2.0], vec![4.0]];
        let r = kmeans(&as_refs(&pts), 1, DEFAULT_MAX_ITERS, 0).unwrap();
        assert_eq!(r.centroids, vec![vec![2.0f32]]);
        assert_eq!(r.labels, vec![0, 0, 0]);
        assert_eq!(*r.inertia_per_iter.last().unwrap(), 8.0);
        assert!(r.converged);
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let pts = vec![vec![0.0f32, 0.0], vec![10.0, 0.0], vec![0.0, 10.0], vec![10.0, 10.0]];
        let r = kmeans(&as_refs(&pts), 4, DEFAULT_MAX_ITERS, 1).unwrap();
        let mut sorted = r.labels.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert_eq!(*r.inertia_per_iter.last().unwrap(), 0.0);
    }

    #[test]
    fn recovers_two_separated_blobs() {
        let (d, truth) = synthetic_blobs(400, 8, 2, 11, BlobParams::default()).unwrap();
        let pts: Vec<&[f32]> = d.vectors.iter().map(|v| v.components.as_slice()).collect();
        let r = kmeans(&pts, 2, DEFAULT_MAX_ITERS, 3).unwrap();
        // Majority-vote mapping from k-means label to generating cluster.
        let mut votes = [[0usize; 2]; 2];
        for (km, gen) in r.labels.iter().zip(&truth) {
            votes[*km][*gen] += 1;
        }
        let map = [
            if votes[0][0] >= votes[0][1] { 0 } else { 1 },
            if votes[1][0] >= votes[1][1] { 0 } else { 1 },
        ];
        let correct = r
            .labels
            .iter()
            .zip(&truth)
            .filter(|(km, gen)| map[**km] == **gen)
            .count();
        assert!(correct as f64 / truth.len() as f64 >= 0.95, "only {correct}/400 recovered");
    }

    #[test]
    fn labels_are_nearest_centroid_at_return() {
        let (d, _) = synthetic_blobs(300, 4, 3, 2, BlobParams::default()).unwrap();
        let pts: Vec<&[f32]> = d.vectors.iter().map(|v| v.components.as_slice()).collect();
        let r = kmeans(&pts, 5, DEFAULT_MAX_ITERS, 9).unwrap();
        for (p, &l) in pts.iter().zip(&r.labels) {
            let dists: Vec<f64> = r.centroids.iter().map(|c| sq_dist(p, c)).collect();
            let best = dists
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
                .unwrap()
                .0;
            assert_eq!(l, best);
        }
    }

    #[test]
    fn inertia_never_increases() {
        for seed in 0..10u64 {
            let (d, _) = synthetic_blobs(500, 6, 4, seed, BlobParams { center_box: 5.0, spread: 3.0 })
                .unwrap();
            let pts: Vec<&[f32]> = d.vectors.iter().map(|v| v.components.as_slice()).collect();
            let r = kmeans(&pts, 6, DEFAULT_MAX_ITERS, seed ^ 0xabc).unwrap();
            for w in r.inertia_per_iter.windows(2) {
                // f32 centroid rounding can wiggle the objective below float
                // noise; allow a vanishing relative slack.
                assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-9, "{:?}", r.inertia_per_iter);
            }
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (d, _) = synthetic_blobs(256, 8, 4, 21, BlobParams::default()).unwrap();
        let pts: Vec<&[f32]> = d.vectors.iter().map(|v| v.components.as_slice()).collect();
        let a = kmeans(&pts, 4, DEFAULT_MAX_ITERS, 5).unwrap();
        let b = kmeans(&pts, 4, DEFAULT_MAX_ITERS, 5).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.dist_comps, b.dist_comps);
    }

    #[test]
    fn argument_errors() {
        let pts = vec![vec![0.0f32], vec![1.0]];
        assert!(kmeans(&as_refs(&pts), 0, 50, 0).is_err());
        assert!(kmeans(&as_refs(&pts), 3, 50, 0).is_err());
        assert!(kmeans(&[], 1, 50, 0).is_err());
    }

    #[test]
    fn duplicate_points_do_not_stall() {
        let pts = vec![vec![1.0f32, 1.0]; 6];
        let r = kmeans(&as_refs(&pts), 3, DEFAULT_MAX_ITERS, 4).unwrap();
        assert_eq!(r.labels.len(), 6);
        assert_eq!(*r.inertia_per_iter.last().unwrap(), 0.0);
    }
}
