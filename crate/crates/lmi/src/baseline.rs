//! Rebuild-strategy baselines: what happens to search cost when an index
//! absorbs an insert stream and is either never rebuilt or rebuilt from
//! scratch on a fixed schedule.
//!
//! [`run_lifecycle`] replays a stream against an initial build, fires the
//! policy's rebuilds, and probes the search cost at requested points. The
//! probes use exact ground truth over the index's contents *at that
//! moment*, so a measurement answers "what does a query cost right now at
//! this recall target", not "how good was the initial build".

use crate::costmodel::{measure_search_cost, SearchCost};
use crate::dataset::{Dataset, Vector};
use crate::index::{Index, IndexOptions, OpCost};
use crate::{Error, Result};

/// When to rebuild from scratch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RebuildPolicy {
    /// Build once, never again; the structure ages as the stream lands.
    Never,
    /// Every `interval` inserts, retire the index and build a fresh one
    /// over all objects seen so far (in insertion order).
    Naive { interval: usize },
}

/// A query workload plus the recall targets to price it at.
#[derive(Debug, Clone)]
pub struct SearchProbe {
    pub queries: Vec<Vector>,
    pub k: usize,
    pub target_recalls: Vec<f64>,
}

/// Search cost at one point of a lifecycle, per recall target.
#[derive(Debug, Clone)]
pub struct ScMeasurement {
    /// Stream inserts absorbed when this probe ran.
    pub inserts_done: usize,
    /// Objects in the index at that moment.
    pub object_count: usize,
    /// (target recall, measured cost), in the probe's target order.
    pub per_target: Vec<(f64, SearchCost)>,
}

/// One (re)build that the policy performed.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildEvent {
    /// Stream position: 0 is the initial build, i means "right after the
    /// i-th stream insert landed".
    pub at_inserts: usize,
    pub object_count: usize,
    pub cost: OpCost,
}

/// Everything a lifecycle run produces.
#[derive(Debug)]
pub struct LifecycleResult {
    pub measurements: Vec<ScMeasurement>,
    pub build_events: Vec<BuildEvent>,
    /// The index as the stream left it.
    pub index: Index,
}

/// Prices the probe workload against an index as it stands right now.
pub fn probe_search_cost(
    index: &Index,
    probe: &SearchProbe,
    inserts_done: usize,
) -> Result<ScMeasurement> {
    let truth = index.exact_neighbors(&probe.queries, probe.k)?;
    let mut per_target = Vec::with_capacity(probe.target_recalls.len());
    for &target in &probe.target_recalls {
        let sc = measure_search_cost(index, &probe.queries, &truth, probe.k, target)?;
        per_target.push((target, sc));
    }
    Ok(ScMeasurement { inserts_done, object_count: index.len(), per_target })
}

/// Builds over `initial`, replays `stream` under `policy`, and probes the
/// search cost after `probe_at` inserts (0 probes the fresh build).
/// Rebuilds run after the triggering insert has landed, over all current
/// objects in insertion order.
pub fn run_lifecycle(
    initial: &Dataset,
    stream: &[Vector],
    policy: RebuildPolicy,
    probe_at: &[usize],
    probe: &SearchProbe,
    target_bucket_size: usize,
    opts: IndexOptions,
) -> Result<LifecycleResult> {
    if let RebuildPolicy::Naive { interval } = policy {
        if interval == 0 {
            return Err(Error::InvalidArgument("rebuild interval must be >= 1".into()));
        }
    }
    if let Some(&bad) = probe_at.iter().find(|&&p| p > stream.len()) {
        return Err(Error::InvalidArgument(format!(
            "probe point {bad} lies beyond the {}-insert stream",
            stream.len()
        )));
    }
    if probe.k > initial.len() {
        return Err(Error::InvalidArgument(format!(
            "probe k = {} exceeds the initial build of {} objects",
            probe.k,
            initial.len()
        )));
    }
    let mut probes: Vec<usize> = probe_at.to_vec();
    probes.sort_unstable();
    probes.dedup();

    let mut index = Index::build_static(initial, target_bucket_size, opts.clone())?;
    let mut build_events =
        vec![BuildEvent { at_inserts: 0, object_count: index.len(), cost: index.build_cost() }];
    let mut measurements = Vec::with_capacity(probes.len());
    let mut next_probe = probes.iter().peekable();
    if next_probe.peek() == Some(&&0) {
        measurements.push(probe_search_cost(&index, probe, 0)?);
        next_probe.next();
    }

    let mut since_build = 0usize;
    for (i, v) in stream.iter().enumerate() {
        index.insert(v)?;
        since_build += 1;
        if let RebuildPolicy::Naive { interval } = policy {
            if since_build == interval {
                let snapshot = index.dataset_snapshot();
                index = Index::build_static(&snapshot, target_bucket_size, opts.clone())?;
                build_events.push(BuildEvent {
                    at_inserts: i + 1,
                    object_count: index.len(),
                    cost: index.build_cost(),
                });
                since_build = 0;
            }
        }
        if next_probe.peek() == Some(&&(i + 1)) {
            measurements.push(probe_search_cost(&index, probe, i + 1)?);
            next_probe.next();
        }
    }
    Ok(LifecycleResult { measurements, build_events, index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persist::index_to_bytes;
    use crate::synthetic::{cluster_shift_order, synthetic_blobs, BlobParams};

    fn probe(seed: u64, dim: usize, targets: &[f64]) -> SearchProbe {
        let (q, _) = synthetic_blobs(40, dim, 6, seed, BlobParams::default()).unwrap();
        SearchProbe { queries: q.vectors, k: 10, target_recalls: targets.to_vec() }
    }

    fn split(
        n: usize,
        dim: usize,
        clusters: usize,
        initial_len: usize,
        seed: u64,
    ) -> (Dataset, Vec<Vector>) {
        let (d, _) = synthetic_blobs(n, dim, clusters, seed, BlobParams::default()).unwrap();
        let mut initial = Dataset::new(dim);
        for v in d.vectors.iter().take(initial_len) {
            initial.push(v.clone()).unwrap();
        }
        (initial, d.vectors[initial_len..].to_vec())
    }

    #[test]
    fn never_policy_builds_exactly_once() {
        let (initial, stream) = split(2000, 8, 4, 1000, 41);
        let result = run_lifecycle(
            &initial,
            &stream,
            RebuildPolicy::Never,
            &[0, 500, 1000],
            &probe(141, 8, &[0.9]),
            250,
            IndexOptions { seed: 41, ..Default::default() },
        )
        .unwrap();
        assert_eq!(result.build_events.len(), 1);
        assert_eq!(result.build_events[0].at_inserts, 0);
        assert_eq!(result.index.len(), 2000);
        assert_eq!(result.measurements.len(), 3);
        result.index.check_consistency().unwrap();
    }

    #[test]
    fn naive_policy_rebuilds_on_schedule() {
        let (initial, stream) = split(3000, 8, 4, 500, 42);
        let result = run_lifecycle(
            &initial,
            &stream,
            RebuildPolicy::Naive { interval: 1000 },
            &[2500],
            &probe(142, 8, &[0.9]),
            500,
            IndexOptions { seed: 42, ..Default::default() },
        )
        .unwrap();
        let at: Vec<usize> = result.build_events.iter().map(|e| e.at_inserts).collect();
        assert_eq!(at, vec![0, 1000, 2000]);
        let sizes: Vec<usize> = result.build_events.iter().map(|e| e.object_count).collect();
        assert_eq!(sizes, vec![500, 1500, 2500]);
        // Rebuild cost scales with the objects it covers.
        assert!(result.build_events[2].cost.proxy > result.build_events[0].cost.proxy);
        // The last rebuild (2500 objects, target 500) shapes the final
        // index; the 500 inserts after it only fatten the buckets.
        assert_eq!(result.index.stats().leaf_count, 5);
        assert_eq!(result.index.len(), 3000);
        result.index.check_consistency().unwrap();
    }

    #[test]
    fn interval_one_equals_a_fresh_static_build_byte_for_byte() {
        let (d, _) = synthetic_blobs(350, 8, 3, 43, BlobParams::default()).unwrap();
        let mut initial = Dataset::new(8);
        for v in d.vectors.iter().take(300) {
            initial.push(v.clone()).unwrap();
        }
        let stream = d.vectors[300..].to_vec();
        let opts = IndexOptions { seed: 43, ..Default::default() };
        let result = run_lifecycle(
            &initial,
            &stream,
            RebuildPolicy::Naive { interval: 1 },
            &[],
            &probe(143, 8, &[0.9]),
            100,
            opts.clone(),
        )
        .unwrap();
        assert_eq!(result.build_events.len(), 1 + stream.len());
        let fresh = Index::build_static(&d, 100, opts).unwrap();
        assert_eq!(
            index_to_bytes(&result.index).unwrap(),
            index_to_bytes(&fresh).unwrap(),
            "rebuilding on every insert must converge to the fresh build"
        );
    }

    #[test]
    fn probes_fire_at_the_requested_points() {
        let (initial, stream) = split(1500, 8, 4, 1000, 44);
        let targets = [0.5, 0.9];
        let result = run_lifecycle(
            &initial,
            &stream,
            RebuildPolicy::Never,
            &[50, 0, 500, 50], // unordered with a duplicate
            &probe(144, 8, &targets),
            250,
            IndexOptions { seed: 44, ..Default::default() },
        )
        .unwrap();
        let done: Vec<usize> = result.measurements.iter().map(|m| m.inserts_done).collect();
        assert_eq!(done, vec![0, 50, 500]);
        for m in &result.measurements {
            assert_eq!(m.object_count, 1000 + m.inserts_done);
            assert_eq!(m.per_target.len(), 2);
            for (i, (target, sc)) in m.per_target.iter().enumerate() {
                assert_eq!(*target, targets[i]);
                assert!(sc.mean_recall >= *target);
            }
            // A looser target can never cost more buckets.
            assert!(m.per_target[0].1.bucket_budget <= m.per_target[1].1.bucket_budget);
        }
    }

    #[test]
    fn cluster_shift_stream_degrades_an_unmaintained_index() {
        // Objects arrive cluster by cluster; the initial build only ever
        // saw the first clusters. Without maintenance, later inserts crowd
        // into whichever leaves the old router predicts, so reaching the
        // same recall must scan more and more objects.
        let (d, labels) = synthetic_blobs(6000, 16, 6, 45, BlobParams::default()).unwrap();
        let order = cluster_shift_order(&labels);
        let mut initial = Dataset::new(16);
        for &i in order.iter().take(2000) {
            initial.push(d.vectors[i].clone()).unwrap();
        }
        let stream: Vec<Vector> =
            order[2000..].iter().map(|&i| d.vectors[i].clone()).collect();
        let result = run_lifecycle(
            &initial,
            &stream,
            RebuildPolicy::Never,
            &[0, 1000, 2000, 3000, 4000],
            &probe(145, 16, &[0.9]),
            250,
            IndexOptions { seed: 45, ..Default::default() },
        )
        .unwrap();
        let sc: Vec<f64> =
            result.measurements.iter().map(|m| m.per_target[0].1.mean_objects_scanned).collect();
        assert!(
            sc.last().unwrap() > sc.first().unwrap(),
            "search cost must grow over the shift stream, got {sc:?}"
        );
        let first_half = sc[0] + sc[1];
        let second_half = sc[3] + sc[4];
        assert!(second_half > first_half, "no degradation trend in {sc:?}");
    }

    #[test]
    fn lifecycle_validates_its_arguments() {
        let (initial, stream) = split(200, 8, 2, 100, 46);
        let p = probe(146, 8, &[0.9]);
        let opts = IndexOptions::default();
        assert!(run_lifecycle(
            &initial,
            &stream,
            RebuildPolicy::Naive { interval: 0 },
            &[],
            &p,
            50,
            opts.clone()
        )
        .is_err());
        assert!(run_lifecycle(
            &initial,
            &stream,
            RebuildPolicy::Never,
            &[5000],
            &p,
            50,
            opts.clone()
        )
        .is_err());
        let tiny = {
            let mut t = Dataset::new(8);
            for v in initial.vectors.iter().take(5) {
                t.push(v.clone()).unwrap();
            }
            t
        };
        assert!(run_lifecycle(&tiny, &stream, RebuildPolicy::Never, &[], &p, 50, opts).is_err());
    }
}
