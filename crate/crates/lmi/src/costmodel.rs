//! Amortized cost accounting: how expensive is a query once rebuild work
//! is spread over the queries that benefit from it?
//!
//! The core quantity is
//!
//! ```text
//! AC = SC + BC / (RI * QF)
//! ```
//!
//! where SC is the (mean) per-query search cost, BC the build cost, RI the
//! number of inserts between rebuilds, and QF the query frequency (queries
//! per insert). With RI = 1000 and QF = 100, a build is amortized over
//! 100 000 queries, so even an expensive rebuild adds only BC / 100 000 to
//! each query.
//!
//! Costs are reported in two currencies throughout: a deterministic proxy
//! (one unit = one full-dimension distance evaluation, see the crate docs)
//! and wall-clock seconds. The proxy makes runs comparable and testable;
//! the seconds keep the numbers honest on real hardware.

use std::time::Instant;

use rayon::prelude::*;

use crate::dataset::{recall, GroundTruth, Vector};
use crate::index::Index;
use crate::{Error, Result};

/// One benchmarking scenario: how often queries arrive relative to inserts,
/// and what recall each query must reach.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostScenario {
    /// Queries per inserted object.
    pub qf: f64,
    /// Required mean recall, in (0, 1].
    pub tr: f64,
}

impl CostScenario {
    pub fn new(qf: f64, tr: f64) -> Result<Self> {
        if !(qf.is_finite() && qf > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "querying frequency must be positive and finite, got {qf}"
            )));
        }
        if !(tr > 0.0 && tr <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target recall must be in (0, 1], got {tr}"
            )));
        }
        Ok(Self { qf, tr })
    }
}

/// Amortized per-query cost `sc + bc / (ri * qf)`. All arguments must be
/// finite, `sc`/`bc` nonnegative, `ri`/`qf` positive.
pub fn amortized_cost(sc: f64, bc: f64, ri: f64, qf: f64) -> Result<f64> {
    for (name, v) in [("sc", sc), ("bc", bc), ("ri", ri), ("qf", qf)] {
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!("{name} must be finite, got {v}")));
        }
    }
    if sc < 0.0 || bc < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "costs must be nonnegative, got sc = {sc}, bc = {bc}"
        )));
    }
    if ri <= 0.0 || qf <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "ri and qf must be positive, got ri = {ri}, qf = {qf}"
        )));
    }
    Ok(sc + bc / (ri * qf))
}

/// Search cost of an index at a recall target, from
/// [`measure_search_cost`].
#[derive(Debug, Clone, PartialEq)]
pub struct SearchCost {
    /// Smallest bucket budget whose mean recall reaches the target.
    pub bucket_budget: usize,
    /// Mean recall at that budget (>= the target).
    pub mean_recall: f64,
    /// Mean objects scanned per query at that budget — the SC proxy.
    pub mean_objects_scanned: f64,
    /// Mean wall-clock seconds per query at that budget.
    pub mean_seconds: f64,
}

/// Mean recall of the query batch at one budget. Queries fan out across
/// threads; the sum is reduced in input order so the result does not
/// depend on scheduling.
fn mean_recall_at(
    index: &Index,
    queries: &[Vector],
    truth: &GroundTruth,
    k: usize,
    budget: usize,
) -> Result<f64> {
    let recalls: Vec<f64> = queries
        .par_iter()
        .zip(truth.per_query.par_iter())
        .map(|(q, t)| {
            let r = index.search(&q.components, k, budget)?;
            let ids: Vec<u64> = r.neighbors.iter().map(|(id, _)| *id).collect();
            Ok(recall(&ids, t, k))
        })
        .collect::<Result<_>>()?;
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Finds the smallest bucket budget whose mean recall over the query batch
/// reaches `target_recall`, then reports the cost of searching at that
/// budget.
///
/// Leaves are visited in a budget-independent order, so per-query (and thus
/// mean) recall is monotone in the budget and a binary search over budgets
/// is exact. If even scanning every leaf misses the target — possible only
/// when `truth` was not computed over this index's objects — the error
/// reports the best achievable recall.
pub fn measure_search_cost(
    index: &Index,
    queries: &[Vector],
    truth: &GroundTruth,
    k: usize,
    target_recall: f64,
) -> Result<SearchCost> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("query batch is empty".into()));
    }
    if queries.len() != truth.per_query.len() || truth.k != k {
        return Err(Error::InvalidArgument(format!(
            "ground truth shape ({} rows, k = {}) does not match {} queries with k = {}",
            truth.per_query.len(),
            truth.k,
            queries.len(),
            k
        )));
    }
    if !(target_recall > 0.0 && target_recall <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target recall must be in (0, 1], got {target_recall}"
        )));
    }
    let leaf_count = index.leaves().len();
    let full = mean_recall_at(index, queries, truth, k, leaf_count)?;
    if full < target_recall {
        return Err(Error::RecallUnreachable { target: target_recall, achieved: full });
    }
    let (mut lo, mut hi) = (1usize, leaf_count);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if mean_recall_at(index, queries, truth, k, mid)? >= target_recall {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let budget = lo;

    let started = Instant::now();
    let outcomes: Vec<(f64, u64)> = queries
        .par_iter()
        .zip(truth.per_query.par_iter())
        .map(|(q, t)| {
            let r = index.search(&q.components, k, budget)?;
            let ids: Vec<u64> = r.neighbors.iter().map(|(id, _)| *id).collect();
            Ok((recall(&ids, t, k), r.objects_scanned))
        })
        .collect::<Result<_>>()?;
    let seconds = started.elapsed().as_secs_f64();
    let n = outcomes.len() as f64;
    Ok(SearchCost {
        bucket_budget: budget,
        mean_recall: outcomes.iter().map(|(r, _)| r).sum::<f64>() / n,
        mean_objects_scanned: outcomes.iter().map(|(_, s)| *s as f64).sum::<f64>() / n,
        mean_seconds: seconds / n,
    })
}

/// Piecewise-linear search-cost curve over inserts since the last build:
/// knot `(t, sc)` says "after t inserts, a query costs sc". Between knots
/// the curve interpolates linearly; beyond the last knot it stays flat.
#[derive(Debug, Clone, PartialEq)]
pub struct DeteriorationCurve {
    knots: Vec<(u64, f64)>,
}

impl DeteriorationCurve {
    /// Knots must start at t = 0, be strictly increasing in t, and carry
    /// finite nonnegative costs.
    pub fn new(knots: Vec<(u64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidArgument("curve needs at least one knot".into()));
        }
        if knots[0].0 != 0 {
            return Err(Error::InvalidArgument(format!(
                "first knot must sit at t = 0, got t = {}",
                knots[0].0
            )));
        }
        for w in knots.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidArgument(format!(
                    "knot times must strictly increase, got {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(t, sc)) = knots.iter().find(|(_, sc)| !(sc.is_finite() && *sc >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "cost at t = {t} must be finite and nonnegative, got {sc}"
            )));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(u64, f64)] {
        &self.knots
    }

    /// Curve value at `t`, clamped to the first/last knot outside the range.
    pub fn value_at(&self, t: f64) -> f64 {
        let first = self.knots[0];
        if t <= first.0 as f64 {
            return first.1;
        }
        for w in self.knots.windows(2) {
            let (t0, v0) = (w[0].0 as f64, w[0].1);
            let (t1, v1) = (w[1].0 as f64, w[1].1);
            if t <= t1 {
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        self.knots.last().unwrap().1
    }

    /// Exact integral of the clamped curve over [0, x] (trapezoids per
    /// segment, flat tail beyond the last knot).
    fn integral_to(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        let (mut prev_t, mut prev_v) = (0.0f64, self.knots[0].1);
        for &(t, v) in &self.knots[1..] {
            let t = t as f64;
            if x <= t {
                let vx = prev_v + (v - prev_v) * (x - prev_t) / (t - prev_t);
                return acc + (x - prev_t) * (prev_v + vx) / 2.0;
            }
            acc += (t - prev_t) * (prev_v + v) / 2.0;
            (prev_t, prev_v) = (t, v);
        }
        acc + (x - prev_t) * prev_v
    }

    /// Mean search cost over one rebuild interval: `(1/ri) * ∫₀^ri SC(t) dt`.
    pub fn mean_over(&self, ri: f64) -> Result<f64> {
        if !(ri.is_finite() && ri > 0.0) {
            return Err(Error::InvalidArgument(format!("ri must be positive, got {ri}")));
        }
        Ok(self.integral_to(ri) / ri)
    }
}

/// One candidate interval in [`optimal_rebuild_interval`]'s scan.
#[derive(Debug, Clone, PartialEq)]
pub struct AcRow {
    pub ri: u64,
    /// Mean SC over one interval of this length.
    pub mean_sc: f64,
    /// Build cost amortized per query: `bc / (ri * qf)`.
    pub build_share: f64,
    pub ac: f64,
}

/// Scans candidate rebuild intervals and returns the one minimizing the
/// amortized cost, together with the whole table. Candidates are
/// deduplicated and scanned ascending; exact ties keep the smaller
/// interval.
pub fn optimal_rebuild_interval(
    curve: &DeteriorationCurve,
    build_cost: f64,
    qf: f64,
    candidates: &[u64],
) -> Result<(u64, Vec<AcRow>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate intervals".into()));
    }
    let mut cands: Vec<u64> = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    if cands[0] == 0 {
        return Err(Error::InvalidArgument("candidate intervals must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(cands.len());
    let mut best: Option<(u64, f64)> = None;
    for ri in cands {
        let mean_sc = curve.mean_over(ri as f64)?;
        let ac = amortized_cost(mean_sc, build_cost, ri as f64, qf)?;
        rows.push(AcRow { ri, mean_sc, build_share: build_cost / (ri as f64 * qf), ac });
        if best.is_none_or(|(_, b)| ac < b) {
            best = Some((ri, ac));
        }
    }
    Ok((best.unwrap().0, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::IndexOptions;
    use crate::synthetic::{synthetic_blobs, BlobParams};
    use proptest::prelude::*;

    #[test]
    fn amortized_cost_worked_example() {
        // 1000 inserts per rebuild at 100 queries per insert spread the
        // build over 100 000 queries.
        let (sc, bc) = (2.0, 300_000.0);
        let ac = amortized_cost(sc, bc, 1000.0, 100.0).unwrap();
        assert_eq!(ac, sc + bc / (1000.0 * 100.0));
        assert_eq!(ac, 5.0);
        assert_eq!(bc / (1000.0 * 100.0), bc / 100_000.0);
    }

    #[test]
    fn scenario_validation() {
        assert!(CostScenario::new(100.0, 0.9).is_ok());
        assert!(CostScenario::new(0.0, 0.9).is_err());
        assert!(CostScenario::new(-1.0, 0.9).is_err());
        assert!(CostScenario::new(f64::INFINITY, 0.9).is_err());
        assert!(CostScenario::new(1.0, 0.0).is_err());
        assert!(CostScenario::new(1.0, 1.1).is_err());
        assert!(CostScenario::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn amortized_cost_rejects_degenerate_inputs() {
        assert!(amortized_cost(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(amortized_cost(1.0, 1.0, 1.0, 0.0).is_err());
        assert!(amortized_cost(-1.0, 1.0, 1.0, 1.0).is_err());
        assert!(amortized_cost(1.0, -1.0, 1.0, 1.0).is_err());
        assert!(amortized_cost(f64::NAN, 1.0, 1.0, 1.0).is_err());
        assert!(amortized_cost(1.0, 1.0, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn curve_trapezoid_means_are_exact() {
        let c = DeteriorationCurve::new(vec![(0, 10.0), (100, 20.0)]).unwrap();
        assert_eq!(c.mean_over(100.0).unwrap(), 15.0);
        assert_eq!(c.mean_over(50.0).unwrap(), 12.5);
        // Flat tail beyond the last knot: 100 units at mean 15, then 100
        // units at 20.
        assert_eq!(c.mean_over(200.0).unwrap(), 17.5);
        assert_eq!(c.value_at(50.0), 15.0);
        assert_eq!(c.value_at(1e9), 20.0);
        assert_eq!(c.value_at(-3.0), 10.0);
    }

    #[test]
    fn single_knot_curve_is_constant() {
        let c = DeteriorationCurve::new(vec![(0, 7.0)]).unwrap();
        assert_eq!(c.mean_over(1.0).unwrap(), 7.0);
        assert_eq!(c.mean_over(12345.0).unwrap(), 7.0);
        assert_eq!(c.value_at(42.0), 7.0);
    }

    #[test]
    fn curve_rejects_bad_knots() {
        assert!(DeteriorationCurve::new(vec![]).is_err());
        assert!(DeteriorationCurve::new(vec![(5, 1.0)]).is_err());
        assert!(DeteriorationCurve::new(vec![(0, 1.0), (0, 2.0)]).is_err());
        assert!(DeteriorationCurve::new(vec![(0, 1.0), (10, -2.0)]).is_err());
        assert!(DeteriorationCurve::new(vec![(0, f64::NAN)]).is_err());
        let c = DeteriorationCurve::new(vec![(0, 1.0)]).unwrap();
        assert!(c.mean_over(0.0).is_err());
    }

    #[test]
    fn grid_minimum_tracks_the_closed_form_for_linear_deterioration() {
        // SC(t) = a + b t gives mean SC = a + b ri / 2 and the optimum
        // ri* = sqrt(2 bc / (b qf)).
        let (a, b, bc, qf) = (5.0, 0.01, 10_000.0, 10.0);
        let horizon = 2000u64;
        let c = DeteriorationCurve::new(vec![(0, a), (horizon, a + b * horizon as f64)]).unwrap();
        let candidates: Vec<u64> = (1..=1000).collect();
        let (best, rows) = optimal_rebuild_interval(&c, bc, qf, &candidates).unwrap();
        let expect = (2.0 * bc / (b * qf)).sqrt();
        assert!(
            (best as f64 - expect).abs() <= 1.0,
            "grid best {best} vs closed form {expect}"
        );
        // The table reproduces the formula row by row.
        for row in &rows {
            assert_eq!(row.ac, row.mean_sc + bc / (row.ri as f64 * qf));
        }
    }

    #[test]
    fn exact_ties_prefer_the_smaller_interval() {
        // Constant curve and zero build cost: every candidate has the same
        // cost.
        let c = DeteriorationCurve::new(vec![(0, 3.0)]).unwrap();
        let (best, rows) = optimal_rebuild_interval(&c, 0.0, 5.0, &[40, 10, 20, 10]).unwrap();
        assert_eq!(best, 10);
        assert_eq!(rows.len(), 3, "duplicates are dropped");
        assert!(optimal_rebuild_interval(&c, 0.0, 5.0, &[]).is_err());
        assert!(optimal_rebuild_interval(&c, 0.0, 5.0, &[0, 5]).is_err());
    }

    fn probe_setup(seed: u64) -> (Index, Vec<Vector>, GroundTruth) {
        let (d, _) = synthetic_blobs(3000, 16, 5, seed, BlobParams::default()).unwrap();
        let idx =
            Index::build_static(&d, 300, IndexOptions { seed, ..Default::default() }).unwrap();
        let (q, _) = synthetic_blobs(40, 16, 5, seed ^ 0xabcd, BlobParams::default()).unwrap();
        let truth = idx.exact_neighbors(&q.vectors, 10).unwrap();
        (idx, q.vectors, truth)
    }

    #[test]
    fn measured_budget_is_minimal() {
        let (idx, queries, truth) = probe_setup(21);
        for target in [0.5, 0.9] {
            let sc = measure_search_cost(&idx, &queries, &truth, 10, target).unwrap();
            assert!(sc.mean_recall >= target);
            assert!(sc.mean_objects_scanned > 0.0);
            if sc.bucket_budget > 1 {
                let below = mean_recall_at(&idx, &queries, &truth, 10, sc.bucket_budget - 1)
                    .unwrap();
                assert!(
                    below < target,
                    "budget {} is not minimal for target {target}",
                    sc.bucket_budget
                );
            }
        }
    }

    #[test]
    fn full_recall_is_reachable_and_exact() {
        let (idx, queries, truth) = probe_setup(22);
        let sc = measure_search_cost(&idx, &queries, &truth, 10, 1.0).unwrap();
        assert_eq!(sc.mean_recall, 1.0);
        assert!(sc.bucket_budget <= idx.leaves().len());
    }

    #[test]
    fn foreign_ground_truth_reports_unreachable() {
        let (idx, queries, truth) = probe_setup(23);
        let wrong = GroundTruth {
            k: truth.k,
            per_query: truth
                .per_query
                .iter()
                .map(|row| row.iter().map(|id| id + 1_000_000).collect())
                .collect(),
        };
        match measure_search_cost(&idx, &queries, &wrong, 10, 0.9) {
            Err(Error::RecallUnreachable { target, achieved }) => {
                assert_eq!(target, 0.9);
                assert_eq!(achieved, 0.0);
            }
            other => panic!("expected RecallUnreachable, got {other:?}"),
        }
    }

    #[test]
    fn measure_search_cost_validates_inputs() {
        let (idx, queries, truth) = probe_setup(24);
        assert!(measure_search_cost(&idx, &[], &truth, 10, 0.9).is_err());
        assert!(measure_search_cost(&idx, &queries, &truth, 9, 0.9).is_err());
        assert!(measure_search_cost(&idx, &queries, &truth, 10, 0.0).is_err());
        assert!(measure_search_cost(&idx, &queries, &truth, 10, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn mean_over_is_monotone_for_nondecreasing_curves(
            deltas in proptest::collection::vec(0.0f64..5.0, 1..6),
            start in 0.0f64..10.0,
            r1 in 1.0f64..500.0,
            r2 in 1.0f64..500.0,
        ) {
            let mut knots = vec![(0u64, start)];
            let mut t = 0u64;
            let mut v = start;
            for (i, d) in deltas.iter().enumerate() {
                t += 10 * (i as u64 + 1);
                v += d;
                knots.push((t, v));
            }
            let c = DeteriorationCurve::new(knots).unwrap();
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            // A nondecreasing curve's running mean is nondecreasing.
            prop_assert!(c.mean_over(lo).unwrap() <= c.mean_over(hi).unwrap() + 1e-12);
        }

        #[test]
        fn ac_splits_into_sc_plus_build_share(
            sc in 0.0f64..1e6,
            bc in 0.0f64..1e9,
            ri in 1.0f64..1e6,
            qf in 0.5f64..1e4,
        ) {
            let ac = amortized_cost(sc, bc, ri, qf).unwrap();
            prop_assert_eq!(ac, sc + bc / (ri * qf));
            prop_assert!(ac >= sc);
        }
    }
}
