//! The scenario matrix: amortized cost of the dynamized index against the
//! no-rebuild and naive-rebuild baselines across growing database sizes,
//! for every querying-frequency x target-recall scenario.
//!
//! A *checkpoint* is an initial database size. For a baseline cell
//! (method, checkpoint c) the index is built statically over the first c
//! objects and then absorbs the stream that follows:
//!
//! * **none** takes every remaining object with no rebuild; its SC is the
//!   mean of probes at {0, d/2, d} inserts (d = all remaining), its BC the
//!   single build, its effective RI the whole stream d. With nothing left
//!   to insert near the end of the dataset its amortized cost converges
//!   toward the maintained methods — an artifact of the finite dataset,
//!   not of the method improving.
//! * **naive(ri)** lives in rebuild intervals of ri inserts; the cell
//!   replays one interval (probes at {0, d/2, d}, d = min(ri, remaining))
//!   for the mean SC, and its BC is the rebuild the interval ends in —
//!   a fresh build over the first c + ri objects — falling back to the
//!   initial build when the dataset runs out first. RI is the configured
//!   interval.
//! * **dynamized** grows once from empty with the occupancy policy active
//!   and is probed as it passes each checkpoint: SC is instantaneous (the
//!   structure is continuously maintained), BC the cumulative operator
//!   cost so far, RI the inserts so far.
//!
//! Every row then satisfies `AC = SC + BC_cum / (RI * QF)` exactly in
//! proxy units, whatever the method. Cells are simulated once per
//! (method, checkpoint): both recall targets are measured from the same
//! probe pass, and the QF axis only changes the build-share arithmetic, so
//! rows at the same checkpoint and TR carry bit-identical SC across QF.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;

use crate::baseline::{run_lifecycle, probe_search_cost, RebuildPolicy, SearchProbe};
use crate::costmodel::{amortized_cost, CostScenario};
use crate::dataset::{Dataset, Vector};
use crate::dynamize::{ActionLog, DynamizedIndex, PolicyConfig};
use crate::index::{Index, IndexOptions, OpCost};
use crate::{hash_label, mix_seed, Error, Result};

/// A method column of the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodSpec {
    /// Build once at the checkpoint size, never rebuild.
    None,
    /// Full rebuild every `interval` inserts.
    Naive { interval: usize },
    /// Grow from empty under the occupancy policy.
    Dynamized,
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodSpec::None => f.write_str("none"),
            MethodSpec::Naive { interval } => write!(f, "naive_{interval}"),
            MethodSpec::Dynamized => f.write_str("dynamized"),
        }
    }
}

impl std::str::FromStr for MethodSpec {
    type Err = Error;

    /// Parses the same labels [`Display`](fmt::Display) emits: `none`,
    /// `dynamized`, `naive_<interval>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MethodSpec::None),
            "dynamized" => Ok(MethodSpec::Dynamized),
            _ => {
                let interval = s
                    .strip_prefix("naive_")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&n| n >= 1);
                interval.map(|interval| MethodSpec::Naive { interval }).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "unknown method `{s}` (expected `none`, `dynamized`, or \
                         `naive_<interval>`)"
                    ))
                })
            }
        }
    }
}

/// The four standard scenarios: QF in {100, 1} crossed with TR in
/// {0.9, 0.5}.
pub fn default_scenarios() -> Vec<CostScenario> {
    vec![
        CostScenario { qf: 100.0, tr: 0.9 },
        CostScenario { qf: 100.0, tr: 0.5 },
        CostScenario { qf: 1.0, tr: 0.9 },
        CostScenario { qf: 1.0, tr: 0.5 },
    ]
}

/// One row of the matrix CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub method: MethodSpec,
    pub qf: f64,
    pub tr: f64,
    pub checkpoint_size: usize,
    pub sc_proxy: f64,
    pub sc_seconds: f64,
    pub bc_cum_proxy: f64,
    pub bc_cum_seconds: f64,
    pub ri: u64,
    pub ac_proxy: f64,
    pub ac_seconds: f64,
    pub seed: u64,
}

pub const CSV_HEADER: &str = "method,QF,TR,checkpoint_size,SC_proxy,SC_seconds,BC_cum_proxy,\
                              BC_cum_seconds,RI,AC_proxy,AC_seconds,seed";

/// Serializes records in their given order under the fixed header.
pub fn records_to_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.qf,
            r.tr,
            r.checkpoint_size,
            r.sc_proxy,
            r.sc_seconds,
            r.bc_cum_proxy,
            r.bc_cum_seconds,
            r.ri,
            r.ac_proxy,
            r.ac_seconds,
            r.seed,
        ));
    }
    out
}

/// Amortized cost of the gradually-maintained method: the current search
/// cost plus all structural costs so far spread over all queries so far.
/// This is the gradual-update analogue of `BC / (RI * QF)` — with
/// `total_queries = QF * inserts` it equals `amortized_cost(SC, total
/// structural cost, inserts, QF)` exactly.
pub fn dynamized_amortized_cost(
    log: &ActionLog,
    total_queries: f64,
    current_sc: f64,
) -> Result<f64> {
    if !(total_queries.is_finite() && total_queries > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "total queries must be positive, got {total_queries}"
        )));
    }
    Ok(current_sc + log.total_cost().proxy / total_queries)
}

/// Everything a matrix run needs beyond the dataset itself.
#[derive(Debug, Clone)]
pub struct ScenarioMatrixConfig {
    pub scenarios: Vec<CostScenario>,
    /// Initial database sizes, strictly ascending.
    pub checkpoints: Vec<usize>,
    pub methods: Vec<MethodSpec>,
    /// Held-out query workload; the same set prices every cell.
    pub queries: Vec<Vector>,
    pub k: usize,
    pub target_bucket_size: usize,
    pub index_options: IndexOptions,
    /// Policy for the dynamized column.
    pub policy: PolicyConfig,
    pub master_seed: u64,
    /// When false, all seconds columns are zero and the CSV is
    /// byte-identical across machines and reruns.
    pub record_seconds: bool,
}

/// Search cost of one cell at every distinct recall target, plus the
/// cell's build-cost and interval bookkeeping.
struct CellOutcome {
    /// (tr, SC proxy, SC seconds), one entry per distinct target.
    sc_per_tr: Vec<(f64, f64, f64)>,
    bc: OpCost,
    ri: u64,
    seed: u64,
}

/// Runs the whole matrix and returns rows grouped by scenario (in config
/// order), then method, then checkpoint.
pub fn run_scenario_matrix(
    dataset: &Dataset,
    cfg: &ScenarioMatrixConfig,
) -> Result<Vec<BenchRecord>> {
    validate(dataset, cfg)?;
    let trs = distinct_targets(&cfg.scenarios);
    let probe =
        SearchProbe { queries: cfg.queries.clone(), k: cfg.k, target_recalls: trs.clone() };

    // Baseline cells are independent; simulate them in parallel, keyed by
    // (method index, checkpoint index) so results land in a fixed order.
    let baseline_cells: Vec<(usize, usize)> = cfg
        .methods
        .iter()
        .enumerate()
        .filter(|(_, m)| !matches!(m, MethodSpec::Dynamized))
        .flat_map(|(mi, _)| (0..cfg.checkpoints.len()).map(move |ci| (mi, ci)))
        .collect();
    let baseline_outcomes: Vec<((usize, usize), CellOutcome)> = baseline_cells
        .par_iter()
        .map(|&(mi, ci)| {
            let method = cfg.methods[mi];
            let c = cfg.checkpoints[ci];
            let outcome = baseline_cell(dataset, cfg, &probe, method, c).map_err(|e| {
                Error::Bench(format!("method {method}, checkpoint {c}: {e}"))
            })?;
            Ok(((mi, ci), outcome))
        })
        .collect::<Result<_>>()?;

    let dynamized_outcomes: Vec<((usize, usize), CellOutcome)> = cfg
        .methods
        .iter()
        .enumerate()
        .filter(|(_, m)| matches!(m, MethodSpec::Dynamized))
        .map(|(mi, _)| {
            let outcomes = dynamized_column(dataset, cfg, &probe)
                .map_err(|e| Error::Bench(format!("method dynamized: {e}")))?;
            Ok(outcomes.into_iter().enumerate().map(move |(ci, o)| ((mi, ci), o)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut cells: Vec<Option<CellOutcome>> = Vec::new();
    cells.resize_with(cfg.methods.len() * cfg.checkpoints.len(), || None);
    for ((mi, ci), outcome) in baseline_outcomes.into_iter().chain(dynamized_outcomes) {
        cells[mi * cfg.checkpoints.len() + ci] = Some(outcome);
    }

    let mut rows = Vec::with_capacity(cfg.scenarios.len() * cells.len());
    for scenario in &cfg.scenarios {
        for (mi, &method) in cfg.methods.iter().enumerate() {
            for (ci, &checkpoint) in cfg.checkpoints.iter().enumerate() {
                let cell = cells[mi * cfg.checkpoints.len() + ci]
                    .as_ref()
                    .expect("every cell was simulated");
                let &(_, sc_proxy, sc_seconds) = cell
                    .sc_per_tr
                    .iter()
                    .find(|(tr, _, _)| *tr == scenario.tr)
                    .expect("every distinct target was measured");
                let ri = cell.ri as f64;
                rows.push(BenchRecord {
                    method,
                    qf: scenario.qf,
                    tr: scenario.tr,
                    checkpoint_size: checkpoint,
                    sc_proxy,
                    sc_seconds,
                    bc_cum_proxy: cell.bc.proxy,
                    bc_cum_seconds: cell.bc.seconds,
                    ri: cell.ri,
                    ac_proxy: amortized_cost(sc_proxy, cell.bc.proxy, ri, scenario.qf)?,
                    ac_seconds: amortized_cost(sc_seconds, cell.bc.seconds, ri, scenario.qf)?,
                    seed: cell.seed,
                });
            }
        }
    }
    Ok(rows)
}

fn validate(dataset: &Dataset, cfg: &ScenarioMatrixConfig) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.scenarios.is_empty() {
        return Err(Error::Bench("no scenarios configured".into()));
    }
    for s in &cfg.scenarios {
        CostScenario::new(s.qf, s.tr)?;
    }
    if cfg.methods.is_empty() {
        return Err(Error::Bench("no methods configured".into()));
    }
    for m in &cfg.methods {
        if let MethodSpec::Naive { interval: 0 } = m {
            return Err(Error::Bench("naive rebuild interval must be >= 1".into()));
        }
    }
    if cfg.checkpoints.is_empty() {
        return Err(Error::Bench("no checkpoints configured".into()));
    }
    if cfg.checkpoints[0] == 0 {
        return Err(Error::Bench("checkpoints must be >= 1".into()));
    }
    if !cfg.checkpoints.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Bench("checkpoints must be strictly ascending".into()));
    }
    let n = dataset.len();
    if *cfg.checkpoints.last().unwrap() > n {
        return Err(Error::Bench(format!(
            "checkpoint {} exceeds the {n}-object dataset",
            cfg.checkpoints.last().unwrap()
        )));
    }
    let has_baseline = cfg.methods.iter().any(|m| !matches!(m, MethodSpec::Dynamized));
    if has_baseline && *cfg.checkpoints.last().unwrap() == n {
        return Err(Error::Bench(format!(
            "checkpoint {n} equals the dataset size: a baseline built there has no inserts \
             to amortize over; the largest baseline checkpoint must be < {n}"
        )));
    }
    if cfg.queries.is_empty() {
        return Err(Error::Bench("no probe queries configured".into()));
    }
    if let Some(q) = cfg.queries.iter().find(|q| q.dim() != dataset.dimension) {
        return Err(Error::DimensionMismatch { expected: dataset.dimension, found: q.dim() });
    }
    if cfg.k == 0 || cfg.k > cfg.checkpoints[0] {
        return Err(Error::Bench(format!(
            "k = {} must be in 1..={} (the smallest checkpoint)",
            cfg.k, cfg.checkpoints[0]
        )));
    }
    if cfg.target_bucket_size == 0 {
        return Err(Error::Bench("target bucket size must be >= 1".into()));
    }
    Ok(())
}

/// Distinct recall targets in first-appearance order.
fn distinct_targets(scenarios: &[CostScenario]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for s in scenarios {
        if !out.iter().any(|t| *t == s.tr) {
            out.push(s.tr);
        }
    }
    out
}

fn cell_seed(master: u64, method: MethodSpec, checkpoint: Option<usize>) -> u64 {
    let label = match checkpoint {
        Some(c) => format!("{method}|{c}"),
        None => method.to_string(),
    };
    mix_seed(master, hash_label(&label))
}

/// Probe offsets {0, d/2, d} (deduplicated) whose mean prices "an average
/// query" of a d-insert period under a linear-in-time query arrival.
fn interval_probes(d: usize) -> Vec<usize> {
    let mut probes = vec![0, d / 2, d];
    probes.dedup();
    probes
}

fn prefix_dataset(dataset: &Dataset, len: usize) -> Dataset {
    let mut out = Dataset::new(dataset.dimension);
    out.metric = dataset.metric;
    out.vectors.extend_from_slice(&dataset.vectors[..len]);
    out
}

/// Mean SC per target over a lifecycle's probe measurements.
fn mean_sc(
    measurements: &[crate::baseline::ScMeasurement],
    trs: &[f64],
    record_seconds: bool,
) -> Vec<(f64, f64, f64)> {
    trs.iter()
        .enumerate()
        .map(|(ti, &tr)| {
            let n = measurements.len() as f64;
            let proxy =
                measurements.iter().map(|m| m.per_target[ti].1.mean_objects_scanned).sum::<f64>()
                    / n;
            let seconds = if record_seconds {
                measurements.iter().map(|m| m.per_target[ti].1.mean_seconds).sum::<f64>() / n
            } else {
                0.0
            };
            (tr, proxy, seconds)
        })
        .collect()
}

fn baseline_cell(
    dataset: &Dataset,
    cfg: &ScenarioMatrixConfig,
    probe: &SearchProbe,
    method: MethodSpec,
    checkpoint: usize,
) -> Result<CellOutcome> {
    let n = dataset.len();
    let seed = cell_seed(cfg.master_seed, method, Some(checkpoint));
    let opts = IndexOptions { seed, ..cfg.index_options.clone() };
    let initial = prefix_dataset(dataset, checkpoint);
    let remaining = n - checkpoint;

    let (d, ri) = match method {
        MethodSpec::None => (remaining, remaining as u64),
        MethodSpec::Naive { interval } => (interval.min(remaining), interval as u64),
        MethodSpec::Dynamized => unreachable!("dynamized cells use their own path"),
    };
    let stream = &dataset.vectors[checkpoint..checkpoint + d];
    // The policy is Never even for the naive cell: it replays exactly one
    // rebuild interval, and the rebuild that ends it is costed below.
    let result = run_lifecycle(
        &initial,
        stream,
        RebuildPolicy::Never,
        &interval_probes(d),
        probe,
        cfg.target_bucket_size,
        opts.clone(),
    )?;
    let initial_build = result.build_events[0].cost;
    let bc_raw = match method {
        MethodSpec::None => initial_build,
        MethodSpec::Naive { interval } => {
            if checkpoint + interval <= n {
                // The rebuild this interval triggers: a fresh build over
                // everything seen by then.
                let rebuilt = prefix_dataset(dataset, checkpoint + interval);
                Index::build_static(&rebuilt, cfg.target_bucket_size, opts)?.build_cost()
            } else {
                initial_build
            }
        }
        MethodSpec::Dynamized => unreachable!(),
    };
    let bc = OpCost {
        proxy: bc_raw.proxy,
        seconds: if cfg.record_seconds { bc_raw.seconds } else { 0.0 },
    };
    Ok(CellOutcome {
        sc_per_tr: mean_sc(&result.measurements, &probe.target_recalls, cfg.record_seconds),
        bc,
        ri,
        seed,
    })
}

/// Grows the dynamized index once through the whole stream, producing one
/// outcome per checkpoint.
fn dynamized_column(
    dataset: &Dataset,
    cfg: &ScenarioMatrixConfig,
    probe: &SearchProbe,
) -> Result<Vec<CellOutcome>> {
    let seed = cell_seed(cfg.master_seed, MethodSpec::Dynamized, None);
    let opts = IndexOptions { seed, ..cfg.index_options.clone() };
    let mut dyn_idx =
        DynamizedIndex::new(Index::new_empty(dataset.dimension, opts)?, cfg.policy.clone());
    let checkpoint_set: HashSet<usize> = cfg.checkpoints.iter().copied().collect();
    let mut outcomes = Vec::with_capacity(cfg.checkpoints.len());
    for (i, v) in dataset.vectors.iter().enumerate() {
        dyn_idx.insert(v)?;
        let inserted = i + 1;
        if checkpoint_set.contains(&inserted) {
            let m = probe_search_cost(dyn_idx.index(), probe, inserted)?;
            let cost = dyn_idx.structural_cost();
            outcomes.push(CellOutcome {
                sc_per_tr: mean_sc(
                    std::slice::from_ref(&m),
                    &probe.target_recalls,
                    cfg.record_seconds,
                ),
                bc: OpCost {
                    proxy: cost.proxy,
                    seconds: if cfg.record_seconds { cost.seconds } else { 0.0 },
                },
                ri: inserted as u64,
                seed,
            });
            if outcomes.len() == cfg.checkpoints.len() {
                break; // nothing beyond the last checkpoint is measured
            }
        }
    }
    Ok(outcomes)
}
