//! The run configuration: one TOML document that pins every knob of a
//! `bench` or `optimize-ri` run, so that the config file (with the seeds
//! inside it) reproduces its outputs byte for byte.
//!
//! Relative paths inside the config resolve against the directory the
//! config file sits in, so a config directory can be shipped as a unit.
//! Every default mirrors the library's constants: bucket size 1000,
//! underflow minimum 5, maximum depth 2, k = 30, querying frequencies
//! {100, 1}, target recalls {0.9, 0.5}.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use lmi::bench::MethodSpec;
use lmi::costmodel::CostScenario;
use lmi::dataset::{Dataset, Vector};
use lmi::dynamize::PolicyConfig;
use lmi::index::IndexOptions;
use lmi::model::{MlpParams, ModelKind};
use lmi::synthetic::{synthetic_blobs, BlobParams};
use lmi::{hash_label, mix_seed};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    /// Directory the output CSVs land in; created if missing.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub index: IndexConfig,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub queries: QuerySection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub optimize_ri: OptimizeRiSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from(".")
}

/// Where the objects come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetConfig {
    /// Seeded Gaussian blobs.
    Synthetic {
        n: usize,
        dim: usize,
        clusters: usize,
        seed: u64,
        #[serde(default = "default_center_box")]
        center_box: f32,
        #[serde(default = "default_spread")]
        spread: f32,
    },
    /// An fvecs file; ids are positional.
    Fvecs { path: PathBuf },
}

fn default_center_box() -> f32 {
    BlobParams::default().center_box
}

fn default_spread() -> f32 {
    BlobParams::default().spread
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Centroid,
    Mlp,
}

impl From<ModelChoice> for ModelKind {
    fn from(c: ModelChoice) -> Self {
        match c {
            ModelChoice::Centroid => ModelKind::Centroid,
            ModelChoice::Mlp => ModelKind::Mlp,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub model: ModelChoice,
    /// Static builds size their fan-out for this many objects per leaf.
    pub bucket: usize,
    pub depth: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
    pub mlp: MlpSection,
}

impl Default for IndexConfig {
    fn default() -> Self {
        let opts = IndexOptions::default();
        Self {
            model: ModelChoice::Centroid,
            bucket: 1000,
            depth: opts.max_depth,
            kmeans_iters: opts.kmeans_max_iters,
            seed: opts.seed,
            mlp: MlpSection::default(),
        }
    }
}

impl IndexConfig {
    pub fn to_options(&self) -> IndexOptions {
        IndexOptions {
            model_kind: self.model.into(),
            mlp: self.mlp.to_params(),
            kmeans_max_iters: self.kmeans_iters,
            max_depth: self.depth,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSection {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub standardize: bool,
}

impl Default for MlpSection {
    fn default() -> Self {
        let p = MlpParams::default();
        Self {
            hidden: p.hidden,
            epochs: p.epochs,
            learning_rate: p.learning_rate,
            momentum: p.momentum,
            batch_size: p.batch_size,
            standardize: p.standardize,
        }
    }
}

impl MlpSection {
    pub fn to_params(&self) -> MlpParams {
        MlpParams {
            hidden: self.hidden,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            standardize: self.standardize,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub underflow_min: usize,
    pub max_avg_leaf_occupancy: f64,
    pub target_leaf_fill: usize,
    pub check_every: usize,
    pub max_actions_per_sweep: usize,
}

impl Default for PolicySection {
    fn default() -> Self {
        let p = PolicyConfig::default();
        Self {
            underflow_min: p.underflow_min,
            max_avg_leaf_occupancy: p.max_avg_leaf_occupancy,
            target_leaf_fill: p.target_leaf_fill,
            check_every: p.check_every,
            max_actions_per_sweep: p.max_actions_per_sweep,
        }
    }
}

impl PolicySection {
    pub fn to_policy(&self) -> PolicyConfig {
        PolicyConfig {
            underflow_min: self.underflow_min,
            max_avg_leaf_occupancy: self.max_avg_leaf_occupancy,
            target_leaf_fill: self.target_leaf_fill,
            check_every: self.check_every,
            max_actions_per_sweep: self.max_actions_per_sweep,
        }
    }
}

/// The probe workload. With a `path` the queries come from that fvecs
/// file (the first `count` of them if `count` is smaller); without one,
/// `count` vectors are sampled from the dataset with a seed derived from
/// the bench master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySection {
    pub count: usize,
    pub path: Option<PathBuf>,
    pub k: usize,
}

impl Default for QuerySection {
    fn default() -> Self {
        Self { count: 100, path: None, k: 30 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Initial database sizes, strictly ascending.
    pub checkpoints: Vec<usize>,
    /// Method labels: `none`, `dynamized`, `naive_<interval>`.
    pub methods: Vec<String>,
    /// Querying frequencies; crossed with `tr` in order (qf outer).
    pub qf: Vec<f64>,
    /// Target recalls.
    pub tr: Vec<f64>,
    /// Master seed; every cell derives its own from it.
    pub seed: u64,
    /// Record wall-clock columns. Off by default so the CSV is
    /// byte-identical across machines and reruns.
    pub record_seconds: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            checkpoints: Vec::new(),
            methods: vec!["none".into(), "dynamized".into()],
            qf: vec![100.0, 1.0],
            tr: vec![0.9, 0.5],
            seed: 42,
            record_seconds: false,
        }
    }
}

impl BenchSection {
    pub fn parsed_methods(&self) -> Result<Vec<MethodSpec>> {
        self.methods
            .iter()
            .map(|label| label.parse::<MethodSpec>().map_err(Into::into))
            .collect()
    }

    /// The qf x tr cross product, qf-major, preserving config order.
    pub fn scenarios(&self) -> Result<Vec<CostScenario>> {
        ensure!(!self.qf.is_empty(), "bench.qf must list at least one querying frequency");
        ensure!(!self.tr.is_empty(), "bench.tr must list at least one target recall");
        let mut out = Vec::with_capacity(self.qf.len() * self.tr.len());
        for &qf in &self.qf {
            for &tr in &self.tr {
                out.push(CostScenario::new(qf, tr)?);
            }
        }
        Ok(out)
    }
}

/// Knobs for the rebuild-interval scan: measure the no-rebuild
/// deterioration curve, then price every candidate interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeRiSection {
    /// Objects in the initial build; the rest of the dataset streams in.
    pub initial: usize,
    pub qf: f64,
    pub tr: f64,
    /// Deterioration-curve knot spacing, in inserts.
    pub probe_every: usize,
    /// Candidate intervals; empty means "every probed position".
    pub candidates: Vec<u64>,
}

impl Default for OptimizeRiSection {
    fn default() -> Self {
        Self { initial: 0, qf: 1.0, tr: 0.5, probe_every: 1000, candidates: Vec::new() }
    }
}

impl RunConfig {
    /// Reads and parses a config file. Relative paths inside it are
    /// rebased onto the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        if let DatasetConfig::Fvecs { path } = &mut self.dataset {
            *path = rebase_path(base, path);
        }
        if let Some(path) = &mut self.queries.path {
            *path = rebase_path(base, path);
        }
        self.output_dir = rebase_path(base, &self.output_dir);
    }

    /// Materializes the dataset this config describes.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetConfig::Synthetic { n, dim, clusters, seed, center_box, spread } => {
                let params = BlobParams { center_box: *center_box, spread: *spread };
                let (dataset, _) = synthetic_blobs(*n, *dim, *clusters, *seed, params)?;
                Ok(dataset)
            }
            DatasetConfig::Fvecs { path } => lmi::io::read_fvecs(path)
                .with_context(|| format!("reading dataset {}", path.display())),
        }
    }

    /// The probe queries: from the configured fvecs file, or sampled from
    /// the dataset without replacement (seeded, so reruns sample the same
    /// ones).
    pub fn load_queries(&self, dataset: &Dataset) -> Result<Vec<Vector>> {
        let q = &self.queries;
        ensure!(q.count >= 1, "queries.count must be >= 1");
        if let Some(path) = &q.path {
            let file = lmi::io::read_fvecs(path)
                .with_context(|| format!("reading queries {}", path.display()))?;
            ensure!(!file.is_empty(), "query file {} is empty", path.display());
            let take = q.count.min(file.len());
            return Ok(file.vectors[..take].to_vec());
        }
        ensure!(
            q.count <= dataset.len(),
            "queries.count = {} exceeds the {}-object dataset; point queries.path at a \
             file instead",
            q.count,
            dataset.len()
        );
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.bench.seed, hash_label("queries")));
        let mut picks = sample(&mut rng, dataset.len(), q.count).into_vec();
        picks.sort_unstable();
        Ok(picks.into_iter().map(|i| dataset.vectors[i].clone()).collect())
    }

    /// Ensures `output_dir` exists and returns the path of `name` in it.
    pub fn output_path(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.output_dir).with_context(|| {
            format!("creating output directory {}", self.output_dir.display())
        })?;
        Ok(self.output_dir.join(name))
    }

    /// The candidate rebuild intervals for `optimize-ri`: the configured
    /// list, or every probed stream position when none are given.
    pub fn ri_candidates(&self, stream_len: usize) -> Result<Vec<u64>> {
        let o = &self.optimize_ri;
        if !o.candidates.is_empty() {
            return Ok(o.candidates.clone());
        }
        ensure!(o.probe_every >= 1, "optimize_ri.probe_every must be >= 1");
        let grid: Vec<u64> =
            (1..=stream_len / o.probe_every).map(|i| (i * o.probe_every) as u64).collect();
        if grid.is_empty() {
            bail!(
                "optimize_ri.probe_every = {} leaves no candidate interval within the \
                 {}-insert stream",
                o.probe_every,
                stream_len
            );
        }
        Ok(grid)
    }
}

fn rebase_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
