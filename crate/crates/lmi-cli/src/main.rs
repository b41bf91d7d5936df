//! `lmi` — command-line front end for the dynamized learned metric index.
//!
//! Subcommands cover the whole artifact pipeline: generate a synthetic
//! dataset (`gen-data`), build and persist an index (`build`), stream
//! inserts into it with or without structural maintenance (`insert`),
//! answer k-NN queries under a bucket budget (`query`), run the full
//! scenario matrix (`bench`), scan rebuild intervals for the amortized
//! optimum (`optimize-ri`), and audit a persisted index (`check`).
//!
//! Every command is deterministic given its flags or config file; the
//! benchmark CSVs are byte-identical across reruns unless wall-clock
//! recording is switched on.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{ModelChoice, RunConfig};
use lmi::baseline::{run_lifecycle, RebuildPolicy, SearchProbe};
use lmi::bench::{records_to_csv, run_scenario_matrix, ScenarioMatrixConfig};
use lmi::costmodel::{optimal_rebuild_interval, DeteriorationCurve};
use lmi::dataset::{recall, Dataset, Vector};
use lmi::dynamize::{DynamizedIndex, PolicyConfig};
use lmi::index::{Index, IndexOptions};
use lmi::io::{read_fvecs, write_fvecs, write_ivecs};
use lmi::model::MlpParams;
use lmi::persist::{load_index, save_index};
use lmi::synthetic::{synthetic_blobs, BlobParams};
use lmi::{hash_label, mix_seed};

#[derive(Parser)]
#[command(
    name = "lmi",
    version,
    about = "Dynamized learned metric index: build, maintain, query, benchmark"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded synthetic dataset and write it as fvecs.
    GenData(GenDataArgs),
    /// Build an index over an fvecs dataset and persist it.
    Build(BuildArgs),
    /// Stream vectors from an fvecs file into a persisted index.
    Insert(InsertArgs),
    /// Answer k-NN queries from an fvecs file under a bucket budget.
    Query(QueryArgs),
    /// Run the benchmark scenario matrix described by a config file.
    Bench(ConfigArgs),
    /// Scan rebuild intervals for the amortized-cost optimum.
    OptimizeRi(ConfigArgs),
    /// Validate a persisted index and print its structure summary.
    Check(CheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of vectors.
    #[arg(long)]
    n: usize,
    /// Dimensions per vector.
    #[arg(long)]
    dim: usize,
    /// Number of Gaussian blobs.
    #[arg(long)]
    clusters: usize,
    #[arg(long)]
    seed: u64,
    /// Output fvecs path.
    #[arg(long)]
    out: PathBuf,
    /// Cluster centers are drawn from [-center-box, center-box] per axis.
    #[arg(long, default_value_t = BlobParams::default().center_box)]
    center_box: f32,
    /// Standard deviation of each blob.
    #[arg(long, default_value_t = BlobParams::default().spread)]
    spread: f32,
}

#[derive(Args)]
struct BuildArgs {
    /// Input fvecs dataset.
    #[arg(long)]
    data: PathBuf,
    /// Output index path.
    #[arg(long)]
    out: PathBuf,
    /// Target objects per leaf; fan-out is ceil(n / bucket), at least 2.
    #[arg(long, default_value_t = 1000)]
    bucket: usize,
    #[command(flatten)]
    index_opts: IndexOptArgs,
}

/// Index options shared by `build` and honored by every later structural
/// operation on the index (they persist inside the index file).
#[derive(Args)]
struct IndexOptArgs {
    /// Routing classifier trained at inner nodes.
    #[arg(long, value_enum, default_value = "centroid")]
    model: ModelChoice,
    /// Maximum node depth; leaves may sit at it, inner nodes stay above.
    #[arg(long, default_value_t = 2)]
    depth: usize,
    /// k-means iteration cap for fan-out clustering.
    #[arg(long, default_value_t = 50)]
    kmeans_iters: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Hidden units (MLP model only).
    #[arg(long, default_value_t = MlpParams::default().hidden)]
    mlp_hidden: usize,
    /// Training epochs (MLP model only).
    #[arg(long, default_value_t = MlpParams::default().epochs)]
    mlp_epochs: usize,
    /// SGD learning rate (MLP model only).
    #[arg(long, default_value_t = MlpParams::default().learning_rate)]
    mlp_lr: f64,
    /// SGD momentum (MLP model only).
    #[arg(long, default_value_t = MlpParams::default().momentum)]
    mlp_momentum: f64,
    /// Mini-batch size (MLP model only).
    #[arg(long, default_value_t = MlpParams::default().batch_size)]
    mlp_batch: usize,
    /// Feed raw inputs to the MLP instead of standardizing them.
    #[arg(long)]
    mlp_raw_inputs: bool,
}

impl IndexOptArgs {
    fn to_options(&self) -> IndexOptions {
        IndexOptions {
            model_kind: self.model.into(),
            mlp: MlpParams {
                hidden: self.mlp_hidden,
                epochs: self.mlp_epochs,
                learning_rate: self.mlp_lr,
                momentum: self.mlp_momentum,
                batch_size: self.mlp_batch,
                standardize: !self.mlp_raw_inputs,
            },
            kmeans_max_iters: self.kmeans_iters,
            max_depth: self.depth,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct InsertArgs {
    /// Index to insert into.
    #[arg(long)]
    index: PathBuf,
    /// fvecs file of vectors to stream in, in file order. Ids are
    /// reassigned sequentially after the largest id already indexed.
    #[arg(long)]
    data: PathBuf,
    /// Where to save the grown index; defaults to overwriting --index.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only stream the first TAKE vectors of the file.
    #[arg(long)]
    take: Option<usize>,
    /// Run the occupancy policy after inserts (structural maintenance).
    #[arg(long)]
    dynamic: bool,
    /// Write the structural-action log as CSV (with --dynamic).
    #[arg(long, requires = "dynamic")]
    log: Option<PathBuf>,
    #[command(flatten)]
    policy: PolicyArgs,
}

/// Occupancy policy knobs (only consulted with --dynamic).
#[derive(Args)]
struct PolicyArgs {
    /// Leaves below this occupancy are shortened away.
    #[arg(long, default_value_t = PolicyConfig::default().underflow_min)]
    underflow_min: usize,
    /// Split while objects/leaves is at or above this.
    #[arg(long, default_value_t = PolicyConfig::default().max_avg_leaf_occupancy)]
    max_avg_occupancy: f64,
    /// New fan-outs are sized for this many objects per leaf.
    #[arg(long, default_value_t = PolicyConfig::default().target_leaf_fill)]
    target_fill: usize,
    /// Sweep the policy every this many inserts.
    #[arg(long, default_value_t = PolicyConfig::default().check_every)]
    check_every: usize,
    /// Abort a sweep (with a stall note) after this many actions.
    #[arg(long, default_value_t = PolicyConfig::default().max_actions_per_sweep)]
    max_actions: usize,
}

impl PolicyArgs {
    fn to_policy(&self) -> PolicyConfig {
        PolicyConfig {
            underflow_min: self.underflow_min,
            max_avg_leaf_occupancy: self.max_avg_occupancy,
            target_leaf_fill: self.target_fill,
            check_every: self.check_every,
            max_actions_per_sweep: self.max_actions,
        }
    }
}

#[derive(Args)]
struct QueryArgs {
    /// Index to query.
    #[arg(long)]
    index: PathBuf,
    /// fvecs file of query vectors.
    #[arg(long)]
    queries: PathBuf,
    /// Neighbors per query.
    #[arg(long, default_value_t = 30)]
    k: usize,
    /// Leaf buckets each query may scan; defaults to the leaf count
    /// (exhaustive).
    #[arg(long)]
    budget: Option<usize>,
    /// Write neighbor ids as ivecs (one row of k ids per query).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also compute exact neighbors and report the mean recall.
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Index to validate.
    #[arg(long)]
    index: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData(args) => gen_data(args),
        Cmd::Build(args) => build(args),
        Cmd::Insert(args) => insert(args),
        Cmd::Query(args) => query(args),
        Cmd::Bench(args) => bench(args),
        Cmd::OptimizeRi(args) => optimize_ri(args),
        Cmd::Check(args) => check(args),
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let params = BlobParams { center_box: args.center_box, spread: args.spread };
    let (dataset, _) = synthetic_blobs(args.n, args.dim, args.clusters, args.seed, params)?;
    write_fvecs(&args.out, &dataset)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} vectors of dim {} to {}",
        dataset.len(),
        dataset.dimension,
        args.out.display()
    );
    Ok(())
}

fn build(args: BuildArgs) -> Result<()> {
    let dataset = read_fvecs(&args.data)
        .with_context(|| format!("reading dataset {}", args.data.display()))?;
    ensure!(!dataset.is_empty(), "dataset {} is empty", args.data.display());
    let index = Index::build_static(&dataset, args.bucket, args.index_opts.to_options())?;
    save_index(&index, &args.out)
        .with_context(|| format!("writing index {}", args.out.display()))?;
    print_stats(&index);
    println!("build cost: {} distance evaluations", index.build_cost().proxy);
    println!("saved to {}", args.out.display());
    Ok(())
}

fn insert(args: InsertArgs) -> Result<()> {
    let index = load_index(&args.index)
        .with_context(|| format!("loading index {}", args.index.display()))?;
    let stream = read_fvecs(&args.data)
        .with_context(|| format!("reading stream {}", args.data.display()))?;
    ensure!(
        stream.dimension == index.dim() || stream.is_empty(),
        "stream dimension {} does not match index dimension {}",
        stream.dimension,
        index.dim()
    );
    let take = args.take.unwrap_or(stream.len()).min(stream.len());
    let id_base = index.ids().iter().max().map_or(0, |m| m + 1);

    let (index, actions) = if args.dynamic {
        let mut dynamized = DynamizedIndex::new(index, args.policy.to_policy());
        for (i, v) in stream.vectors[..take].iter().enumerate() {
            dynamized.insert(&Vector::new(id_base + i as u64, v.components.clone()))?;
        }
        if let Some(stall) = &dynamized.log().stalled {
            eprintln!("warning: policy stalled: {stall}");
        }
        if let Some(path) = &args.log {
            std::fs::write(path, dynamized.log().to_csv())
                .with_context(|| format!("writing action log {}", path.display()))?;
        }
        let n_actions = dynamized.log().records.len();
        (dynamized.into_index(), n_actions)
    } else {
        let mut index = index;
        for (i, v) in stream.vectors[..take].iter().enumerate() {
            index.insert(&Vector::new(id_base + i as u64, v.components.clone()))?;
        }
        (index, 0)
    };

    let out = args.out.as_ref().unwrap_or(&args.index);
    save_index(&index, out).with_context(|| format!("writing index {}", out.display()))?;
    println!(
        "inserted {take} vectors (ids {id_base}..{}){}",
        id_base + take as u64,
        if args.dynamic { format!(", {actions} structural actions") } else { String::new() }
    );
    print_stats(&index);
    println!("saved to {}", out.display());
    Ok(())
}

fn query(args: QueryArgs) -> Result<()> {
    let index = load_index(&args.index)
        .with_context(|| format!("loading index {}", args.index.display()))?;
    let queries = read_fvecs(&args.queries)
        .with_context(|| format!("reading queries {}", args.queries.display()))?;
    ensure!(!queries.is_empty(), "query file {} is empty", args.queries.display());
    let budget = args.budget.unwrap_or_else(|| index.stats().leaf_count);

    let mut id_rows: Vec<Vec<u64>> = Vec::with_capacity(queries.len());
    let mut buckets = 0usize;
    let mut scanned = 0u64;
    for q in &queries.vectors {
        let result = index.search(&q.components, args.k, budget)?;
        buckets += result.buckets_visited;
        scanned += result.objects_scanned;
        id_rows.push(result.neighbors.iter().map(|&(id, _)| id).collect());
    }
    let n = queries.len() as f64;
    println!("queries: {}  k: {}  budget: {budget}", queries.len(), args.k);
    println!("mean buckets visited: {}", buckets as f64 / n);
    println!("mean objects scanned: {}", scanned as f64 / n);

    if let Some(path) = &args.out {
        let rows: Vec<Vec<i32>> = id_rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&id| {
                        i32::try_from(id).with_context(|| {
                            format!("id {id} does not fit the ivecs output format")
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        write_ivecs(path, &rows).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote neighbor ids to {}", path.display());
    }
    if args.verify {
        let truth = index.exact_neighbors(&queries.vectors, args.k)?;
        let mean = id_rows
            .iter()
            .zip(&truth.per_query)
            .map(|(ids, t)| recall(ids, t, args.k))
            .sum::<f64>()
            / n;
        println!("mean recall vs exact: {mean}");
    }
    Ok(())
}

fn bench(args: ConfigArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let dataset = cfg.load_dataset()?;
    let queries = cfg.load_queries(&dataset)?;
    ensure!(
        !cfg.bench.checkpoints.is_empty(),
        "bench.checkpoints is empty; list the initial database sizes to measure at"
    );
    let matrix_cfg = ScenarioMatrixConfig {
        scenarios: cfg.bench.scenarios()?,
        checkpoints: cfg.bench.checkpoints.clone(),
        methods: cfg.bench.parsed_methods()?,
        queries,
        k: cfg.queries.k,
        target_bucket_size: cfg.index.bucket,
        index_options: cfg.index.to_options(),
        policy: cfg.policy.to_policy(),
        master_seed: cfg.bench.seed,
        record_seconds: cfg.bench.record_seconds,
    };
    let records = run_scenario_matrix(&dataset, &matrix_cfg)?;
    let path = cfg.output_path("scenario_matrix.csv")?;
    std::fs::write(&path, records_to_csv(&records))
        .with_context(|| format!("writing {}", path.display()))?;
    println!(
        "wrote {} rows ({} scenarios x {} methods x {} checkpoints) to {}",
        records.len(),
        matrix_cfg.scenarios.len(),
        matrix_cfg.methods.len(),
        matrix_cfg.checkpoints.len(),
        path.display()
    );
    Ok(())
}

fn optimize_ri(args: ConfigArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let dataset = cfg.load_dataset()?;
    let queries = cfg.load_queries(&dataset)?;
    let o = &cfg.optimize_ri;
    ensure!(o.initial >= 1, "optimize_ri.initial must be set (>= 1)");
    ensure!(
        o.initial < dataset.len(),
        "optimize_ri.initial = {} leaves no stream in the {}-object dataset",
        o.initial,
        dataset.len()
    );
    let tr = lmi::costmodel::CostScenario::new(o.qf, o.tr)?.tr;

    let mut initial = Dataset::new(dataset.dimension);
    initial.metric = dataset.metric;
    initial.vectors.extend_from_slice(&dataset.vectors[..o.initial]);
    let stream = &dataset.vectors[o.initial..];

    // Knots of the deterioration curve: SC measured with no rebuilds at
    // every probe_every-th insert, plus the stream end.
    ensure!(o.probe_every >= 1, "optimize_ri.probe_every must be >= 1");
    let mut probe_at: Vec<usize> = (0..stream.len()).step_by(o.probe_every).collect();
    probe_at.push(stream.len());

    let opts = IndexOptions {
        seed: mix_seed(cfg.bench.seed, hash_label("optimize-ri")),
        ..cfg.index.to_options()
    };
    let probe =
        SearchProbe { queries, k: cfg.queries.k, target_recalls: vec![tr] };
    let result = run_lifecycle(
        &initial,
        stream,
        RebuildPolicy::Never,
        &probe_at,
        &probe,
        cfg.index.bucket,
        opts,
    )?;
    let knots: Vec<(u64, f64)> = result
        .measurements
        .iter()
        .map(|m| (m.inserts_done as u64, m.per_target[0].1.mean_objects_scanned))
        .collect();
    let curve = DeteriorationCurve::new(knots)?;
    let build_cost = result.build_events[0].cost.proxy;
    let candidates = cfg.ri_candidates(stream.len())?;
    let (best, table) = optimal_rebuild_interval(&curve, build_cost, o.qf, &candidates)?;

    let mut csv = String::from("RI,mean_SC_proxy,build_share_proxy,AC_proxy\n");
    for row in &table {
        csv.push_str(&format!("{},{},{},{}\n", row.ri, row.mean_sc, row.build_share, row.ac));
    }
    let path = cfg.output_path("ac_by_interval.csv")?;
    std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;

    let best_row = table.iter().find(|r| r.ri == best).expect("winner is in the table");
    println!(
        "scanned {} candidate intervals over a {}-insert stream (build cost {})",
        table.len(),
        stream.len(),
        build_cost
    );
    println!("optimal rebuild interval: {best} (amortized cost {})", best_row.ac);
    println!("wrote {}", path.display());
    Ok(())
}

fn check(args: CheckArgs) -> Result<()> {
    // Loading re-validates structure, ids, and the checksum; reaching the
    // print below means the file passed all of it.
    let index = load_index(&args.index)
        .with_context(|| format!("loading index {}", args.index.display()))?;
    print_stats(&index);
    println!("consistency: ok");
    Ok(())
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(dir) = &args.out_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn print_stats(index: &Index) {
    let stats = index.stats();
    println!(
        "objects: {}  leaves: {}  inner nodes: {}  depth: {}  avg leaf occupancy: {:.1}",
        stats.object_count,
        stats.leaf_count,
        stats.inner_count,
        stats.depth,
        stats.avg_leaf_occupancy
    );
}
