//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::{reference_optimum, run_benchmark, write_event_log, BenchConfig, RunMetrics, ScatterRow, DP_MAX_N};
use crate::bnb::{solve, ClockKind, SolveConfig, UpperBound};
use crate::egat::{init_params, load_params, save_params, ModelProvenance};
use crate::instance::{load_tsplib, DatasetConfig, DatasetKind, Instance, TsplibOptions};
use crate::train::{build_training_set, train, AdamState, TrainOptions};

/// Exit status of a command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some items failed, the rest completed.
    Partial,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Partial => 2,
        }
    }
}

type CliResult = Result<Outcome, String>;

#[derive(Parser, Debug)]
#[command(name = "hklearn", version, about = "Held-Karp bounds, learned multipliers and exact TSP search")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Base seed for generation, extraction and training.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Seconds per solve (on the chosen clock), or the training budget.
    #[arg(long, global = true)]
    pub time_limit: Option<f64>,
    /// Model file used for warm starts.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Upper bound as a multiple of the reference optimum.
    #[arg(long, global = true, default_value_t = 1.02)]
    pub ub_factor: f64,
    /// Worker threads for instance-level parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `work` counts operations and is reproducible; `wall` is real time.
    #[arg(long, global = true, value_enum, default_value_t = ClockArg::Work)]
    pub clock: ClockArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ClockArg {
    Work,
    Wall,
}

impl From<ClockArg> for ClockKind {
    fn from(c: ClockArg) -> Self {
        match c {
            ClockArg::Work => ClockKind::Work,
            ClockArg::Wall => ClockKind::Wall,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SuiteArgs {
    /// `random` or `clustered`.
    #[arg(long, default_value = "random")]
    pub kind: DatasetKind,
    /// Cities per instance.
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Number of instances.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Clusters of a clustered suite.
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    /// Radius of each cluster's disk.
    #[arg(long, default_value_t = 0.1)]
    pub radius: f64,
}

impl SuiteArgs {
    fn config(&self, seed: u64) -> DatasetConfig {
        DatasetConfig { kind: self.kind, n_cities: self.n, n_clusters: self.clusters, cluster_radius: self.radius, seed }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write generated instances as JSON files.
    Generate(SuiteArgs),
    /// Train a model on generated instances.
    Train {
        #[command(flatten)]
        suite: SuiteArgs,
        /// Held-out instances for model selection.
        #[arg(long, default_value_t = 20)]
        val_count: usize,
        /// Search-node snapshots per training instance.
        #[arg(long, default_value_t = 10)]
        k_nodes: usize,
        /// Passes over the training set.
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        /// Stop after this many epochs without a better validation bound.
        #[arg(long, default_value_t = 50)]
        patience: usize,
        /// Adam learning rate.
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Random rotations and reflections of each training graph.
        #[arg(long)]
        augment: bool,
        /// Plain gradient ascent instead of Adam.
        #[arg(long)]
        plain: bool,
        /// Training log CSV (default: next to the model).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Solve instance files (JSON or TSPLIB .tsp).
    Solve {
        files: Vec<PathBuf>,
        /// Explicit upper bound instead of `--ub-factor` × optimum.
        #[arg(long)]
        ub: Option<f64>,
        /// Deepest level at which the model is queried.
        #[arg(long, default_value_t = 10)]
        warm_start_depth: usize,
    },
    /// Run the baseline and, with `--model`, the warm-started solver on a generated suite.
    Bench {
        #[command(flatten)]
        suite: SuiteArgs,
    },
    /// Pair two per-instance run tables and report gap ratios.
    Compare {
        baseline: PathBuf,
        candidate: PathBuf,
        /// Keep only rows of this configuration from the baseline table.
        #[arg(long)]
        baseline_config: Option<String>,
        /// Keep only rows of this configuration from the candidate table.
        #[arg(long)]
        candidate_config: Option<String>,
    },
    /// Optimal tour costs of instance files.
    Oracle { files: Vec<PathBuf> },
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(o) => o.code(),
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: &Cli) -> CliResult {
    let g = &cli.global;
    if let Some(t) = g.threads {
        // only the first call can configure the global pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    match &cli.command {
        Command::Generate(suite) => generate(g, suite),
        Command::Train { suite, val_count, k_nodes, epochs, patience, lr, augment, plain, log } => {
            let opts = TrainOptions {
                epochs: *epochs,
                patience: *patience,
                time_limit: g.time_limit,
                seed: g.seed,
                plain_ascent: *plain,
                augment: *augment,
                ..Default::default()
            };
            train_cmd(g, suite, *val_count, *k_nodes, *lr, &opts, log.as_deref())
        }
        Command::Solve { files, ub, warm_start_depth } => solve_cmd(g, files, *ub, *warm_start_depth),
        Command::Bench { suite } => bench_cmd(g, suite),
        Command::Compare { baseline, candidate, baseline_config, candidate_config } => compare_cmd(
            g,
            (baseline, baseline_config.as_deref()),
            (candidate, candidate_config.as_deref()),
        ),
        Command::Oracle { files } => oracle_cmd(g, files),
    }
}

fn out_dir(g: &Global, default: &str) -> Result<PathBuf, String> {
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    Ok(dir)
}

fn generate(g: &Global, suite: &SuiteArgs) -> CliResult {
    let dir = out_dir(g, "instances")?;
    let insts = suite.config(g.seed).generate_many(suite.count).map_err(|e| e.to_string())?;
    for inst in &insts {
        let path = dir.join(format!("{}.json", inst.provenance().name));
        inst.save(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        println!("{}", path.display());
    }
    Ok(Outcome::Success)
}

fn train_cmd(
    g: &Global,
    suite: &SuiteArgs,
    val_count: usize,
    k_nodes: usize,
    lr: f64,
    opts: &TrainOptions,
    log_path: Option<&Path>,
) -> CliResult {
    let cfg = suite.config(g.seed);
    let train_set = build_training_set(&cfg, suite.count, k_nodes, g.seed).map_err(|e| e.to_string())?;
    // validation instances come from a different seed stream
    let val_set = build_training_set(&cfg, val_count, 0, g.seed ^ 0x5eed0f7a11).map_err(|e| e.to_string())?;
    eprintln!("training on {} graphs ({} roots), validating on {}", train_set.len(), train_set.roots(), val_set.len());
    let params = g.model.as_ref().map_or_else(|| Ok(init_params(g.seed)), |p| load_params(p).map(|m| m.params));
    let params = params.map_err(|e| e.to_string())?;
    let mut adam = AdamState::new(&params).with_lr(lr);
    let (best, log) = train(params, &train_set, &val_set, opts, &mut adam).map_err(|e| e.to_string())?;
    let model_path = g.out.clone().unwrap_or_else(|| PathBuf::from("model.json"));
    if let Some(parent) = model_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| e.to_string())?;
    }
    let prov = ModelProvenance {
        dataset_kind: Some(suite.kind),
        n_cities: Some(suite.n),
        epochs: Some(log.records.len() - 1),
        seed: Some(g.seed),
    };
    save_params(&best, &prov, &model_path).map_err(|e| e.to_string())?;
    let log_path = log_path.map(Path::to_path_buf).unwrap_or_else(|| model_path.with_extension("log.csv"));
    log.write_csv(&log_path).map_err(|e| e.to_string())?;
    let first = &log.records[0];
    println!(
        "best epoch {} of {}: validation bound {:.6} (initial {:.6})",
        log.best_epoch,
        log.records.len() - 1,
        log.best_val_bound,
        first.mean_val_bound
    );
    println!("model {}\nlog {}", model_path.display(), log_path.display());
    Ok(Outcome::Success)
}

pub fn load_instance(path: &Path) -> Result<Instance, String> {
    let res = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsp")) {
        load_tsplib(path, TsplibOptions { round: true })
    } else {
        Instance::load(path)
    };
    res.map_err(|e| format!("{}: {e}", path.display()))
}

fn reference_limit(g: &Global) -> f64 {
    g.time_limit.unwrap_or(60.0).max(60.0)
}

#[derive(Serialize)]
struct SolveRecord<'a> {
    instance: &'a str,
    n: usize,
    upper_bound: f64,
    #[serde(flatten)]
    result: &'a crate::bnb::SolveResult,
}

fn solve_cmd(g: &Global, files: &[PathBuf], ub: Option<f64>, depth: usize) -> CliResult {
    if files.is_empty() {
        return Err("no instance files given".into());
    }
    let model = match &g.model {
        Some(p) => Some(load_params(p).map_err(|e| format!("{}: {e}", p.display()))?.params),
        None => None,
    };
    let dir = out_dir(g, "results")?;
    let mut failed = 0;
    for path in files {
        let done = (|| -> Result<(), String> {
            let inst = load_instance(path)?;
            let upper = match ub {
                Some(v) => UpperBound::Given(v),
                None => {
                    let opt = reference_optimum(&inst, reference_limit(g)).map_err(|e| e.to_string())?;
                    UpperBound::OptimalTimesFactor { optimum: opt, factor: g.ub_factor }
                }
            };
            let mut cfg = SolveConfig::new(upper);
            cfg.time_limit = g.time_limit.unwrap_or(cfg.time_limit);
            cfg.warm_start_depth = depth;
            cfg.model = model.clone();
            cfg.clock = g.clock.into();
            let res = solve(&inst, &cfg).map_err(|e| e.to_string())?;
            let name = inst.provenance().name.clone();
            let name = if name.is_empty() { stem(path) } else { name };
            let rec = SolveRecord { instance: &name, n: inst.n(), upper_bound: upper.value(), result: &res };
            let json = serde_json::to_string_pretty(&rec).map_err(|e| e.to_string())?;
            fs::write(dir.join(format!("{name}.json")), json).map_err(|e| e.to_string())?;
            write_event_log(&res.bound_event_log, &dir.join(format!("{name}.events.csv"))).map_err(|e| e.to_string())?;
            println!(
                "{name}: {:?} dual {:.6} primal {:.6} nodes {} time {:.3}",
                res.status,
                res.best_dual,
                res.primal(),
                res.nodes_explored,
                res.elapsed
            );
            Ok(())
        })();
        if let Err(e) = done {
            eprintln!("error: {e}");
            failed += 1;
        }
    }
    finish(failed, files.len())
}

fn finish(failed: usize, total: usize) -> CliResult {
    match failed {
        0 => Ok(Outcome::Success),
        f if f < total => Ok(Outcome::Partial),
        _ => Err(format!("all {total} items failed")),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn bench_cmd(g: &Global, suite: &SuiteArgs) -> CliResult {
    let dir = out_dir(g, "bench")?;
    let insts = suite.config(g.seed).generate_many(suite.count).map_err(|e| e.to_string())?;
    let limit = reference_limit(g);
    let optima: Vec<Result<f64, String>> = {
        use rayon::prelude::*;
        insts.par_iter().map(|i| reference_optimum(i, limit).map_err(|e| e.to_string())).collect()
    };
    let optima: Vec<f64> = optima.into_iter().collect::<Result<_, _>>()?;
    let mut template = SolveConfig::new(UpperBound::Given(f64::INFINITY));
    template.time_limit = g.time_limit.unwrap_or(template.time_limit);
    template.clock = g.clock.into();
    let mut configs = vec![BenchConfig { name: "HK".into(), model_path: None, template: template.clone() }];
    if let Some(p) = &g.model {
        configs.push(BenchConfig { name: "GNN+HK".into(), model_path: Some(p.clone()), template });
    }
    let report = run_benchmark(&insts, &optima, &configs, g.ub_factor);
    let written = report.write(&dir).map_err(|e| e.to_string())?;
    for a in &report.aggregates {
        println!(
            "{}: solved {}/{} mean time {:.3} pdi {:.4} filtered {:.2}% gap {:.4}%",
            a.config, a.solved, a.instances, a.mean_time, a.mean_pdi, a.mean_filtered_pct, a.mean_opt_gap_pct
        );
    }
    for i in &report.improvements {
        println!("{} vs {}: gap ratio {:.4}", i.config, i.baseline, i.gap_ratio);
    }
    for f in &report.failures {
        eprintln!("error: {}: {}", f.config, f.error);
    }
    for w in written {
        println!("wrote {}", w.display());
    }
    if report.failures.is_empty() {
        Ok(Outcome::Success)
    } else if report.runs.is_empty() {
        Err("every configuration failed".into())
    } else {
        Ok(Outcome::Partial)
    }
}

/// Rows of a runs table, optionally restricted to one configuration. Each
/// instance must appear once.
fn read_runs(path: &Path, config: Option<&str>) -> Result<Vec<RunMetrics>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let rows = r.deserialize().collect::<Result<Vec<RunMetrics>, _>>().map_err(|e| format!("{}: {e}", path.display()))?;
    let rows: Vec<RunMetrics> = rows.into_iter().filter(|r| config.is_none_or(|c| r.config == c)).collect();
    let mut names: Vec<&str> = rows.iter().map(|r| r.instance.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(format!("{}: several rows per instance; pick one configuration", path.display()));
    }
    Ok(rows)
}

fn compare_cmd(g: &Global, baseline: (&Path, Option<&str>), candidate: (&Path, Option<&str>)) -> CliResult {
    let a = read_runs(baseline.0, baseline.1)?;
    let b = read_runs(candidate.0, candidate.1)?;
    let mut rows = Vec::new();
    let mut unmatched = 0;
    for r in &b {
        match a.iter().find(|x| x.instance == r.instance) {
            Some(x) => rows.push(ScatterRow {
                instance: r.instance.clone(),
                baseline_gap_pct: x.opt_gap_pct,
                config_gap_pct: r.opt_gap_pct,
                baseline_time: x.time,
                config_time: r.time,
            }),
            None => unmatched += 1,
        }
    }
    if rows.is_empty() {
        return Err("no instance appears in both tables".into());
    }
    let k = rows.len() as f64;
    let mean = |f: fn(&ScatterRow) -> f64| rows.iter().map(f).sum::<f64>() / k;
    let (ga, gb) = (mean(|r| r.baseline_gap_pct), mean(|r| r.config_gap_pct));
    let (ta, tb) = (mean(|r| r.baseline_time), mean(|r| r.config_time));
    let ratio = if ga == 0.0 { if gb == 0.0 { 1.0 } else { f64::INFINITY } } else { gb / ga };
    println!("paired instances {}", rows.len());
    println!("mean gap {ga:.4}% -> {gb:.4}% (ratio {ratio:.4})");
    println!("mean time {ta:.4} -> {tb:.4}");
    let path = g.out.clone().unwrap_or_else(|| PathBuf::from("scatter.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(|e| e.to_string())?;
    for r in &rows {
        w.serialize(r).map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())?;
    println!("wrote {}", path.display());
    if unmatched > 0 {
        eprintln!("{unmatched} candidate rows had no baseline");
        return Ok(Outcome::Partial);
    }
    Ok(Outcome::Success)
}

fn oracle_cmd(g: &Global, files: &[PathBuf]) -> CliResult {
    if files.is_empty() {
        return Err("no instance files given".into());
    }
    #[derive(Serialize)]
    struct Row {
        instance: String,
        n: usize,
        optimum: f64,
        exact_dp: bool,
    }
    let mut rows = Vec::new();
    let mut failed = 0;
    for path in files {
        match load_instance(path).and_then(|inst| {
            let opt = reference_optimum(&inst, reference_limit(g)).map_err(|e| e.to_string())?;
            Ok(Row { instance: stem(path), n: inst.n(), optimum: opt, exact_dp: inst.n() <= DP_MAX_N })
        }) {
            Ok(r) => {
                println!("{}: {}", r.instance, r.optimum);
                rows.push(r);
            }
            Err(e) => {
                eprintln!("error: {e}");
                failed += 1;
            }
        }
    }
    if let Some(path) = &g.out {
        let mut w = csv::Writer::from_path(path).map_err(|e| e.to_string())?;
        for r in &rows {
            w.serialize(r).map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())?;
    }
    finish(failed, files.len())
}
