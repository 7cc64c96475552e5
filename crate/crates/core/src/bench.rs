//! Exact oracles, run metrics and benchmark orchestration.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bnb::{solve, BoundEvent, SolveConfig, SolveStatus, UpperBound};
use crate::egat::load_params;
use crate::instance::Instance;

/// Largest instance the subset DP accepts.
pub const DP_MAX_N: usize = 18;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("instance has {0} cities; the exact DP handles at most {DP_MAX_N}")]
    TooLarge(usize),
    #[error("upper bound must be positive, got {0}")]
    InvalidUpperBound(f64),
    #[error("{0}")]
    Solve(#[from] crate::bnb::BnbError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Other(String),
}

/// Optimal tour cost by dynamic programming over subsets.
pub fn dp_optimal(inst: &Instance) -> Result<f64, BenchError> {
    dp_optimal_tour(inst).map(|(c, _)| c)
}

/// Optimal tour cost and one optimal tour, starting at node 0.
pub fn dp_optimal_tour(inst: &Instance) -> Result<(f64, Vec<usize>), BenchError> {
    let n = inst.n();
    if n > DP_MAX_N {
        return Err(BenchError::TooLarge(n));
    }
    if n <= 3 {
        let tour: Vec<usize> = (0..n).collect();
        return Ok((inst.tour_cost(&tour), tour));
    }
    // nodes 1..n are bits 0..m
    let m = n - 1;
    let full = (1usize << m) - 1;
    let mut dp = vec![f64::INFINITY; (1 << m) * m];
    let mut from = vec![u8::MAX; (1 << m) * m];
    for j in 0..m {
        dp[(1 << j) * m + j] = inst.cost(0, j + 1);
    }
    for mask in 1..=full {
        for j in 0..m {
            if mask & (1 << j) == 0 {
                continue;
            }
            let cur = dp[mask * m + j];
            if !cur.is_finite() {
                continue;
            }
            for k in 0..m {
                if mask & (1 << k) != 0 {
                    continue;
                }
                let next = mask | (1 << k);
                let c = cur + inst.cost(j + 1, k + 1);
                if c < dp[next * m + k] {
                    dp[next * m + k] = c;
                    from[next * m + k] = j as u8;
                }
            }
        }
    }
    let (mut best, mut last) = (f64::INFINITY, 0);
    for j in 0..m {
        let c = dp[full * m + j] + inst.cost(j + 1, 0);
        if c < best {
            best = c;
            last = j;
        }
    }
    let mut tour = Vec::with_capacity(n);
    let mut mask = full;
    let mut j = last;
    loop {
        tour.push(j + 1);
        let p = from[mask * m + j];
        mask &= !(1 << j);
        if p == u8::MAX {
            break;
        }
        j = p as usize;
    }
    tour.push(0);
    tour.reverse();
    Ok((best, tour))
}

/// Nearest-neighbour tour improved by 2-opt until no move helps.
pub fn heuristic_tour(inst: &Instance) -> (f64, Vec<usize>) {
    let n = inst.n();
    let mut tour = Vec::with_capacity(n);
    let mut used = vec![false; n];
    let mut cur = 0;
    used[0] = true;
    tour.push(0);
    for _ in 1..n {
        let next = (0..n)
            .filter(|&v| !used[v])
            .min_by(|&a, &b| inst.cost(cur, a).total_cmp(&inst.cost(cur, b)))
            .unwrap();
        used[next] = true;
        tour.push(next);
        cur = next;
    }
    loop {
        let mut improved = false;
        for i in 0..n - 1 {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (a, b) = (tour[i], tour[i + 1]);
                let (c, d) = (tour[j], tour[(j + 1) % n]);
                let delta = inst.cost(a, c) + inst.cost(b, d) - inst.cost(a, b) - inst.cost(c, d);
                if delta < -1e-10 {
                    tour[i + 1..=j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    (inst.tour_cost(&tour), tour)
}

/// Optimal cost: the DP when it applies, otherwise a branch-and-bound run
/// seeded with the heuristic tour. Falls back to the heuristic cost if the
/// search does not finish within `time_limit` work-seconds.
pub fn reference_optimum(inst: &Instance, time_limit: f64) -> Result<f64, BenchError> {
    if inst.n() <= DP_MAX_N {
        return dp_optimal(inst);
    }
    let (h, _) = heuristic_tour(inst);
    let ub = h * (1.0 + 1e-9) + 1e-12;
    let res = solve(inst, &SolveConfig::new(UpperBound::Given(ub)).with_time_limit(time_limit))?;
    if res.status != SolveStatus::Optimal {
        log::warn!("reference search timed out; using the heuristic tour cost {h}");
    }
    Ok(res.incumbent.unwrap_or(h).min(h))
}

/// Integral over `[0, horizon]` of the relative primal-dual gap, clamped to
/// `[0, 1]`. The gap is 1 before the first event.
pub fn compute_pdi(log: &[BoundEvent], horizon: f64) -> f64 {
    let gap = |e: &BoundEvent| {
        let g = (e.primal - e.dual) / e.primal.abs().max(1e-12);
        if g.is_nan() { 1.0 } else { g.clamp(0.0, 1.0) }
    };
    let mut total = 0.0;
    let mut t = 0.0;
    let mut g = 1.0;
    for e in log {
        let until = e.time.min(horizon);
        if until > t {
            total += g * (until - t);
            t = until;
        }
        g = gap(e);
    }
    if horizon > t {
        total += g * (horizon - t);
    }
    total
}

/// `100 · (ub − best_dual) / ub`, floored at zero.
pub fn opt_gap(best_dual: f64, ub: f64) -> Result<f64, BenchError> {
    if !(ub > 0.0) || !ub.is_finite() {
        return Err(BenchError::InvalidUpperBound(ub));
    }
    Ok((100.0 * (ub - best_dual) / ub).max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub config: String,
    pub instance: String,
    pub n: usize,
    /// Solver seconds on the configured clock.
    pub time: f64,
    pub solved: bool,
    pub pdi: f64,
    pub filtered_pct: f64,
    pub opt_gap_pct: f64,
    pub nodes: usize,
    pub root_bound: f64,
    pub best_dual: f64,
    pub primal: f64,
}

/// One solver configuration in a benchmark.
#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub name: String,
    /// Model file to load, if any.
    pub model_path: Option<PathBuf>,
    /// Everything but the upper bound and the model.
    pub template: SolveConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub config: String,
    pub instances: usize,
    pub solved: usize,
    pub mean_time: f64,
    pub mean_pdi: f64,
    pub mean_filtered_pct: f64,
    pub mean_opt_gap_pct: f64,
}

impl Aggregate {
    pub fn from_runs(config: &str, runs: &[&RunMetrics]) -> Self {
        let k = runs.len().max(1) as f64;
        let mean = |f: fn(&RunMetrics) -> f64| runs.iter().map(|r| f(r)).sum::<f64>() / k;
        Aggregate {
            config: config.to_string(),
            instances: runs.len(),
            solved: runs.iter().filter(|r| r.solved).count(),
            mean_time: mean(|r| r.time),
            mean_pdi: mean(|r| r.pdi),
            mean_filtered_pct: mean(|r| r.filtered_pct),
            mean_opt_gap_pct: mean(|r| r.opt_gap_pct),
        }
    }
}

/// Relative change of a configuration against the baseline, in percent;
/// positive means smaller (better) than the baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub config: String,
    pub baseline: String,
    pub time_pct: f64,
    pub pdi_pct: f64,
    pub opt_gap_pct: f64,
    /// Mean gap of the configuration over mean gap of the baseline.
    pub gap_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigFailure {
    pub config: String,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub runs: Vec<RunMetrics>,
    pub aggregates: Vec<Aggregate>,
    pub improvements: Vec<Improvement>,
    pub failures: Vec<ConfigFailure>,
}

fn relative(base: f64, x: f64) -> f64 {
    if base == 0.0 { 0.0 } else { 100.0 * (base - x) / base }
}

/// Metrics of one solve against the configured upper bound.
pub fn measure(inst: &Instance, config: &str, cfg: &SolveConfig) -> Result<RunMetrics, BenchError> {
    let res = solve(inst, cfg)?;
    let solved = res.status == SolveStatus::Optimal;
    let primal = res.primal();
    let gap = if solved { 0.0 } else { opt_gap(res.best_dual, primal)? };
    Ok(RunMetrics {
        config: config.to_string(),
        instance: inst.provenance().name.clone(),
        n: inst.n(),
        time: res.elapsed,
        solved,
        pdi: compute_pdi(&res.bound_event_log, cfg.time_limit),
        filtered_pct: 100.0 * res.root_filtered_fraction,
        opt_gap_pct: gap,
        nodes: res.nodes_explored,
        root_bound: res.root_bound.unwrap_or(f64::NEG_INFINITY),
        best_dual: res.best_dual,
        primal,
    })
}

/// Solves every instance under every configuration with
/// `UB = ub_factor × optima[i]`. Runs are spread over the current rayon pool;
/// results keep (config, instance) order. The first configuration is the
/// baseline for improvements and scatter data.
pub fn run_benchmark(instances: &[Instance], optima: &[f64], configs: &[BenchConfig], ub_factor: f64) -> BenchReport {
    assert_eq!(instances.len(), optima.len());
    let mut report = BenchReport::default();
    let mut ready: Vec<(String, SolveConfig)> = Vec::new();
    for c in configs {
        let mut cfg = c.template.clone();
        if let Some(p) = &c.model_path {
            match load_params(p) {
                Ok(m) => cfg.model = Some(m.params),
                Err(e) => {
                    report.failures.push(ConfigFailure { config: c.name.clone(), error: format!("{}: {e}", p.display()) });
                    continue;
                }
            }
        }
        ready.push((c.name.clone(), cfg));
    }

    let jobs: Vec<(usize, usize)> = (0..ready.len()).flat_map(|c| (0..instances.len()).map(move |i| (c, i))).collect();
    let results: Vec<Result<RunMetrics, String>> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let (name, template) = &ready[c];
            let mut cfg = template.clone();
            cfg.upper_bound = UpperBound::OptimalTimesFactor { optimum: optima[i], factor: ub_factor };
            measure(&instances[i], name, &cfg).map_err(|e| e.to_string())
        })
        .collect();
    for ((c, i), r) in jobs.iter().zip(results) {
        match r {
            Ok(m) => report.runs.push(m),
            Err(e) => report.failures.push(ConfigFailure {
                config: ready[*c].0.clone(),
                error: format!("{}: {e}", instances[*i].provenance().name),
            }),
        }
    }

    for (name, _) in &ready {
        let runs: Vec<&RunMetrics> = report.runs.iter().filter(|r| &r.config == name).collect();
        report.aggregates.push(Aggregate::from_runs(name, &runs));
    }
    if let Some(base) = report.aggregates.first().cloned() {
        for a in &report.aggregates[1..] {
            report.improvements.push(Improvement {
                config: a.config.clone(),
                baseline: base.config.clone(),
                time_pct: relative(base.mean_time, a.mean_time),
                pdi_pct: relative(base.mean_pdi, a.mean_pdi),
                opt_gap_pct: relative(base.mean_opt_gap_pct, a.mean_opt_gap_pct),
                gap_ratio: if base.mean_opt_gap_pct == 0.0 {
                    if a.mean_opt_gap_pct == 0.0 { 1.0 } else { f64::INFINITY }
                } else {
                    a.mean_opt_gap_pct / base.mean_opt_gap_pct
                },
            });
        }
    }
    report
}

/// Paired per-instance gaps of `config` against `baseline`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub instance: String,
    pub baseline_gap_pct: f64,
    pub config_gap_pct: f64,
    pub baseline_time: f64,
    pub config_time: f64,
}

impl BenchReport {
    pub fn scatter(&self, baseline: &str, config: &str) -> Vec<ScatterRow> {
        let base: Vec<&RunMetrics> = self.runs.iter().filter(|r| r.config == baseline).collect();
        self.runs
            .iter()
            .filter(|r| r.config == config)
            .filter_map(|r| {
                let b = base.iter().find(|b| b.instance == r.instance)?;
                Some(ScatterRow {
                    instance: r.instance.clone(),
                    baseline_gap_pct: b.opt_gap_pct,
                    config_gap_pct: r.opt_gap_pct,
                    baseline_time: b.time,
                    config_time: r.time,
                })
            })
            .collect()
    }

    /// Writes `runs.csv`, `summary.csv`, `improvement.csv`, one
    /// `scatter_<config>.csv` per non-baseline configuration, `errors.csv`
    /// when something failed, and `report.txt` describing the metrics.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: &str, rows: &mut dyn FnMut(&mut csv::Writer<fs::File>) -> Result<(), csv::Error>| {
            let path = dir.join(name);
            let mut w = csv::Writer::from_path(&path)?;
            rows(&mut w)?;
            w.flush()?;
            written.push(path);
            Ok::<(), BenchError>(())
        };
        put("runs.csv", &mut |w| self.runs.iter().try_for_each(|r| w.serialize(r)))?;
        put("summary.csv", &mut |w| self.aggregates.iter().try_for_each(|r| w.serialize(r)))?;
        put("improvement.csv", &mut |w| {
            if self.improvements.is_empty() {
                w.write_record(["config", "baseline", "time_pct", "pdi_pct", "opt_gap_pct", "gap_ratio"])?;
            }
            self.improvements.iter().try_for_each(|r| w.serialize(r))
        })?;
        if let Some(base) = self.aggregates.first() {
            for a in &self.aggregates[1..] {
                let rows = self.scatter(&base.config, &a.config);
                put(&format!("scatter_{}.csv", a.config), &mut |w| {
                    if rows.is_empty() {
                        w.write_record(["instance", "baseline_gap_pct", "config_gap_pct", "baseline_time", "config_time"])?;
                    }
                    rows.iter().try_for_each(|r| w.serialize(r))
                })?;
            }
        }
        if !self.failures.is_empty() {
            put("errors.csv", &mut |w| self.failures.iter().try_for_each(|r| w.serialize(r)))?;
        }
        let path = dir.join("report.txt");
        let mut f = fs::File::create(&path)?;
        writeln!(f, "pdi = integral over [0, time_limit] of clamp((primal - dual) / |primal|, 0, 1) dt, gap 1 before the first bound")?;
        writeln!(f, "opt_gap_pct = 100 * (primal - best_dual) / primal at termination, 0 when solved")?;
        writeln!(f, "filtered_pct = share of edges fixed at the root before branching")?;
        writeln!(f, "time = solver seconds on the configured clock")?;
        writeln!(f)?;
        for a in &self.aggregates {
            writeln!(
                f,
                "{:<16} solved {:>3}/{:<3} time {:>9.3} pdi {:>9.4} filtered {:>6.2}% gap {:>7.4}%",
                a.config, a.solved, a.instances, a.mean_time, a.mean_pdi, a.mean_filtered_pct, a.mean_opt_gap_pct
            )?;
        }
        for i in &self.improvements {
            writeln!(f, "{} vs {}: gap ratio {:.4}", i.config, i.baseline, i.gap_ratio)?;
        }
        written.push(path);
        Ok(written)
    }
}

/// Writes a bound event log as `time,primal,dual` rows.
pub fn write_event_log(log: &[BoundEvent], path: &Path) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for e in log {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}
