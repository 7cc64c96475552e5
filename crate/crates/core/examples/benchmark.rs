//! Baseline against warm-started search on a small suite, written as CSV.
//!
//! cargo run --release --example benchmark -- [model.json] [out-dir]

use std::path::PathBuf;

use hklearn::bench::{reference_optimum, run_benchmark, BenchConfig};
use hklearn::bnb::{SolveConfig, UpperBound};
use hklearn::instance::DatasetConfig;

fn main() {
    let mut args = std::env::args().skip(1);
    let model = args.next().map(PathBuf::from);
    let out = args.next().map_or_else(|| std::env::temp_dir().join("hklearn-bench"), PathBuf::from);

    let instances = DatasetConfig::random(25, 11).generate_many(12).unwrap();
    let optima: Vec<f64> = instances.iter().map(|i| reference_optimum(i, 600.0).unwrap()).collect();
    let template = SolveConfig::new(UpperBound::Given(f64::INFINITY)).with_time_limit(2.0);
    let mut configs = vec![BenchConfig { name: "HK".into(), model_path: None, template: template.clone() }];
    if let Some(m) = model {
        configs.push(BenchConfig { name: "GNN+HK".into(), model_path: Some(m), template });
    }

    let report = run_benchmark(&instances, &optima, &configs, 1.02);
    for a in &report.aggregates {
        println!(
            "{:<8} solved {}/{}  time {:.4}  pdi {:.5}  filtered {:.1}%  gap {:.4}%",
            a.config, a.solved, a.instances, a.mean_time, a.mean_pdi, a.mean_filtered_pct, a.mean_opt_gap_pct
        );
    }
    for f in &report.failures {
        println!("failed: {} {}", f.config, f.error);
    }
    for path in report.write(&out).unwrap() {
        println!("wrote {}", path.display());
    }
}
