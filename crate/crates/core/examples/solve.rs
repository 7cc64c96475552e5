//! Exact search on a random instance, optionally warm-started by a model.
//!
//! cargo run --release --example solve -- [n] [seed] [model.json]

use hklearn::bench::{compute_pdi, reference_optimum};
use hklearn::bnb::{solve, SolveConfig, UpperBound};
use hklearn::egat::load_params;
use hklearn::instance::generate_random;

fn main() {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(30, |s| s.parse().expect("n"));
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let model = args.next().map(|p| load_params(p).expect("model").params);

    let inst = generate_random(n, seed).unwrap();
    let opt = reference_optimum(&inst, 600.0).unwrap();
    let mut cfg = SolveConfig::new(UpperBound::OptimalTimesFactor { optimum: opt, factor: 1.02 }).with_time_limit(10.0);
    cfg.model = model;

    let res = solve(&inst, &cfg).unwrap();
    println!("status {:?}, incumbent {:?}, reference {opt:.5}", res.status, res.incumbent);
    println!("root bound {:.5}, {:.1}% of edges fixed at the root", res.root_bound.unwrap_or(f64::NAN), 100.0 * res.root_filtered_fraction);
    println!("{} nodes, {} 1-tree evaluations, {:.4} work-seconds", res.nodes_explored, res.evaluations, res.elapsed);
    println!("primal-dual integral {:.5}", compute_pdi(&res.bound_event_log, cfg.time_limit));
    if let Some(tour) = &res.tour {
        println!("tour {tour:?}");
    }
}
