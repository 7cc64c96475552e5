//! Subgradient ascent on a random instance, against the exact optimum.
//!
//! cargo run --release --example ascent -- [n] [seed]

use hklearn::bench::{dp_optimal, heuristic_tour, DP_MAX_N};
use hklearn::heldkarp::{ascend, hk_bound, MultiplierVector, StepSchedule};
use hklearn::instance::generate_random;

fn main() {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(14, |s| s.parse().expect("n"));
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let inst = generate_random(n, seed).unwrap();

    let reference = if n <= DP_MAX_N { dp_optimal(&inst).unwrap() } else { heuristic_tour(&inst).0 };
    println!("{} cities, reference tour cost {reference:.5}", n);

    let zero = MultiplierVector::zeros(n);
    println!("{:>6} {:>10} {:>8}", "iters", "bound", "ratio");
    let b0 = hk_bound(&inst, &zero).unwrap().bound;
    println!("{:>6} {:>10.5} {:>8.4}", 0, b0, b0 / reference);
    for iters in [10, 30, 100, 300, 1000] {
        let schedule = StepSchedule::default().with_max_iters(iters);
        let a = ascend(&inst, zero.clone(), &schedule, None).unwrap();
        println!("{:>6} {:>10.5} {:>8.4}  ({} evaluations)", iters, a.best.bound, a.best.bound / reference, a.evaluations);
    }
}
