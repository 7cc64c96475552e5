//! Bounds on the five-city instance: the plain 1-tree, one subgradient step,
//! and the exact optimum.

use hklearn::bench::dp_optimal_tour;
use hklearn::heldkarp::{hk_bound, subgradient_ascent, MultiplierVector, StepSchedule};
use hklearn::instance::five_city_example;

fn main() {
    let inst = five_city_example();
    let zero = MultiplierVector::zeros(inst.n());

    let plain = hk_bound(&inst, &zero).unwrap();
    println!("HK(0) = {}", plain.bound);
    println!("1-tree edges: {:?}", plain.tree.edges().iter().map(|&e| inst.endpoints(e)).collect::<Vec<_>>());
    println!("subgradient: {:?}", plain.subgradient);

    let (theta, stepped) = subgradient_ascent(&inst, zero, &StepSchedule::constant(2.0, 1)).unwrap();
    println!("after one step of size 2: theta = {:?}, HK = {}", theta.0, stepped.bound);
    println!("1-tree is a tour: {}", stepped.tree.is_tour());

    let (opt, tour) = dp_optimal_tour(&inst).unwrap();
    println!("optimal tour {tour:?} costs {opt}");
}
