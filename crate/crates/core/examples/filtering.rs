//! How many edges the root bound fixes as the upper bound tightens.

use hklearn::bench::dp_optimal;
use hklearn::bnb::filter_edges;
use hklearn::heldkarp::{modified_costs, subgradient_ascent, MultiplierVector, StepSchedule};
use hklearn::instance::generate_random;

fn main() {
    let inst = generate_random(16, 7).unwrap();
    let opt = dp_optimal(&inst).unwrap();
    let (theta, res) = subgradient_ascent(&inst, MultiplierVector::zeros(inst.n()), &StepSchedule::default()).unwrap();
    let costs = modified_costs(&inst, &theta);
    println!("optimum {opt:.5}, root bound {:.5}", res.bound);
    for factor in [1.2, 1.1, 1.05, 1.02, 1.01, 1.001] {
        let f = filter_edges(&inst, &costs, &res, factor * opt, 1e-6);
        println!(
            "UB = {factor:<5} x opt: {:>3} forbidden, {:>2} mandatory of {} edges",
            f.forbidden.len(),
            f.mandatory.len(),
            inst.edge_count()
        );
    }
}
