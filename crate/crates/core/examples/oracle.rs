//! Exact DP optimum against the nearest-neighbour + 2-opt heuristic.

use hklearn::bench::{dp_optimal, heuristic_tour};
use hklearn::instance::DatasetConfig;

fn main() {
    for inst in DatasetConfig::clustered(14, 5).generate_many(5).unwrap() {
        let opt = dp_optimal(&inst).unwrap();
        let (h, _) = heuristic_tour(&inst);
        println!("{:<16} optimum {opt:.5}  heuristic {h:.5}  excess {:.2}%", inst.provenance().name, 100.0 * (h / opt - 1.0));
    }
}
