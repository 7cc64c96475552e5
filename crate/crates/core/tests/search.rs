mod common;

use hklearn::bench::dp_optimal;
use hklearn::bnb::{solve, solve_observed, ClockKind, SearchNode, SearchObserver, SolveConfig, SolveStatus, UpperBound};
use hklearn::egat::init_params;
use hklearn::instance::{five_city_example, generate_clustered, generate_random, EdgeState, Instance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{all_optimal_tours, random_matrix_instance};

/// Records filtering that removes an optimal tour still compatible with the
/// current states.
struct Audit {
    optimal: Vec<u128>,
    violations: usize,
    nodes: usize,
}

impl SearchObserver for Audit {
    fn on_fixings(&mut self, inst: &Instance, forbidden: &[usize], mandatory: &[usize]) {
        let mask = |es: &mut dyn Iterator<Item = usize>| es.fold(0u128, |m, e| m | 1 << e);
        let must = mask(&mut (0..inst.edge_count()).filter(|&e| inst.state(e) == EdgeState::Mandatory));
        let must_not = mask(&mut (0..inst.edge_count()).filter(|&e| inst.state(e) == EdgeState::Forbidden));
        let (f, m) = (mask(&mut forbidden.iter().copied()), mask(&mut mandatory.iter().copied()));
        for &t in &self.optimal {
            if t & must == must && t & must_not == 0 && (t & f != 0 || t & m != m) {
                self.violations += 1;
            }
        }
    }

    fn on_node(&mut self, _node: &SearchNode, _inst: &Instance) {
        self.nodes += 1;
    }
}

#[test]
fn exact_and_sound_on_tie_heavy_integer_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..60 {
        let n = rng.gen_range(5..=9);
        // few distinct values make many optimal tours and many ties
        let inst = random_matrix_instance(&mut rng, n, 1.0, 6.0, true);
        let (opt, optimal) = all_optimal_tours(&inst, 1e-9);
        for factor in [1.0001, 1.02, 1.5] {
            let cfg = SolveConfig::new(UpperBound::OptimalTimesFactor { optimum: opt, factor });
            let mut audit = Audit { optimal: optimal.clone(), violations: 0, nodes: 0 };
            let res = solve_observed(&inst, &cfg, &mut audit).unwrap();
            assert_eq!(res.status, SolveStatus::Optimal, "case {case}");
            assert_eq!(res.incumbent, Some(opt), "case {case} factor {factor}");
            assert_eq!(audit.violations, 0, "case {case} factor {factor}");
            assert_eq!(audit.nodes, res.nodes_explored);
        }
    }
}

#[test]
fn untrained_model_changes_speed_not_answers() {
    let model = init_params(5);
    for seed in 0..30 {
        let inst = if seed % 2 == 0 { generate_random(11, seed).unwrap() } else { generate_clustered(11, 3, 0.1, seed).unwrap() };
        let opt = dp_optimal(&inst).unwrap();
        let cfg = SolveConfig::new(UpperBound::OptimalTimesFactor { optimum: opt, factor: 1.02 }).with_model(model.clone());
        let res = solve(&inst, &cfg).unwrap();
        assert_eq!(res.status, SolveStatus::Optimal);
        assert!((res.incumbent.unwrap() - opt).abs() < 1e-9);
    }
}

#[test]
fn dual_stays_valid_when_time_runs_out() {
    let mut timed_out = 0;
    for seed in 0..20 {
        let inst = generate_random(16, 300 + seed).unwrap();
        let opt = dp_optimal(&inst).unwrap();
        let cfg = SolveConfig::new(UpperBound::OptimalTimesFactor { optimum: opt, factor: 1.05 }).with_time_limit(2e-4);
        let res = solve(&inst, &cfg).unwrap();
        if res.status == SolveStatus::TimedOut {
            timed_out += 1;
        }
        assert!(res.best_dual <= opt + 1e-9);
        assert!(res.best_dual <= res.primal() + 1e-9);
        let log = &res.bound_event_log;
        assert!(log.windows(2).all(|w| w[0].time <= w[1].time));
        assert!(log.windows(2).all(|w| w[0].dual <= w[1].dual && w[0].primal >= w[1].primal));
        assert!(log.iter().all(|e| e.dual <= e.primal + 1e-9));
    }
    assert!(timed_out > 0, "the limit should stop some runs");
}

#[test]
fn worked_example_with_upper_bound_63() {
    let res = solve(&five_city_example(), &SolveConfig::new(UpperBound::Given(63.0))).unwrap();
    assert_eq!(res.status, SolveStatus::Optimal);
    assert_eq!(res.incumbent, Some(62.0));
    assert_eq!(res.best_dual, 62.0);
}

#[test]
fn work_clock_is_reproducible() {
    let inst = generate_random(25, 8).unwrap();
    let mut cfg = SolveConfig::new(UpperBound::Given(f64::INFINITY)).with_time_limit(0.01);
    cfg.clock = ClockKind::Work;
    let a = solve(&inst, &cfg).unwrap();
    let b = solve(&inst, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
