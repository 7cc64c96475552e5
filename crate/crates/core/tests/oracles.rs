mod common;

use hklearn::bench::{dp_optimal, dp_optimal_tour};
use hklearn::heldkarp::{hk_bound, MultiplierVector};
use hklearn::instance::{generate_random, EdgeState, Instance};
use hklearn::onetree::{minimum_1tree, OneTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{all_optimal_tours, random_matrix_instance};

/// Decodes a Prüfer sequence over `labels` into tree edges.
fn prufer_edges(seq: &[usize], labels: &[usize]) -> Vec<(usize, usize)> {
    let k = labels.len();
    let mut degree = vec![1; k];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(k - 1);
    for &s in seq {
        let leaf = (0..k).find(|&v| degree[v] == 1).unwrap();
        edges.push((labels[leaf], labels[s]));
        degree[leaf] -= 1;
        degree[s] -= 1;
    }
    let rest: Vec<usize> = (0..k).filter(|&v| degree[v] == 1).collect();
    edges.push((labels[rest[0]], labels[rest[1]]));
    edges
}

/// Minimum 1-tree by enumerating every spanning tree of nodes 1..n and every
/// pair of edges at node 0, honouring edge states.
fn brute_force(inst: &Instance, costs: &[f64]) -> Option<f64> {
    let n = inst.n();
    let labels: Vec<usize> = (1..n).collect();
    let k = labels.len();
    let mandatory: Vec<usize> = (0..inst.edge_count()).filter(|&e| inst.state(e) == EdgeState::Mandatory).collect();
    let usable = |e: usize| inst.state(e) != EdgeState::Forbidden;
    let mut best: Option<f64> = None;
    let mut seq = vec![0; k.saturating_sub(2)];
    loop {
        let tree: Vec<usize> = prufer_edges(&seq, &labels).iter().map(|&(a, b)| inst.edge(a, b)).collect();
        if tree.iter().all(|&e| usable(e)) {
            for a in 1..n {
                for b in a + 1..n {
                    let (ea, eb) = (inst.edge(0, a), inst.edge(0, b));
                    if !usable(ea) || !usable(eb) {
                        continue;
                    }
                    let chosen = |e: usize| e == ea || e == eb || tree.contains(&e);
                    if !mandatory.iter().all(|&e| chosen(e)) {
                        continue;
                    }
                    let c = tree.iter().map(|&e| costs[e]).sum::<f64>() + costs[ea] + costs[eb];
                    if best.is_none_or(|b| c < b) {
                        best = Some(c);
                    }
                }
            }
        }
        // next sequence in odometer order
        let mut i = 0;
        while i < seq.len() && seq[i] == k - 1 {
            seq[i] = 0;
            i += 1;
        }
        if i == seq.len() {
            break;
        }
        seq[i] += 1;
    }
    best
}

#[test]
fn minimum_1tree_matches_enumeration_with_negative_costs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let n = rng.gen_range(3..=8);
        let mut inst = random_matrix_instance(&mut rng, n, 0.0, 10.0, case % 3 == 0);
        if case % 2 == 1 {
            for _ in 0..rng.gen_range(1..=3) {
                let e = rng.gen_range(0..inst.edge_count());
                let s = if rng.gen_bool(0.5) { EdgeState::Forbidden } else { EdgeState::Mandatory };
                // some draws would give a node three mandatory edges
                let _ = inst.set_state(e, s);
            }
        }
        let costs: Vec<f64> = (0..inst.edge_count()).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let expected = brute_force(&inst, &costs);
        let got = minimum_1tree(&inst, &costs).ok();
        match (expected, &got) {
            (Some(e), Some(t)) => {
                assert!((e - t.total_cost()).abs() < 1e-9, "case {case}: {e} vs {}", t.total_cost());
                assert!((t.cost_under(&costs) - t.total_cost()).abs() < 1e-9);
            }
            (None, None) => {}
            _ => panic!("case {case}: brute force {expected:?}, solver {:?}", got.map(|t| t.total_cost())),
        }
    }
}

#[test]
fn forbidding_an_edge_never_lowers_the_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let n = rng.gen_range(4..=15);
        let mut inst = random_matrix_instance(&mut rng, n, 1.0, 20.0, true);
        let costs: Vec<f64> = (0..inst.edge_count()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut last = minimum_1tree(&inst, &costs).unwrap().total_cost();
        for _ in 0..n {
            let e = rng.gen_range(0..inst.edge_count());
            if inst.state(e) != EdgeState::Free {
                continue;
            }
            inst.set_state(e, EdgeState::Forbidden).unwrap();
            match minimum_1tree(&inst, &costs) {
                Ok(t) => {
                    assert!(t.total_cost() >= last - 1e-12);
                    last = t.total_cost();
                }
                Err(_) => break,
            }
        }
    }
}

#[test]
fn optimal_tours_are_one_trees() {
    for seed in 0..30 {
        let inst = generate_random(5 + (seed as usize % 10), seed).unwrap();
        let (cost, tour) = dp_optimal_tour(&inst).unwrap();
        let n = inst.n();
        let edges: Vec<usize> = (0..n).map(|k| inst.edge(tour[k], tour[(k + 1) % n])).collect();
        let costs = inst.edge_costs();
        let tree = OneTree::from_edges(&inst, edges, &costs).expect("a tour is a 1-tree");
        assert!(tree.is_tour());
        assert!((tree.total_cost() - cost).abs() < 1e-9);
        assert!(tree.degrees().iter().all(|&d| d == 2));
    }
}

#[test]
fn dp_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..40 {
        let n = rng.gen_range(3..=10);
        let inst = if case % 2 == 0 {
            generate_random(n.max(5), 700 + case).unwrap()
        } else {
            random_matrix_instance(&mut rng, n, 1.0, 50.0, true)
        };
        let (opt, tour) = dp_optimal_tour(&inst).unwrap();
        let (brute, masks) = all_optimal_tours(&inst, 1e-9);
        assert!((opt - brute).abs() < 1e-9, "case {case}");
        assert!((inst.tour_cost(&tour) - opt).abs() < 1e-9);
        assert!(!masks.is_empty());
    }
}

#[test]
fn bound_never_exceeds_optimum_on_integer_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let n = rng.gen_range(4..=11);
        let inst = random_matrix_instance(&mut rng, n, 0.0, 30.0, true);
        let opt = dp_optimal(&inst).unwrap();
        for _ in 0..10 {
            let scale = [0.1, 5.0, 1e3][rng.gen_range(0..3)];
            let theta = MultiplierVector((0..n).map(|_| rng.gen_range(-scale..scale)).collect());
            let b = hk_bound(&inst, &theta).unwrap().bound;
            assert!(b <= opt + 1e-9 * opt.max(1.0) * scale.max(1.0), "{b} > {opt}");
        }
    }
}
