use hklearn::egat::{forward, init_params};
use hklearn::heldkarp::{hk_bound, modified_costs, MultiplierVector};
use hklearn::instance::{generate_clustered, generate_random, CostModel, EdgeState, Instance, Provenance};
use proptest::prelude::*;

/// Same points with node `perm[i]` of the result placed at node `i`'s coordinates.
fn relabel(inst: &Instance, perm: &[usize]) -> Instance {
    let n = inst.n();
    let mut coords = vec![[0.0; 2]; n];
    for i in 0..n {
        coords[perm[i]] = inst.coords()[i];
    }
    let mut out = Instance::from_coords(coords, CostModel::Euclidean, Provenance::default()).unwrap();
    for e in 0..inst.edge_count() {
        let (i, j) = inst.endpoints(e);
        out.set_state(out.edge(perm[i], perm[j]), inst.state(e)).unwrap();
    }
    out.compute_features();
    out
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    // node 0 is special for the 1-tree and keeps its label
    Just((1..n).collect::<Vec<usize>>()).prop_shuffle().prop_map(|rest| {
        let mut p = vec![0];
        p.extend(rest);
        p
    })
}

fn case() -> impl Strategy<Value = (usize, u64, Vec<usize>)> {
    (5usize..16, any::<u64>()).prop_flat_map(|(n, seed)| (Just(n), Just(seed), permutation(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_is_permutation_equivariant((n, seed, perm) in case(), forbid in 0usize..10) {
        let mut inst = generate_random(n, seed).unwrap();
        let e = forbid % inst.edge_count();
        if inst.endpoints(e).0 != 0 {
            inst.set_state(e, EdgeState::Forbidden).unwrap();
            inst.compute_features();
        }
        let params = init_params(seed % 7);
        let a = forward(&params, &inst).unwrap().0;
        let b = forward(&params, &relabel(&inst, &perm)).unwrap().0;
        for i in 0..n {
            prop_assert!((a.0[i] - b.0[perm[i]]).abs() < 1e-9);
        }
    }

    #[test]
    fn bound_is_relabeling_invariant((n, seed, perm) in case(), scale in 0.0f64..5.0) {
        let inst = generate_random(n, seed).unwrap();
        let other = relabel(&inst, &perm);
        let theta: Vec<f64> = (0..n).map(|i| scale * ((i * 7 % 5) as f64 - 2.0)).collect();
        let mut moved = vec![0.0; n];
        for i in 0..n {
            moved[perm[i]] = theta[i];
        }
        let a = hk_bound(&inst, &MultiplierVector(theta)).unwrap().bound;
        let b = hk_bound(&other, &MultiplierVector(moved)).unwrap().bound;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn subgradient_sums_to_zero(n in 5usize..30, seed in any::<u64>(), scale in 0.0f64..10.0) {
        let inst = generate_random(n, seed).unwrap();
        let theta = MultiplierVector((0..n).map(|i| scale * (((i * 31 + seed as usize) % 13) as f64 / 6.0 - 1.0)).collect());
        let r = hk_bound(&inst, &theta).unwrap();
        prop_assert_eq!(r.subgradient.iter().sum::<i64>(), 0);
    }

    #[test]
    fn costs_symmetric_and_features_idempotent(n in 5usize..40, seed in any::<u64>(), clustered in any::<bool>()) {
        let mut inst = if clustered { generate_clustered(n, 5, 0.1, seed).unwrap() } else { generate_random(n, seed).unwrap() };
        for i in 0..inst.n() {
            prop_assert_eq!(inst.cost(i, i), 0.0);
            for j in 0..inst.n() {
                prop_assert_eq!(inst.cost(i, j), inst.cost(j, i));
            }
        }
        let before = (inst.node_features().to_vec(), inst.edge_features().to_vec());
        inst.compute_features();
        prop_assert_eq!(before, (inst.node_features().to_vec(), inst.edge_features().to_vec()));
    }
}

#[test]
fn subgradient_matches_finite_differences_away_from_ties() {
    let mut checked = 0;
    for seed in 0..200u64 {
        let n = 6 + (seed as usize % 15);
        let inst = generate_random(n, seed).unwrap();
        let theta = MultiplierVector((0..n).map(|i| 0.05 * ((i as f64 + seed as f64).sin())).collect());
        let mut c = modified_costs(&inst, &theta);
        c.sort_by(f64::total_cmp);
        if c.windows(2).any(|w| w[1] - w[0] < 1e-6) {
            continue;
        }
        let r = hk_bound(&inst, &theta).unwrap();
        let eps = 1e-8;
        for i in 0..n {
            let mut up = theta.clone();
            up.0[i] += eps;
            let mut down = theta.clone();
            down.0[i] -= eps;
            let fd = (hk_bound(&inst, &up).unwrap().bound - hk_bound(&inst, &down).unwrap().bound) / (2.0 * eps);
            assert!((fd - r.subgradient[i] as f64).abs() < 1e-5, "seed {seed} node {i}: {fd} vs {}", r.subgradient[i]);
        }
        checked += 1;
    }
    assert!(checked > 100);
}

#[test]
fn forward_is_size_agnostic() {
    let params = init_params(3);
    for n in [5, 200] {
        let theta = forward(&params, &generate_random(n, 1).unwrap()).unwrap().0;
        assert_eq!(theta.len(), n);
        assert!(theta.is_finite());
    }
}

#[test]
fn degree_feature_counts_forbidden_edges() {
    let mut inst = generate_random(9, 4).unwrap();
    let start = inst.node_features()[3][4];
    for (k, j) in [0, 1, 5, 8].into_iter().enumerate() {
        inst.set_state(inst.edge(3, j), EdgeState::Forbidden).unwrap();
        inst.compute_features();
        assert_eq!(inst.node_features()[3][4], start - (k + 1) as f64);
    }
    // mandatory edges leave it alone
    inst.set_state(inst.edge(3, 2), EdgeState::Mandatory).unwrap();
    inst.compute_features();
    assert_eq!(inst.node_features()[3][4], start - 4.0);
}
