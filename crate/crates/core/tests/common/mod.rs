//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use hklearn::instance::{EdgeState, Instance, Provenance};
use rand::Rng;

/// Edge set of a tour as a bitmask over edge indices (n ≤ 16).
pub fn tour_mask(inst: &Instance, tour: &[usize]) -> u128 {
    let n = tour.len();
    (0..n).fold(0u128, |m, k| m | 1u128 << inst.edge(tour[k], tour[(k + 1) % n]))
}

/// Every optimal tour (each undirected cycle once), by exhaustive search with
/// cost pruning. Returns the optimum and the tours' edge masks.
pub fn all_optimal_tours(inst: &Instance, tol: f64) -> (f64, Vec<u128>) {
    let n = inst.n();
    assert!((3..=12).contains(&n));
    let mut best = f64::INFINITY;
    let mut found: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut path = vec![0usize];
    let mut used = vec![false; n];
    used[0] = true;
    fn rec(
        inst: &Instance,
        path: &mut Vec<usize>,
        used: &mut [bool],
        cost: f64,
        tol: f64,
        best: &mut f64,
        found: &mut Vec<(f64, Vec<usize>)>,
    ) {
        let n = inst.n();
        if cost > *best + tol {
            return;
        }
        if path.len() == n {
            // one orientation per cycle
            if path[1] > path[n - 1] {
                return;
            }
            let total = cost + inst.cost(path[n - 1], 0);
            if total <= *best + tol {
                if total < *best {
                    *best = total;
                }
                found.push((total, path.clone()));
            }
            return;
        }
        let last = *path.last().unwrap();
        for v in 1..n {
            if !used[v] {
                used[v] = true;
                path.push(v);
                rec(inst, path, used, cost + inst.cost(last, v), tol, best, found);
                path.pop();
                used[v] = false;
            }
        }
    }
    rec(inst, &mut path, &mut used, 0.0, tol, &mut best, &mut found);
    let masks = found
        .into_iter()
        .filter(|(c, _)| *c <= best + tol)
        .map(|(_, t)| tour_mask(inst, &t))
        .collect();
    (best, masks)
}

/// Minimum 1-tree cost by enumerating every edge subset of size n (n ≤ 7).
pub fn brute_force_1tree(inst: &Instance, costs: &[f64]) -> Option<f64> {
    let n = inst.n();
    let m = inst.edge_count();
    assert!(m <= 21);
    let mut best: Option<f64> = None;
    for mask in 0u32..1 << m {
        if mask.count_ones() as usize != n {
            continue;
        }
        let edges: Vec<usize> = (0..m).filter(|&e| mask >> e & 1 == 1).collect();
        if edges.iter().any(|&e| inst.state(e) == EdgeState::Forbidden)
            || (0..m).any(|e| inst.state(e) == EdgeState::Mandatory && mask >> e & 1 == 0)
        {
            continue;
        }
        if !is_one_tree(inst, &edges) {
            continue;
        }
        let c: f64 = edges.iter().map(|&e| costs[e]).sum();
        if best.is_none_or(|b| c < b) {
            best = Some(c);
        }
    }
    best
}

/// Two edges at node 0, and the rest a spanning tree of nodes 1..n.
pub fn is_one_tree(inst: &Instance, edges: &[usize]) -> bool {
    let n = inst.n();
    let at_zero = edges.iter().filter(|&&e| inst.endpoints(e).0 == 0).count();
    if at_zero != 2 || edges.len() != n {
        return false;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for &e in edges {
        let (i, j) = inst.endpoints(e);
        if i == 0 {
            continue;
        }
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a == b {
            return false;
        }
        parent[a] = b;
    }
    true
}

/// Symmetric cost matrix with entries drawn from `lo..hi`, rounded to integers
/// when `integral`.
pub fn random_matrix_instance<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64, integral: bool) -> Instance {
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let mut c = rng.gen_range(lo..hi);
            if integral {
                c = c.round();
            }
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    Instance::from_cost_matrix(&m, Provenance { name: format!("matrix{n}"), kind: None, seed: None }).unwrap()
}

/// `Σ_k a[k]·b[k]`.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
