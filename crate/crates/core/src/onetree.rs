//! Minimum 1-trees under arbitrary edge costs.
//!
//! A 1-tree is a spanning tree on nodes `1..n` plus two edges incident to
//! node `0`. Mandatory edges are always selected, forbidden edges never.

use std::cmp::Ordering;

use thiserror::Error;

use crate::instance::{EdgeState, Instance};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Infeasible {
    #[error("node 0 has {0} mandatory edges")]
    RootOverloaded(usize),
    #[error("node 0 has only {0} usable edges")]
    RootStarved(usize),
    #[error("mandatory edges close a cycle")]
    MandatoryCycle,
    #[error("spanning part is disconnected")]
    Disconnected,
}

/// Disjoint sets with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the sets of `a` and `b`; false if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneTree {
    edges: Vec<usize>,
    total_cost: f64,
    degree: Vec<usize>,
}

impl OneTree {
    /// Builds a 1-tree from an explicit edge list, checking the structure.
    pub fn from_edges(inst: &Instance, edges: Vec<usize>, costs: &[f64]) -> Option<Self> {
        let n = inst.n();
        if edges.len() != n {
            return None;
        }
        let mut degree = vec![0; n];
        let mut uf = UnionFind::new(n);
        for &e in &edges {
            let (i, j) = inst.endpoints(e);
            degree[i] += 1;
            degree[j] += 1;
            if i != 0 && !uf.union(i, j) {
                return None;
            }
        }
        if degree[0] != 2 {
            return None;
        }
        let total_cost = edges.iter().map(|&e| costs[e]).sum();
        Some(OneTree { edges, total_cost, degree })
    }

    /// Edge indices, node-0 edges first.
    pub fn edges(&self) -> &[usize] {
        &self.edges
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degree
    }

    pub fn is_tour(&self) -> bool {
        self.degree.iter().all(|&d| d == 2)
    }

    pub fn contains(&self, e: usize) -> bool {
        self.edges.contains(&e)
    }

    /// Cost of the same edge set under another cost vector.
    pub fn cost_under(&self, costs: &[f64]) -> f64 {
        self.edges.iter().map(|&e| costs[e]).sum()
    }

    /// Node sequence of the tree when it is a tour, starting at node 0.
    pub fn tour_order(&self, inst: &Instance) -> Option<Vec<usize>> {
        if !self.is_tour() {
            return None;
        }
        let n = inst.n();
        let mut adj = vec![Vec::with_capacity(2); n];
        for &e in &self.edges {
            let (i, j) = inst.endpoints(e);
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut order = Vec::with_capacity(n);
        let (mut prev, mut cur) = (usize::MAX, 0);
        for _ in 0..n {
            order.push(cur);
            let next = if adj[cur][0] != prev { adj[cur][0] } else { adj[cur][1] };
            prev = cur;
            cur = next;
        }
        (cur == 0).then_some(order)
    }
}

/// Degree of every node in the tree.
pub fn degrees(tree: &OneTree) -> Vec<usize> {
    tree.degree.clone()
}

fn by_cost(costs: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    // edge indices follow (smaller, larger) lexicographic order, so the index breaks ties
    move |&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b))
}

/// Minimum 1-tree of `inst` under per-edge `costs`, honouring edge states.
pub fn minimum_1tree(inst: &Instance, costs: &[f64]) -> Result<OneTree, Infeasible> {
    let n = inst.n();
    debug_assert_eq!(costs.len(), inst.edge_count());
    let mut edges = Vec::with_capacity(n);
    let mut degree = vec![0usize; n];
    let mut take = |e: usize, edges: &mut Vec<usize>| {
        let (i, j) = inst.endpoints(e);
        degree[i] += 1;
        degree[j] += 1;
        edges.push(e);
    };

    // node 0: mandatory edges first, then the cheapest usable ones
    let mut root_mand = Vec::new();
    let mut root_free = Vec::new();
    for v in 1..n {
        let e = inst.edge(0, v);
        match inst.state(e) {
            EdgeState::Mandatory => root_mand.push(e),
            EdgeState::Free => root_free.push(e),
            EdgeState::Forbidden => {}
        }
    }
    if root_mand.len() > 2 {
        return Err(Infeasible::RootOverloaded(root_mand.len()));
    }
    if root_mand.len() + root_free.len() < 2 {
        return Err(Infeasible::RootStarved(root_mand.len() + root_free.len()));
    }
    root_free.sort_unstable_by(by_cost(costs));
    for &e in root_mand.iter().chain(root_free.iter()).take(2) {
        take(e, &mut edges);
    }

    // spanning tree on 1..n
    let mut uf = UnionFind::new(n);
    let mut joined = 0;
    let mut candidates = Vec::with_capacity(inst.edge_count());
    for e in (n - 1)..inst.edge_count() {
        match inst.state(e) {
            EdgeState::Mandatory => {
                let (i, j) = inst.endpoints(e);
                if !uf.union(i, j) {
                    return Err(Infeasible::MandatoryCycle);
                }
                take(e, &mut edges);
                joined += 1;
            }
            EdgeState::Free => candidates.push(e),
            EdgeState::Forbidden => {}
        }
    }
    candidates.sort_unstable_by(by_cost(costs));
    for e in candidates {
        if joined == n - 2 {
            break;
        }
        let (i, j) = inst.endpoints(e);
        if uf.union(i, j) {
            take(e, &mut edges);
            joined += 1;
        }
    }
    if joined < n - 2 {
        return Err(Infeasible::Disconnected);
    }
    let total_cost = edges.iter().map(|&e| costs[e]).sum();
    Ok(OneTree { edges, total_cost, degree })
}
