//! Depth-first branch-and-bound with Held-Karp bounding, cost-based edge
//! filtering and optional model warm starts near the root.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::egat::{forward, EgatParams};
use crate::heldkarp::{ascend, hk_bound_with_costs, modified_costs, BoundResult, MultiplierVector, StepSchedule};
use crate::instance::{EdgeState, Instance};
use crate::onetree::{Infeasible, OneTree};

#[derive(Debug, Error)]
pub enum BnbError {
    #[error("cannot branch on a 1-tree that is already a tour")]
    BranchOnTour,
    #[error("invalid solve configuration: {0}")]
    Config(String),
}

/// Where the primal bound comes from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperBound {
    Given(f64),
    /// `factor × optimum`, with the optimum supplied by an external oracle.
    OptimalTimesFactor { optimum: f64, factor: f64 },
}

impl UpperBound {
    pub fn value(&self) -> f64 {
        match *self {
            UpperBound::Given(v) => v,
            UpperBound::OptimalTimesFactor { optimum, factor } => optimum * factor,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClockKind {
    /// Wall-clock seconds.
    Wall,
    /// Seconds estimated from the work performed; reproducible across runs.
    #[default]
    Work,
}

/// How the model prediction is turned into a starting point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WarmStartPolicy {
    /// Start the ascent from the prediction.
    #[default]
    Prediction,
    /// Start from whichever of prediction and inherited multipliers bounds higher.
    BestOfPredictionAndParent,
}

#[derive(Clone, Debug)]
pub struct SolveConfig {
    pub upper_bound: UpperBound,
    /// Seconds, measured on `clock`.
    pub time_limit: f64,
    /// The model is queried at depths `0..=warm_start_depth`.
    pub warm_start_depth: usize,
    pub schedule: StepSchedule,
    pub model: Option<EgatParams>,
    pub warm_start: WarmStartPolicy,
    pub clock: ClockKind,
    /// Relative slack on prune and filter comparisons.
    pub tolerance: f64,
}

impl SolveConfig {
    pub fn new(upper_bound: UpperBound) -> Self {
        SolveConfig {
            upper_bound,
            time_limit: 60.0,
            warm_start_depth: 10,
            schedule: StepSchedule::default(),
            model: None,
            warm_start: WarmStartPolicy::default(),
            clock: ClockKind::default(),
            tolerance: 1e-6,
        }
    }

    pub fn with_model(mut self, model: EgatParams) -> Self {
        self.model = Some(model);
        self
    }

    pub fn with_time_limit(mut self, seconds: f64) -> Self {
        self.time_limit = seconds;
        self
    }

    pub fn validate(&self) -> Result<(), BnbError> {
        if let UpperBound::OptimalTimesFactor { factor, .. } = self.upper_bound {
            if factor < 1.0 {
                return Err(BnbError::Config(format!("upper-bound factor {factor} is below 1")));
            }
        }
        if !(self.time_limit > 0.0) {
            return Err(BnbError::Config("time limit must be positive".into()));
        }
        if self.upper_bound.value().is_nan() {
            return Err(BnbError::Config("upper bound is NaN".into()));
        }
        Ok(())
    }

    /// Ascent iterations at `depth`: halved every five levels, never below 50.
    pub fn ascent_budget(&self, depth: usize) -> usize {
        let full = self.schedule.max_iters;
        let halvings = (depth / 5).min(63) as u32;
        (full >> halvings).max(50.min(full))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// The search tree was exhausted.
    Optimal,
    TimedOut,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEvent {
    pub time: f64,
    pub primal: f64,
    pub dual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Global dual bound at termination; equals the final primal bound when optimal.
    pub best_dual: f64,
    /// Cost of the best tour found below the initial upper bound.
    pub incumbent: Option<f64>,
    pub tour: Option<Vec<usize>>,
    pub initial_upper_bound: f64,
    pub nodes_explored: usize,
    pub evaluations: usize,
    pub root_bound: Option<f64>,
    /// Fraction of edges fixed by propagation and filtering at the root.
    pub root_filtered_fraction: f64,
    pub elapsed: f64,
    pub bound_event_log: Vec<BoundEvent>,
}

impl SolveResult {
    /// Primal bound at termination.
    pub fn primal(&self) -> f64 {
        self.incumbent.unwrap_or(self.initial_upper_bound)
    }
}

/// A pending subproblem.
#[derive(Clone, Debug)]
pub struct SearchNode {
    pub states: Vec<EdgeState>,
    /// Decisions taken when this node was created from its parent.
    pub fixings: Vec<(usize, EdgeState)>,
    pub depth: usize,
    pub theta_start: MultiplierVector,
    /// Parent's bound until evaluated, then the node's own.
    pub dual_bound: f64,
}

/// Hooks into the search, mostly for auditing.
pub trait SearchObserver {
    /// Called before `forbidden` / `mandatory` are applied to the states of `inst`.
    fn on_fixings(&mut self, _inst: &Instance, _forbidden: &[usize], _mandatory: &[usize]) {}
    /// Called once per explored node, after propagation, with the node's states applied.
    fn on_node(&mut self, _node: &SearchNode, _inst: &Instance) {}
}

struct NoObserver;
impl SearchObserver for NoObserver {}

// Estimated cost of one sorted-edge step of Kruskal and of one
// multiply-add in the model, in nanoseconds.
const NS_PER_TREE_EDGE_STEP: f64 = 2.0;
const NS_PER_MODEL_FLOP: f64 = 1.0;

struct Clock {
    kind: ClockKind,
    start: Instant,
    work_ns: f64,
}

impl Clock {
    fn new(kind: ClockKind) -> Self {
        Clock { kind, start: Instant::now(), work_ns: 0.0 }
    }

    fn charge_trees(&mut self, edges: usize, count: usize) {
        let e = edges.max(2) as f64;
        self.work_ns += count as f64 * e * e.log2() * NS_PER_TREE_EDGE_STEP;
    }

    fn charge_forward(&mut self, n: usize, params: &EgatParams) {
        let d = params.dims;
        let slots = (n * n) as f64;
        let per_layer = slots * (d.hidden as f64 + 8.0) + n as f64 * (d.hidden * d.hidden) as f64;
        let head = n as f64 * (d.head_hidden * d.hidden) as f64;
        self.work_ns += NS_PER_MODEL_FLOP * (d.layers as f64 * per_layer + head);
    }

    fn elapsed(&self) -> f64 {
        match self.kind {
            ClockKind::Wall => self.start.elapsed().as_secs_f64(),
            ClockKind::Work => self.work_ns * 1e-9,
        }
    }
}

/// Edges fixed by one filtering pass.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Filtering {
    pub forbidden: Vec<usize>,
    pub mandatory: Vec<usize>,
}

impl Filtering {
    pub fn is_empty(&self) -> bool {
        self.forbidden.is_empty() && self.mandatory.is_empty()
    }
}

/// Lower bound on integral tour costs, or the bound itself.
fn tour_floor(x: f64, integral: bool) -> f64 {
    if integral { (x - 1e-7).ceil() } else { x }
}

/// Cost-based filtering against the upper bound `ub`.
///
/// A free non-tree edge is forbidden when the cheapest 1-tree containing it
/// (the current tree plus the edge minus the dearest exchangeable edge)
/// already exceeds `ub`. A free tree edge is made mandatory when the cheapest
/// 1-tree avoiding it exceeds `ub`. `costs` are the modified costs that
/// produced `res`.
pub fn filter_edges(inst: &Instance, costs: &[f64], res: &BoundResult, ub: f64, tolerance: f64) -> Filtering {
    let n = inst.n();
    let tree = &res.tree;
    let integral = inst.has_integral_costs();
    let slack = tolerance * ub.abs().max(1.0);
    let exceeds = |extra: f64| tour_floor(res.bound + extra, integral) > ub + slack;
    let mut out = Filtering::default();
    if !ub.is_finite() {
        return out;
    }

    let mut in_tree = vec![false; inst.edge_count()];
    for &e in tree.edges() {
        in_tree[e] = true;
    }
    let exchangeable = |e: usize| inst.state(e) != EdgeState::Mandatory;

    // spanning part rooted at node 1: parent pointers and depths
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for &e in tree.edges() {
        let (i, j) = inst.endpoints(e);
        if i != 0 {
            adj[i].push((j, e));
            adj[j].push((i, e));
        }
    }
    let mut parent = vec![usize::MAX; n];
    let mut parent_edge = vec![usize::MAX; n];
    let mut depth = vec![0usize; n];
    let mut order = Vec::with_capacity(n - 1);
    let mut stack = vec![1usize];
    parent[1] = 1;
    while let Some(v) = stack.pop() {
        order.push(v);
        for &(w, e) in &adj[v] {
            if parent[w] == usize::MAX {
                parent[w] = v;
                parent_edge[w] = e;
                depth[w] = depth[v] + 1;
                stack.push(w);
            }
        }
    }

    // path maxima of exchangeable modified costs from every source
    let mut path_max = vec![f64::NEG_INFINITY; n * n];
    for s in 1..n {
        let row = &mut path_max[s * n..(s + 1) * n];
        let mut st = vec![(s, usize::MAX)];
        while let Some((v, from)) = st.pop() {
            for &(w, e) in &adj[v] {
                if w == from {
                    continue;
                }
                let c = if exchangeable(e) { costs[e] } else { f64::NEG_INFINITY };
                row[w] = row[v].max(c);
                st.push((w, v));
            }
        }
    }

    // node 0
    let root_tree: Vec<usize> = tree.edges().iter().copied().filter(|&e| inst.endpoints(e).0 == 0).collect();
    let root_max = root_tree
        .iter()
        .filter(|&&e| exchangeable(e))
        .map(|&e| costs[e])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut root_spare = f64::INFINITY;

    // replacement cost of each spanning tree edge, keyed by its lower endpoint
    let mut reconnect = vec![f64::INFINITY; n];

    for e in 0..inst.edge_count() {
        if in_tree[e] || inst.state(e) != EdgeState::Free {
            continue;
        }
        let (i, j) = inst.endpoints(e);
        if i == 0 {
            root_spare = root_spare.min(costs[e]);
            let extra = costs[e] - root_max;
            if exceeds(extra) {
                out.forbidden.push(e);
            }
            continue;
        }
        let extra = costs[e] - path_max[i * n + j];
        if exceeds(extra) {
            out.forbidden.push(e);
        }
        // walk the tree path, offering e as a reconnection
        let (mut a, mut b) = (i, j);
        while a != b {
            if depth[a] < depth[b] {
                std::mem::swap(&mut a, &mut b);
            }
            reconnect[a] = reconnect[a].min(costs[e]);
            a = parent[a];
        }
    }

    for &v in &order[1..] {
        let e = parent_edge[v];
        if exchangeable(e) && exceeds(reconnect[v] - costs[e]) {
            out.mandatory.push(e);
        }
    }
    for &e in &root_tree {
        if exchangeable(e) && exceeds(root_spare - costs[e]) {
            out.mandatory.push(e);
        }
    }
    out.forbidden.sort_unstable();
    out.mandatory.sort_unstable();
    out
}

/// Degree and subtour propagation on mandatory/forbidden states.
///
/// Returns the implied fixings, or `Err` when no tour is compatible.
pub fn propagate_states(inst: &Instance) -> Result<Filtering, Infeasible> {
    let n = inst.n();
    let mut states = inst.states().to_vec();
    let mut out = Filtering::default();
    loop {
        let mut changed = false;
        for v in 0..n {
            let (mut mand, mut allowed) = (0, 0);
            for u in (0..n).filter(|&u| u != v) {
                match states[inst.edge(u, v)] {
                    EdgeState::Mandatory => {
                        mand += 1;
                        allowed += 1;
                    }
                    EdgeState::Free => allowed += 1,
                    EdgeState::Forbidden => {}
                }
            }
            if mand > 2 {
                return Err(Infeasible::RootOverloaded(mand));
            }
            if allowed < 2 {
                return Err(Infeasible::RootStarved(allowed));
            }
            if mand == 2 && allowed > 2 {
                for u in (0..n).filter(|&u| u != v) {
                    let e = inst.edge(u, v);
                    if states[e] == EdgeState::Free {
                        states[e] = EdgeState::Forbidden;
                        out.forbidden.push(e);
                    }
                }
                changed = true;
            } else if allowed == 2 && mand < 2 {
                for u in (0..n).filter(|&u| u != v) {
                    let e = inst.edge(u, v);
                    if states[e] == EdgeState::Free {
                        states[e] = EdgeState::Mandatory;
                        out.mandatory.push(e);
                    }
                }
                changed = true;
            }
        }

        // mandatory paths: forbid the edge closing a short cycle
        let mut adj = vec![Vec::with_capacity(2); n];
        for (e, s) in states.iter().enumerate() {
            if *s == EdgeState::Mandatory {
                let (i, j) = inst.endpoints(e);
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        if let Some(a) = adj.iter().find(|a| a.len() > 2) {
            return Err(Infeasible::RootOverloaded(a.len()));
        }
        let mut seen = vec![false; n];
        for start in 0..n {
            if seen[start] || adj[start].len() != 1 {
                continue;
            }
            let (mut prev, mut cur, mut len) = (start, adj[start][0], 1);
            seen[start] = true;
            while adj[cur].len() == 2 {
                seen[cur] = true;
                let next = if adj[cur][0] != prev { adj[cur][0] } else { adj[cur][1] };
                prev = cur;
                cur = next;
                len += 1;
            }
            seen[cur] = true;
            // a single edge has nothing to close
            if len > 1 && len < n - 1 {
                let e = inst.edge(start, cur);
                match states[e] {
                    EdgeState::Free => {
                        states[e] = EdgeState::Forbidden;
                        out.forbidden.push(e);
                        changed = true;
                    }
                    EdgeState::Mandatory => return Err(Infeasible::MandatoryCycle),
                    EdgeState::Forbidden => {}
                }
            }
        }
        // closed mandatory cycles that miss some nodes
        for v in 0..n {
            if !seen[v] && adj[v].len() == 2 {
                let (mut prev, mut cur, mut len) = (v, adj[v][0], 1);
                seen[v] = true;
                while cur != v {
                    seen[cur] = true;
                    let next = if adj[cur][0] != prev { adj[cur][0] } else { adj[cur][1] };
                    prev = cur;
                    cur = next;
                    len += 1;
                }
                if len < n {
                    return Err(Infeasible::MandatoryCycle);
                }
            }
        }
        if !changed {
            break;
        }
    }
    out.forbidden.sort_unstable();
    out.forbidden.dedup();
    out.mandatory.sort_unstable();
    out.mandatory.dedup();
    Ok(out)
}

/// Children of `node` by fixing the tree edges of its highest-degree node.
///
/// With `e_1, e_2, …` the free tree edges at the chosen node (dearest first),
/// child `k` makes `e_1 … e_{k-1}` mandatory and forbids `e_k`; a last child
/// makes them all mandatory when the degree allows it. Children that would
/// give a node three mandatory edges hold no tour and are not generated.
pub fn branch(
    node: &SearchNode,
    inst: &Instance,
    tree: &OneTree,
    costs: &[f64],
    theta: &MultiplierVector,
    bound: f64,
) -> Result<Vec<SearchNode>, BnbError> {
    if tree.is_tour() {
        return Err(BnbError::BranchOnTour);
    }
    let n = inst.n();
    let deg = tree.degrees();
    let mut candidates: Vec<usize> = (1..n).collect();
    candidates.sort_by(|&a, &b| deg[b].cmp(&deg[a]).then(a.cmp(&b)));
    for v in candidates {
        if deg[v] <= 2 {
            break;
        }
        let mut free: Vec<usize> = tree
            .edges()
            .iter()
            .copied()
            .filter(|&e| {
                let (i, j) = inst.endpoints(e);
                (i == v || j == v) && node.states[e] == EdgeState::Free
            })
            .collect();
        if free.is_empty() {
            continue;
        }
        free.sort_by(|&a, &b| costs[b].total_cmp(&costs[a]).then(a.cmp(&b)));
        let mut base = inst.clone();
        base.set_states(node.states.clone()).map_err(|e| BnbError::Config(e.to_string()))?;
        let mut children = Vec::with_capacity(free.len() + 1);
        let mut prefix: Vec<(usize, EdgeState)> = Vec::new();
        for k in 0..=free.len() {
            let mut child = base.clone();
            let mut fixings = prefix.clone();
            if k < free.len() {
                fixings.push((free[k], EdgeState::Forbidden));
            }
            let ok = fixings.iter().all(|&(e, s)| child.set_state(e, s).is_ok());
            if ok {
                children.push(SearchNode {
                    states: child.states().to_vec(),
                    fixings,
                    depth: node.depth + 1,
                    theta_start: theta.clone(),
                    dual_bound: bound,
                });
            }
            if k < free.len() {
                prefix.push((free[k], EdgeState::Mandatory));
                if base.mandatory_degree(v) + prefix.len() > 2 {
                    break;
                }
            }
        }
        return Ok(children);
    }
    // every node of degree > 2 has only mandatory tree edges: the states are contradictory
    Ok(Vec::new())
}

/// Multipliers predicted for the current states, or `parent` when there is no
/// model or the prediction fails.
pub fn predict_warm_start(model: Option<&EgatParams>, inst: &mut Instance, parent: &MultiplierVector) -> MultiplierVector {
    let Some(model) = model else {
        return parent.clone();
    };
    inst.compute_features();
    match forward(model, inst) {
        Ok((theta, _)) if theta.is_finite() => theta,
        Ok(_) => {
            log::warn!("model produced non-finite multipliers; keeping inherited ones");
            parent.clone()
        }
        Err(e) => {
            log::warn!("warm start unavailable ({e}); keeping inherited multipliers");
            parent.clone()
        }
    }
}

/// Order in which pending nodes are expanded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeOrder {
    DepthFirst,
    BreadthFirst,
}

pub fn solve(inst: &Instance, cfg: &SolveConfig) -> Result<SolveResult, BnbError> {
    solve_observed(inst, cfg, &mut NoObserver)
}

pub fn solve_observed(inst: &Instance, cfg: &SolveConfig, observer: &mut dyn SearchObserver) -> Result<SolveResult, BnbError> {
    search(inst, cfg, NodeOrder::DepthFirst, None, observer)
}

enum NodeOutcome {
    Pruned,
    Solved { cost: f64, tour: Vec<usize> },
    Branched(Vec<SearchNode>),
}

struct Search<'a> {
    cfg: &'a SolveConfig,
    clock: Clock,
    ub: f64,
    slack: f64,
    integral: bool,
    evaluations: usize,
    root_bound: Option<f64>,
    root_fixed: Option<usize>,
}

impl Search<'_> {
    fn prunable(&self, bound: f64) -> bool {
        tour_floor(bound, self.integral) >= self.ub - self.slack
    }

    fn evaluate(&mut self, work: &Instance, theta: &MultiplierVector) -> Result<(BoundResult, Vec<f64>), Infeasible> {
        let costs = modified_costs(work, theta);
        self.evaluations += 1;
        self.clock.charge_trees(work.edge_count(), 1);
        hk_bound_with_costs(work, theta, &costs).map(|r| (r, costs))
    }

    /// Applies fixings, reporting them first. False when they make the node infeasible.
    fn apply(&mut self, work: &mut Instance, f: &Filtering, observer: &mut dyn SearchObserver) -> bool {
        if f.is_empty() {
            return true;
        }
        observer.on_fixings(work, &f.forbidden, &f.mandatory);
        for &e in &f.forbidden {
            if work.set_state(e, EdgeState::Forbidden).is_err() {
                return false;
            }
        }
        f.mandatory.iter().all(|&e| work.set_state(e, EdgeState::Mandatory).is_ok())
    }

    fn process(&mut self, base: &Instance, node: &mut SearchNode, observer: &mut dyn SearchObserver) -> NodeOutcome {
        let mut work = base.clone();
        if work.set_states(node.states.clone()).is_err() {
            return NodeOutcome::Pruned;
        }
        let out = self.bound_and_filter(&mut work, node, observer);
        if node.depth == 0 {
            self.root_fixed = Some(fixed_count(&work));
        }
        out
    }

    fn bound_and_filter(&mut self, work: &mut Instance, node: &mut SearchNode, observer: &mut dyn SearchObserver) -> NodeOutcome {
        let root = node.depth == 0;
        match propagate_states(work) {
            Ok(f) => {
                if !self.apply(work, &f, observer) {
                    return NodeOutcome::Pruned;
                }
            }
            Err(_) => return NodeOutcome::Pruned,
        }
        node.states = work.states().to_vec();
        observer.on_node(node, work);

        // starting multipliers
        let mut theta0 = node.theta_start.clone();
        if node.depth <= self.cfg.warm_start_depth {
            if let Some(model) = &self.cfg.model {
                self.clock.charge_forward(work.n(), model);
                let predicted = predict_warm_start(Some(model), work, &node.theta_start);
                theta0 = match self.cfg.warm_start {
                    WarmStartPolicy::Prediction => predicted,
                    WarmStartPolicy::BestOfPredictionAndParent => {
                        let p = self.evaluate(work, &predicted).map(|r| r.0.bound);
                        let q = self.evaluate(work, &node.theta_start).map(|r| r.0.bound);
                        match (p, q) {
                            (Ok(p), Ok(q)) if q > p => node.theta_start.clone(),
                            (Err(_), _) => return NodeOutcome::Pruned,
                            _ => predicted,
                        }
                    }
                };
            }
        }

        let schedule = self.cfg.schedule.clone().with_max_iters(self.cfg.ascent_budget(node.depth));
        let target = self.ub - self.slack;
        let ascent = match ascend(work, theta0, &schedule, Some(target)) {
            Ok(a) => a,
            Err(_) => return NodeOutcome::Pruned,
        };
        self.evaluations += ascent.evaluations;
        self.clock.charge_trees(work.edge_count(), ascent.evaluations);
        let theta = ascent.theta;
        let mut res = ascent.best;
        let mut costs = modified_costs(work, &theta);

        loop {
            node.dual_bound = node.dual_bound.max(res.bound);
            if root && self.root_bound.is_none() {
                self.root_bound = Some(res.bound);
            }
            if res.tree.is_tour() {
                let cost = res.tree.cost_under(&work.edge_costs());
                let tour = res.tree.tour_order(work).unwrap_or_default();
                return NodeOutcome::Solved { cost, tour };
            }
            if self.prunable(node.dual_bound) {
                break;
            }
            let mut fix = filter_edges(work, &costs, &res, self.ub, self.cfg.tolerance);
            if fix.is_empty() {
                break;
            }
            if !self.apply(work, &fix, observer) {
                return NodeOutcome::Pruned;
            }
            fix = match propagate_states(work) {
                Ok(f) => f,
                Err(_) => return NodeOutcome::Pruned,
            };
            if !self.apply(work, &fix, observer) {
                return NodeOutcome::Pruned;
            }
            match self.evaluate(work, &theta) {
                Ok((r, c)) => {
                    res = r;
                    costs = c;
                }
                Err(_) => return NodeOutcome::Pruned,
            }
        }
        if self.prunable(node.dual_bound) {
            return NodeOutcome::Pruned;
        }
        node.states = work.states().to_vec();
        match branch(node, work, &res.tree, &costs, &theta, node.dual_bound) {
            Ok(children) => NodeOutcome::Branched(children),
            Err(_) => NodeOutcome::Pruned,
        }
    }
}

fn fixed_count(inst: &Instance) -> usize {
    inst.states().iter().filter(|&&s| s != EdgeState::Free).count()
}

/// Runs the search in the given order, stopping after `node_limit` nodes if set.
pub fn search(
    inst: &Instance,
    cfg: &SolveConfig,
    order: NodeOrder,
    node_limit: Option<usize>,
    observer: &mut dyn SearchObserver,
) -> Result<SolveResult, BnbError> {
    cfg.validate()?;
    let initial_ub = cfg.upper_bound.value();
    let mut s = Search {
        cfg,
        clock: Clock::new(cfg.clock),
        ub: initial_ub,
        slack: cfg.tolerance * initial_ub.abs().max(1.0),
        integral: inst.has_integral_costs(),
        evaluations: 0,
        root_bound: None,
        root_fixed: None,
    };
    let mut pending = std::collections::VecDeque::new();
    pending.push_back(SearchNode {
        states: inst.states().to_vec(),
        fixings: Vec::new(),
        depth: 0,
        theta_start: MultiplierVector::zeros(inst.n()),
        dual_bound: f64::NEG_INFINITY,
    });
    let mut incumbent = None;
    let mut tour = None;
    let mut explored = 0;
    let mut log: Vec<BoundEvent> = Vec::new();
    let mut status = SolveStatus::Optimal;

    let global_dual = |pending: &std::collections::VecDeque<SearchNode>, ub: f64| {
        pending.iter().map(|n| n.dual_bound).fold(ub, f64::min)
    };

    loop {
        let next = match order {
            NodeOrder::DepthFirst => pending.pop_back(),
            NodeOrder::BreadthFirst => pending.pop_front(),
        };
        let Some(mut node) = next else { break };
        if s.clock.elapsed() >= cfg.time_limit || node_limit.is_some_and(|l| explored >= l) {
            pending.push_back(node);
            status = SolveStatus::TimedOut;
            break;
        }
        if s.prunable(node.dual_bound) {
            continue;
        }
        explored += 1;
        match s.process(inst, &mut node, observer) {
            NodeOutcome::Pruned => {}
            NodeOutcome::Solved { cost, tour: t } => {
                if tour_floor(cost, s.integral) < s.ub - s.slack {
                    s.ub = cost;
                    incumbent = Some(cost);
                    tour = Some(t);
                }
            }
            NodeOutcome::Branched(children) => match order {
                NodeOrder::DepthFirst => pending.extend(children.into_iter().rev()),
                NodeOrder::BreadthFirst => pending.extend(children),
            },
        }
        let dual = global_dual(&pending, s.ub);
        let changed = log.last().is_none_or(|l: &BoundEvent| l.dual != dual || l.primal != s.ub);
        if changed {
            log.push(BoundEvent { time: s.clock.elapsed(), primal: s.ub, dual });
        }
    }

    let best_dual = global_dual(&pending, s.ub);
    if status == SolveStatus::TimedOut {
        // the node put back may never have been bounded
        if log.last().is_none_or(|l| l.dual != best_dual || l.primal != s.ub) {
            log.push(BoundEvent { time: s.clock.elapsed(), primal: s.ub, dual: best_dual });
        }
    }
    let root_filtered_fraction = s.root_fixed.unwrap_or(0) as f64 / inst.edge_count() as f64;
    Ok(SolveResult {
        status,
        best_dual,
        incumbent,
        tour,
        initial_upper_bound: initial_ub,
        nodes_explored: explored,
        evaluations: s.evaluations,
        root_bound: s.root_bound,
        root_filtered_fraction,
        elapsed: s.clock.elapsed(),
        bound_event_log: log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heldkarp::hk_bound;
    use crate::instance::{five_city_example, generate_random};

    fn fig_tree_state() -> (Instance, MultiplierVector, BoundResult, Vec<f64>) {
        let inst = five_city_example();
        let theta = MultiplierVector(vec![0.0, 4.0, 0.0, -2.0, -2.0]);
        let res = hk_bound(&inst, &theta).unwrap();
        let costs = modified_costs(&inst, &theta);
        (inst, theta, res, costs)
    }

    #[test]
    fn infinite_upper_bound_filters_nothing() {
        let (inst, _, res, costs) = fig_tree_state();
        assert!(filter_edges(&inst, &costs, &res, f64::INFINITY, 1e-6).is_empty());
    }

    #[test]
    fn expensive_edge_is_forbidden() {
        let (inst, _, res, costs) = fig_tree_state();
        let f = filter_edges(&inst, &costs, &res, 62.0 + 1e-3, 1e-6);
        assert!(f.forbidden.contains(&inst.edge(2, 4)));
        // the optimal tour 0-1-4-3-2-0 survives
        for (a, b) in [(0, 1), (1, 4), (4, 3), (3, 2), (2, 0)] {
            assert!(!f.forbidden.contains(&inst.edge(a, b)));
        }
    }

    #[test]
    fn worked_example_solves() {
        let inst = five_city_example();
        let res = solve(&inst, &SolveConfig::new(UpperBound::Given(63.0))).unwrap();
        assert_eq!(res.status, SolveStatus::Optimal);
        assert_eq!(res.incumbent, Some(62.0));
        assert_eq!(res.best_dual, 62.0);
        let t = res.tour.unwrap();
        assert_eq!(inst.tour_cost(&t), 62.0);
    }

    #[test]
    fn upper_bound_below_root_bound() {
        let inst = five_city_example();
        let res = solve(&inst, &SolveConfig::new(UpperBound::Given(40.0))).unwrap();
        assert_eq!(res.nodes_explored, 1);
        assert_eq!(res.status, SolveStatus::Optimal);
        assert_eq!(res.incumbent, None);
    }

    #[test]
    fn branch_picks_highest_degree() {
        let inst = five_city_example();
        let theta = MultiplierVector::zeros(5);
        let res = hk_bound(&inst, &theta).unwrap();
        let costs = inst.edge_costs();
        let node = SearchNode {
            states: inst.states().to_vec(),
            fixings: vec![],
            depth: 0,
            theta_start: theta.clone(),
            dual_bound: res.bound,
        };
        let kids = branch(&node, &inst, &res.tree, &costs, &theta, res.bound).unwrap();
        // node 1 has degree 4 with four free tree edges: forbid-children for the
        // first three, then the third mandatory edge would overload it
        assert_eq!(kids.len(), 3);
        for k in &kids {
            let (e, s) = *k.fixings.last().unwrap();
            let (i, j) = inst.endpoints(e);
            assert!(i == 1 || j == 1);
            assert_eq!(s, EdgeState::Forbidden);
        }
        assert_eq!(kids[2].fixings.len(), 3);
    }

    #[test]
    fn branch_on_single_free_edge() {
        // node 1's tree edges are (0,1) (1,2) (1,3) (1,4); two of them already mandatory
        let mut inst = five_city_example();
        inst.set_state(inst.edge(1, 2), EdgeState::Mandatory).unwrap();
        inst.set_state(inst.edge(1, 4), EdgeState::Mandatory).unwrap();
        let theta = MultiplierVector::zeros(5);
        let res = hk_bound(&inst, &theta).unwrap();
        assert_eq!(res.tree.degrees()[1], 4);
        let node = SearchNode { states: inst.states().to_vec(), fixings: vec![], depth: 0, theta_start: theta.clone(), dual_bound: 0.0 };
        let kids = branch(&node, &inst, &res.tree, &inst.edge_costs(), &theta, res.bound).unwrap();
        // mandating any further edge at node 1 leaves no tour
        assert_eq!(kids.len(), 1);
        assert_eq!(kids[0].fixings.len(), 1);
        assert_eq!(kids[0].fixings[0].1, EdgeState::Forbidden);
    }

    #[test]
    fn branch_rejects_tours() {
        let mut inst = five_city_example();
        for (a, b) in [(0, 2), (2, 3), (3, 4), (4, 1), (1, 0)] {
            inst.set_state(inst.edge(a, b), EdgeState::Mandatory).unwrap();
        }
        let theta = MultiplierVector::zeros(5);
        let res = hk_bound(&inst, &theta).unwrap();
        let node = SearchNode { states: inst.states().to_vec(), fixings: vec![], depth: 0, theta_start: theta.clone(), dual_bound: 0.0 };
        assert!(matches!(
            branch(&node, &inst, &res.tree, &inst.edge_costs(), &theta, res.bound),
            Err(BnbError::BranchOnTour)
        ));
    }

    #[test]
    fn propagation_rules() {
        let mut inst = generate_random(6, 1).unwrap();
        inst.set_state(inst.edge(1, 2), EdgeState::Mandatory).unwrap();
        inst.set_state(inst.edge(1, 3), EdgeState::Mandatory).unwrap();
        let f = propagate_states(&inst).unwrap();
        for v in [0, 4, 5] {
            assert!(f.forbidden.contains(&inst.edge(1, v)));
        }
        // path 2-1-3 must not close into a triangle
        assert!(f.forbidden.contains(&inst.edge(2, 3)));

        let mut inst = generate_random(6, 1).unwrap();
        for v in 2..6 {
            inst.set_state(inst.edge(1, v), EdgeState::Forbidden).unwrap();
        }
        assert!(propagate_states(&inst).is_err());
    }

    #[test]
    fn predict_without_model_keeps_parent() {
        let mut inst = generate_random(6, 1).unwrap();
        let parent = MultiplierVector(vec![0.1; 6]);
        assert_eq!(predict_warm_start(None, &mut inst, &parent), parent);
    }

    #[test]
    fn ascent_budget_halves() {
        let cfg = SolveConfig::new(UpperBound::Given(1.0));
        assert_eq!(cfg.ascent_budget(0), 1000);
        assert_eq!(cfg.ascent_budget(4), 1000);
        assert_eq!(cfg.ascent_budget(5), 500);
        assert_eq!(cfg.ascent_budget(10), 250);
        assert_eq!(cfg.ascent_budget(40), 50);
    }

    #[test]
    fn bad_config() {
        let mut cfg = SolveConfig::new(UpperBound::OptimalTimesFactor { optimum: 10.0, factor: 0.9 });
        assert!(cfg.validate().is_err());
        cfg.upper_bound = UpperBound::Given(5.0);
        cfg.time_limit = 0.0;
        assert!(cfg.validate().is_err());
    }
}
