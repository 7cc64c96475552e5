//! Lagrangian multipliers, the Held-Karp bound and subgradient ascent.

use serde::{Deserialize, Serialize};

use crate::instance::Instance;
use crate::onetree::{minimum_1tree, Infeasible, OneTree};

/// One multiplier per node, node 0 included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierVector(pub Vec<f64>);

impl MultiplierVector {
    pub fn zeros(n: usize) -> Self {
        MultiplierVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|t| t.is_finite())
    }
}

impl From<Vec<f64>> for MultiplierVector {
    fn from(v: Vec<f64>) -> Self {
        MultiplierVector(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundResult {
    /// HK(θ) = cost of the minimum 1-tree under modified costs − 2 Σθ.
    pub bound: f64,
    pub tree: OneTree,
    /// deg(v) − 2 per node.
    pub subgradient: Vec<i64>,
}

/// `c'_{ij} = c_{ij} + θ_i + θ_j` for every edge, in edge-index order.
pub fn modified_costs(inst: &Instance, theta: &MultiplierVector) -> Vec<f64> {
    assert_eq!(theta.len(), inst.n(), "multiplier vector length");
    let t = theta.as_slice();
    (0..inst.edge_count())
        .map(|e| {
            let (i, j) = inst.endpoints(e);
            inst.cost(i, j) + t[i] + t[j]
        })
        .collect()
}

/// The Held-Karp bound at `theta` together with its 1-tree and subgradient.
pub fn hk_bound(inst: &Instance, theta: &MultiplierVector) -> Result<BoundResult, Infeasible> {
    let costs = modified_costs(inst, theta);
    hk_bound_with_costs(inst, theta, &costs)
}

pub(crate) fn hk_bound_with_costs(
    inst: &Instance,
    theta: &MultiplierVector,
    costs: &[f64],
) -> Result<BoundResult, Infeasible> {
    let tree = minimum_1tree(inst, costs)?;
    let bound = tree.total_cost() - 2.0 * theta.sum();
    let subgradient = tree.degrees().iter().map(|&d| d as i64 - 2).collect();
    Ok(BoundResult { bound, tree, subgradient })
}

/// How the step constant is scaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepScaling {
    /// Steps are used as given, in cost units.
    Absolute,
    /// Steps are multiplied by the mean original edge cost of the first 1-tree,
    /// which makes the constant independent of the instance's length scale.
    MeanTreeEdge,
}

/// Step sizes `C / (1 + t / half_life)` for the subgradient ascent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub initial_step: f64,
    /// `f64::INFINITY` gives a constant step.
    pub half_life: f64,
    /// Stop after this many updates without a better bound.
    pub patience: usize,
    pub max_iters: usize,
    pub scaling: StepScaling,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            initial_step: 0.1,
            half_life: 50.0,
            patience: 30,
            max_iters: 1000,
            scaling: StepScaling::MeanTreeEdge,
        }
    }
}

impl StepSchedule {
    pub fn constant(step: f64, max_iters: usize) -> Self {
        StepSchedule {
            initial_step: step,
            half_life: f64::INFINITY,
            patience: usize::MAX,
            max_iters,
            scaling: StepScaling::Absolute,
        }
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn step(&self, t: usize) -> f64 {
        self.initial_step / (1.0 + t as f64 / self.half_life)
    }
}

/// Outcome of a subgradient ascent run.
#[derive(Clone, Debug)]
pub struct Ascent {
    /// Multipliers that produced `best`.
    pub theta: MultiplierVector,
    pub best: BoundResult,
    /// Number of 1-tree evaluations performed.
    pub evaluations: usize,
}

/// Subgradient ascent on HK(θ) from `theta0`; returns the best θ seen.
pub fn subgradient_ascent(
    inst: &Instance,
    theta0: MultiplierVector,
    schedule: &StepSchedule,
) -> Result<(MultiplierVector, BoundResult), Infeasible> {
    ascend(inst, theta0, schedule, None).map(|a| (a.theta, a.best))
}

/// Like [`subgradient_ascent`], also stopping once the bound reaches `target`.
pub fn ascend(
    inst: &Instance,
    theta0: MultiplierVector,
    schedule: &StepSchedule,
    target: Option<f64>,
) -> Result<Ascent, Infeasible> {
    let mut theta = theta0;
    let first = hk_bound(inst, &theta)?;
    let scale = match schedule.scaling {
        StepScaling::Absolute => 1.0,
        StepScaling::MeanTreeEdge => {
            let c = inst.edge_costs();
            let mean = first.tree.cost_under(&c) / inst.n() as f64;
            if mean > 0.0 { mean } else { 1.0 }
        }
    };
    let mut best = first.clone();
    let mut best_theta = theta.clone();
    let mut current = first;
    let mut evaluations = 1;
    let mut stale = 0;
    let reached = |b: f64| target.is_some_and(|t| b >= t);

    for t in 0..schedule.max_iters {
        if current.tree.is_tour() || reached(best.bound) {
            break;
        }
        let step = scale * schedule.step(t);
        for (th, &g) in theta.0.iter_mut().zip(&current.subgradient) {
            *th += step * g as f64;
        }
        current = hk_bound(inst, &theta)?;
        evaluations += 1;
        if current.bound > best.bound {
            best = current.clone();
            best_theta.clone_from(&theta);
            stale = 0;
        } else {
            stale += 1;
            if stale >= schedule.patience {
                break;
            }
        }
    }
    Ok(Ascent { theta: best_theta, best, evaluations })
}
