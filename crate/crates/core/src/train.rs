//! Unsupervised training: the model is updated to maximise the Held-Karp
//! bound of its own predictions, with no reference tours or multipliers.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::heuristic_tour;
use crate::bnb::{search, NodeOrder, SearchNode, SearchObserver, SolveConfig, UpperBound};
use crate::egat::{backward, forward, EgatError, EgatParams};
use crate::heldkarp::{ascend, hk_bound, MultiplierVector, StepSchedule};
use crate::instance::{DatasetConfig, Instance, InstanceError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("parameter shapes differ between model, gradient and optimiser state")]
    ShapeMismatch,
    #[error("non-finite value at epoch {epoch} on graph '{graph}'; instance written to {}", dump.display())]
    NonFinite { epoch: usize, graph: String, dump: PathBuf },
    #[error(transparent)]
    Model(#[from] EgatError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("{0}")]
    Other(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GraphTag {
    Root,
    /// Snapshot of a search node; `source` indexes the root instance it came from.
    BnbNode { source: usize, depth: usize },
}

#[derive(Clone, Debug)]
pub struct TrainingGraph {
    pub instance: Instance,
    pub tag: GraphTag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSetProvenance {
    pub dataset: DatasetConfig,
    pub n_instances: usize,
    pub k_nodes: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub graphs: Vec<TrainingGraph>,
    pub provenance: Option<TrainingSetProvenance>,
}

impl TrainingSet {
    /// Root instances only, features computed.
    pub fn from_instances(instances: Vec<Instance>) -> Self {
        let graphs = instances
            .into_iter()
            .map(|mut instance| {
                instance.compute_features();
                TrainingGraph { instance, tag: GraphTag::Root }
            })
            .collect();
        TrainingSet { graphs, provenance: None }
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn roots(&self) -> usize {
        self.graphs.iter().filter(|g| g.tag == GraphTag::Root).count()
    }
}

struct Snapshots {
    limit: usize,
    ub: f64,
    taken: Vec<(Instance, usize)>,
}

impl SearchObserver for Snapshots {
    fn on_node(&mut self, node: &SearchNode, inst: &Instance) {
        if node.depth == 0 || self.taken.len() >= self.limit {
            return;
        }
        // Nodes the bound alone would prune are skipped. This also drops
        // subproblems without any tour, whose bound grows without limit.
        let zero = MultiplierVector::zeros(inst.n());
        let open = ascend(inst, zero, &StepSchedule::default(), Some(self.ub)).is_ok_and(|a| a.best.bound < self.ub);
        if open {
            let mut snap = inst.clone();
            snap.compute_features();
            self.taken.push((snap, node.depth));
        }
    }
}

/// Search-node snapshots of `inst`: the first `k` nodes below the root, in
/// breadth-first order, explored by the model-free solver with the heuristic
/// tour as upper bound. Nodes whose ascended bound reaches that upper bound
/// are not kept.
pub fn extract_nodes(inst: &Instance, k: usize) -> Vec<(Instance, usize)> {
    if k == 0 {
        return Vec::new();
    }
    let (h, _) = heuristic_tour(inst);
    let cfg = SolveConfig::new(UpperBound::Given(h)).with_time_limit(1e6);
    let mut obs = Snapshots { limit: k, ub: h, taken: Vec::new() };
    // room for nodes that are skipped
    let _ = search(inst, &cfg, NodeOrder::BreadthFirst, Some(20 * k + 1), &mut obs);
    obs.taken
}

/// `n_instances` generated roots (indices `0..n_instances` of `config` with
/// its seed replaced by `seed`), each followed by up to `k_nodes` search-node
/// snapshots.
pub fn build_training_set(config: &DatasetConfig, n_instances: usize, k_nodes: usize, seed: u64) -> Result<TrainingSet, TrainError> {
    let cfg = DatasetConfig { seed, ..config.clone() };
    let roots = cfg.generate_many(n_instances)?;
    let variants: Vec<Vec<(Instance, usize)>> = roots.par_iter().map(|r| extract_nodes(r, k_nodes)).collect();
    let mut graphs = Vec::with_capacity(n_instances * (k_nodes + 1));
    for (idx, (mut root, vars)) in roots.into_iter().zip(variants).enumerate() {
        if vars.len() < k_nodes {
            log::info!("{}: {} of {} search nodes extracted", root.provenance().name, vars.len(), k_nodes);
        }
        root.compute_features();
        graphs.push(TrainingGraph { instance: root, tag: GraphTag::Root });
        for (instance, depth) in vars {
            graphs.push(TrainingGraph { instance, tag: GraphTag::BnbNode { source: idx, depth } });
        }
    }
    Ok(TrainingSet {
        graphs,
        provenance: Some(TrainingSetProvenance { dataset: cfg, n_instances, k_nodes, seed }),
    })
}

/// Adam moments for maximisation.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: EgatParams,
    v: EgatParams,
}

impl AdamState {
    pub fn new(params: &EgatParams) -> Self {
        AdamState { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }
}

fn same_shapes(a: &EgatParams, b: &EgatParams) -> bool {
    let (ta, tb) = (a.tensors(), b.tensors());
    ta.len() == tb.len() && ta.iter().zip(&tb).all(|(x, y)| x.len() == y.len())
}

/// One Adam update in the ascent direction: `w += lr · m̂ / (√v̂ + ε)`.
pub fn adam_step(adam: &mut AdamState, params: &mut EgatParams, grad: &EgatParams) -> Result<(), TrainError> {
    if !same_shapes(params, grad) || !same_shapes(params, &adam.m) {
        return Err(TrainError::ShapeMismatch);
    }
    adam.step += 1;
    let t = adam.step as i32;
    let (b1, b2) = (adam.beta1, adam.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let gs = grad.tensors();
    let ms = adam.m.tensors_mut();
    let vs = adam.v.tensors_mut();
    for (((w, g), m), v) in params.tensors_mut().into_iter().zip(gs).zip(ms).zip(vs) {
        for k in 0..w.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mh = if c1 > 0.0 { m[k] / c1 } else { m[k] };
            let vh = if c2 > 0.0 { v[k] / c2 } else { v[k] };
            w[k] += adam.lr * mh / (vh.sqrt() + adam.eps);
        }
    }
    Ok(())
}

/// Plain gradient ascent, `w += lr · ∇w`.
pub fn ascent_step(lr: f64, params: &mut EgatParams, grad: &EgatParams) -> Result<(), TrainError> {
    if !same_shapes(params, grad) {
        return Err(TrainError::ShapeMismatch);
    }
    for (w, g) in params.tensors_mut().into_iter().zip(grad.tensors()) {
        for (w, g) in w.iter_mut().zip(g) {
            *w += lr * g;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    /// Stop after this many epochs without a better validation mean.
    pub patience: usize,
    /// Wall-clock budget in seconds.
    pub time_limit: Option<f64>,
    /// Seed of the per-epoch shuffle.
    pub seed: u64,
    /// Use plain gradient ascent with the Adam learning rate instead of Adam.
    pub plain_ascent: bool,
    /// Graphs whose gradients are averaged per update.
    pub batch_size: usize,
    /// Show each graph under a random rotation and reflection of the plane.
    pub augment: bool,
    /// Where non-finite instances are written.
    pub dump_dir: PathBuf,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 100,
            patience: 50,
            time_limit: None,
            seed: 0,
            plain_ascent: false,
            batch_size: 1,
            augment: false,
            dump_dir: std::env::temp_dir(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_bound: f64,
    pub mean_val_bound: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainingLog {
    /// Row 0 holds the bounds of the initial parameters.
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_bound: f64,
}

impl TrainingLog {
    pub fn write_csv(&self, path: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// HK bound at the model's prediction.
pub fn predicted_bound(params: &EgatParams, inst: &Instance) -> Result<f64, TrainError> {
    let (theta, _) = forward(params, inst)?;
    hk_bound(inst, &theta).map(|r| r.bound).map_err(|e| TrainError::Other(e.to_string()))
}

/// Mean predicted bound over a set; the sum is taken in set order.
pub fn mean_predicted_bound(params: &EgatParams, set: &TrainingSet) -> Result<f64, TrainError> {
    let bounds: Vec<Result<f64, TrainError>> = set.graphs.par_iter().map(|g| predicted_bound(params, &g.instance)).collect();
    let mut total = 0.0;
    for b in bounds {
        total += b?;
    }
    Ok(total / set.len() as f64)
}

/// Bound at the prediction and its gradient with respect to the weights,
/// or `None` if anything is non-finite.
fn graph_gradient(params: &EgatParams, inst: &Instance) -> Option<(f64, EgatParams)> {
    let (theta, tape) = forward(params, inst).ok()?;
    if !theta.is_finite() {
        return None;
    }
    let res = hk_bound(inst, &theta).ok().filter(|r| r.bound.is_finite())?;
    let g: Vec<f64> = res.subgradient.iter().map(|&d| d as f64).collect();
    let grad = backward(params, tape, &g);
    grad.is_finite().then_some((res.bound, grad))
}

fn dump(dir: &Path, epoch: usize, idx: usize, inst: &Instance) -> PathBuf {
    let path = dir.join(format!("hklearn-nonfinite-e{epoch}-g{idx}.json"));
    if let Err(e) = inst.save(&path) {
        log::error!("could not write {}: {e}", path.display());
    }
    path
}

/// Trains by bound ascent, one graph per update, and returns the parameters
/// of the best validation epoch (the initial ones if nothing improved).
pub fn train(
    params: EgatParams,
    train_set: &TrainingSet,
    val_set: &TrainingSet,
    opts: &TrainOptions,
    adam: &mut AdamState,
) -> Result<(EgatParams, TrainingLog), TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    let start = Instant::now();
    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let val0 = mean_predicted_bound(&params, val_set)?;
    let train0 = mean_predicted_bound(&params, train_set)?;
    let mut log = TrainingLog {
        records: vec![EpochRecord { epoch: 0, mean_train_bound: train0, mean_val_bound: val0, wall_time: 0.0 }],
        best_epoch: 0,
        best_val_bound: val0,
    };
    let mut best = params.clone();
    let mut stale = 0;

    for epoch in 1..=opts.epochs {
        if opts.time_limit.is_some_and(|t| start.elapsed().as_secs_f64() >= t) {
            log::info!("time limit reached after {} epochs", epoch - 1);
            break;
        }
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        for batch in order.chunks(opts.batch_size.max(1)) {
            let views: Vec<Option<(f64, bool)>> = batch
                .iter()
                .map(|_| opts.augment.then(|| (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_bool(0.5))))
                .collect();
            let grads: Vec<Option<(f64, EgatParams)>> = batch
                .par_iter()
                .zip(&views)
                .map(|(&idx, view)| {
                    let inst = &train_set.graphs[idx].instance;
                    match view {
                        Some((angle, reflect)) => graph_gradient(&params, &inst.rotated(*angle, *reflect)),
                        None => graph_gradient(&params, inst),
                    }
                })
                .collect();
            let mut sum = params.zeros_like();
            for (&idx, g) in batch.iter().zip(grads) {
                let Some((bound, grad)) = g else {
                    let inst = &train_set.graphs[idx].instance;
                    return Err(TrainError::NonFinite {
                        epoch,
                        graph: inst.provenance().name.clone(),
                        dump: dump(&opts.dump_dir, epoch, idx, inst),
                    });
                };
                train_total += bound;
                for (acc, g) in sum.tensors_mut().into_iter().zip(grad.tensors()) {
                    for (a, g) in acc.iter_mut().zip(g) {
                        *a += g;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for t in sum.tensors_mut() {
                for a in t {
                    *a *= scale;
                }
            }
            if opts.plain_ascent {
                ascent_step(adam.lr, &mut params, &sum)?;
            } else {
                adam_step(adam, &mut params, &sum)?;
            }
        }
        let val = mean_predicted_bound(&params, val_set)?;
        let rec = EpochRecord {
            epoch,
            mean_train_bound: train_total / train_set.len() as f64,
            mean_val_bound: val,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {epoch}: train {:.6} val {:.6}", rec.mean_train_bound, val);
        log.records.push(rec);
        if val > log.best_val_bound {
            log.best_val_bound = val;
            log.best_epoch = epoch;
            best.clone_from(&params);
            stale = 0;
        } else {
            stale += 1;
            if stale >= opts.patience {
                log::info!("no validation improvement for {stale} epochs; stopping at epoch {epoch}");
                break;
            }
        }
    }
    Ok((best, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::egat::init_params;
    use crate::instance::generate_random;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = init_params(1);
        let before = p.clone();
        let mut adam = AdamState::new(&p);
        let zero = p.zeros_like();
        adam_step(&mut adam, &mut p, &zero).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut p = init_params(2);
        let mut g = p.zeros_like();
        g.tensors_mut()[0][0] = -0.3;
        let mut adam = AdamState::new(&p);
        let mut last = p.tensors()[0][0];
        for _ in 0..1000 {
            adam_step(&mut adam, &mut p, &g).unwrap();
            let w = p.tensors()[0][0];
            assert!(w < last);
            last = w;
        }
        // the other weights never move
        assert_eq!(p.tensors()[0][1], init_params(2).tensors()[0][1]);
    }

    #[test]
    fn memoryless_adam_is_normalised_sgd() {
        let mut p = init_params(3);
        let w0 = p.tensors()[1][2];
        let mut g = p.zeros_like();
        g.tensors_mut()[1][2] = 7.0;
        let mut adam = AdamState { beta1: 0.0, beta2: 0.0, ..AdamState::new(&p) };
        adam_step(&mut adam, &mut p, &g).unwrap();
        let expected = w0 + adam.lr * 7.0 / (7.0 + adam.eps);
        assert!((p.tensors()[1][2] - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut p = init_params(1);
        let other = EgatParams::init(crate::egat::EgatDims { hidden: 8, ..Default::default() }, 1);
        let mut adam = AdamState::new(&p);
        assert!(matches!(adam_step(&mut adam, &mut p, &other), Err(TrainError::ShapeMismatch)));
    }

    #[test]
    fn zero_epochs_is_identity() {
        let set = TrainingSet::from_instances(vec![generate_random(8, 1).unwrap()]);
        let p = init_params(4);
        let mut adam = AdamState::new(&p);
        let opts = TrainOptions { epochs: 0, ..Default::default() };
        let (out, log) = train(p.clone(), &set, &set, &opts, &mut adam).unwrap();
        assert_eq!(out, p);
        assert_eq!(log.records.len(), 1);
    }

    #[test]
    fn single_instance_overfits() {
        let set = TrainingSet::from_instances(vec![generate_random(12, 5).unwrap()]);
        let p = init_params(5);
        let mut adam = AdamState::new(&p).with_lr(1e-2);
        let opts = TrainOptions { epochs: 60, ..Default::default() };
        let (best, log) = train(p.clone(), &set, &set, &opts, &mut adam).unwrap();
        let b0 = predicted_bound(&p, &set.graphs[0].instance).unwrap();
        let b1 = predicted_bound(&best, &set.graphs[0].instance).unwrap();
        assert!(b1 >= b0);
        assert!(log.best_val_bound > log.records[0].mean_val_bound);
    }

    #[test]
    fn extraction_is_reproducible() {
        let cfg = DatasetConfig::random(20, 0);
        let a = build_training_set(&cfg, 3, 4, 9).unwrap();
        let b = build_training_set(&cfg, 3, 4, 9).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.graphs.iter().zip(&b.graphs) {
            assert_eq!(x.tag, y.tag);
            assert_eq!(x.instance.states(), y.instance.states());
        }
        assert_eq!(a.roots(), 3);
        for g in &a.graphs {
            assert!(hk_bound(&g.instance, &crate::heldkarp::MultiplierVector::zeros(20)).is_ok());
        }
        let roots_only = build_training_set(&cfg, 3, 0, 9).unwrap();
        assert_eq!(roots_only.len(), 3);
    }
}
