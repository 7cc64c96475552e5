//! Edge-featured graph attention network mapping an instance to one
//! Lagrangian multiplier per node, with an exact reverse-mode pass.
//!
//! Each attention layer computes
//!
//! ```text
//! z_ij  = a · [h_i ‖ k_ij ‖ h_j]
//! α_ij  = softmax_{j ∈ N(i)} LeakyReLU(z_ij)
//! h'_i  = ReLU(Σ_j α_ij W h_j)
//! ```
//!
//! where `N(i)` are the nodes joined to `i` by a non-forbidden edge. A two
//! layer perceptron turns the last embedding into `θ_i`.
//!
//! Inputs are normalised by the instance's mean pairwise distance `s`
//! (coordinates are also centred) and the outputs are multiplied by `s`, so
//! the model is equivariant to translating and rescaling the instance.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heldkarp::MultiplierVector;
use crate::instance::{DatasetKind, EdgeState, Instance, EDGE_FEATURES, NODE_FEATURES};

pub const MODEL_FORMAT: &str = "hklearn-egat";
pub const MODEL_VERSION: u32 = 1;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum EgatError {
    #[error("node {0} has no usable neighbour")]
    EmptyNeighborhood(usize),
    #[error("architecture mismatch: {0}")]
    Dimension(String),
    #[error("incompatible model file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("not a model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Architecture sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgatDims {
    pub node_in: usize,
    pub edge_in: usize,
    pub hidden: usize,
    pub layers: usize,
    pub head_hidden: usize,
}

impl Default for EgatDims {
    fn default() -> Self {
        EgatDims { node_in: NODE_FEATURES, edge_in: EDGE_FEATURES, hidden: 32, layers: 3, head_hidden: 32 }
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let data = glorot_vec(rows * cols, cols, rows, rng);
        Matrix { rows, cols, data }
    }

    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = self · x`
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), x);
        }
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn glorot_vec(len: usize, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Vec<f64> {
    let b = glorot_bound(fan_in, fan_out);
    (0..len).map(|_| rng.gen_range(-b..=b)).collect()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatLayer {
    /// Message weights, `hidden × d_in`.
    pub message: Matrix,
    /// Attention weights over `[h_i ‖ k_ij ‖ h_j]`, length `2·d_in + edge_in`.
    pub attention: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub hidden: Matrix,
    pub hidden_bias: Vec<f64>,
    pub out: Vec<f64>,
    pub out_bias: Vec<f64>,
}

/// All trainable weights. Gradients use the same type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgatParams {
    pub dims: EgatDims,
    pub layers: Vec<GatLayer>,
    pub head: Head,
}

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
pub fn init_params(seed: u64) -> EgatParams {
    EgatParams::init(EgatDims::default(), seed)
}

impl EgatParams {
    pub fn init(dims: EgatDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.layers);
        let mut d_in = dims.node_in;
        for _ in 0..dims.layers {
            let message = Matrix::glorot(dims.hidden, d_in, &mut rng);
            let width = 2 * d_in + dims.edge_in;
            let attention = glorot_vec(width, width, 1, &mut rng);
            layers.push(GatLayer { message, attention });
            d_in = dims.hidden;
        }
        let head = Head {
            hidden: Matrix::glorot(dims.head_hidden, dims.hidden, &mut rng),
            hidden_bias: vec![0.0; dims.head_hidden],
            out: glorot_vec(dims.head_hidden, dims.head_hidden, 1, &mut rng),
            out_bias: vec![0.0],
        };
        EgatParams { dims, layers, head }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Every weight tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::with_capacity(2 * self.layers.len() + 4);
        for l in &self.layers {
            v.push(&l.message.data);
            v.push(&l.attention);
        }
        v.push(&self.head.hidden.data);
        v.push(&self.head.hidden_bias);
        v.push(&self.head.out);
        v.push(&self.head.out_bias);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::with_capacity(2 * self.layers.len() + 4);
        for l in &mut self.layers {
            v.push(&mut l.message.data);
            v.push(&mut l.attention);
        }
        v.push(&mut self.head.hidden.data);
        v.push(&mut self.head.hidden_bias);
        v.push(&mut self.head.out);
        v.push(&mut self.head.out_bias);
        v
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for k in 0..self.layers.len() {
            v.push(format!("layer{k}.message"));
            v.push(format!("layer{k}.attention"));
        }
        v.extend(["head.hidden", "head.hidden_bias", "head.out", "head.out_bias"].map(String::from));
        v
    }

    pub fn num_weights(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Checks that every tensor has the size implied by `dims`.
    pub fn check_shapes(&self) -> Result<(), EgatError> {
        let d = self.dims;
        if self.layers.len() != d.layers {
            return Err(EgatError::Dimension(format!("{} layers, expected {}", self.layers.len(), d.layers)));
        }
        let mut d_in = d.node_in;
        for (k, l) in self.layers.iter().enumerate() {
            let m = &l.message;
            if m.rows != d.hidden || m.cols != d_in || m.data.len() != d.hidden * d_in {
                return Err(EgatError::Dimension(format!("layer{k}.message is {}x{}", m.rows, m.cols)));
            }
            if l.attention.len() != 2 * d_in + d.edge_in {
                return Err(EgatError::Dimension(format!("layer{k}.attention has {} entries", l.attention.len())));
            }
            d_in = d.hidden;
        }
        let h = &self.head;
        if h.hidden.rows != d.head_hidden
            || h.hidden.cols != d.hidden
            || h.hidden.data.len() != d.head_hidden * d.hidden
            || h.hidden_bias.len() != d.head_hidden
            || h.out.len() != d.head_hidden
            || h.out_bias.len() != 1
        {
            return Err(EgatError::Dimension("head shapes".into()));
        }
        Ok(())
    }
}

struct LayerTape {
    /// `n × d_in`
    input: Vec<f64>,
    /// `W h_j`, `n × hidden`
    message: Vec<f64>,
    /// raw logits per neighbour slot
    logits: Vec<f64>,
    /// attention weights per neighbour slot
    alpha: Vec<f64>,
    /// pre-activation sums, `n × hidden`
    pre: Vec<f64>,
}

/// Activations recorded by [`forward`] for one [`backward`] call.
pub struct ForwardTape {
    n: usize,
    scale: f64,
    /// CSR neighbour lists: `nbr[offsets[i]..offsets[i + 1]]`
    offsets: Vec<usize>,
    nbr: Vec<usize>,
    /// normalised edge features per neighbour slot
    edge_in: Vec<[f64; EDGE_FEATURES]>,
    layers: Vec<LayerTape>,
    /// `n × hidden`
    embed: Vec<f64>,
    /// `n × head_hidden`
    head_pre: Vec<f64>,
}

impl ForwardTape {
    /// Attention weights of `layer` for node `i`, paired with the neighbour ids.
    pub fn attention(&self, layer: usize, i: usize) -> Vec<(usize, f64)> {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        self.nbr[a..b].iter().copied().zip(self.layers[layer].alpha[a..b].iter().copied()).collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }
}

/// Length scale used to normalise inputs: mean distance between nodes.
fn input_scale(inst: &Instance) -> f64 {
    let s = inst.node_features().iter().map(|f| f[2]).sum::<f64>() / inst.n() as f64;
    if s > 0.0 && s.is_finite() { s } else { 1.0 }
}

fn node_inputs(inst: &Instance, scale: f64) -> Vec<f64> {
    let n = inst.n();
    let feats = inst.node_features();
    let (mut cx, mut cy) = (0.0, 0.0);
    for f in feats {
        cx += f[0];
        cy += f[1];
    }
    cx /= n as f64;
    cy /= n as f64;
    let mut x = Vec::with_capacity(n * NODE_FEATURES);
    for f in feats {
        x.extend_from_slice(&[
            (f[0] - cx) / scale,
            (f[1] - cy) / scale,
            f[2] / scale,
            f[3] / scale,
            f[4] / (n - 1) as f64,
            f[5],
        ]);
    }
    x
}

/// Predicts one multiplier per node.
pub fn forward(params: &EgatParams, inst: &Instance) -> Result<(MultiplierVector, ForwardTape), EgatError> {
    let d = params.dims;
    if d.node_in != NODE_FEATURES || d.edge_in != EDGE_FEATURES {
        return Err(EgatError::Dimension("input widths differ from the instance features".into()));
    }
    let n = inst.n();
    let h_dim = d.hidden;
    let scale = input_scale(inst);

    let mut offsets = Vec::with_capacity(n + 1);
    let mut nbr = Vec::new();
    let mut edge_in = Vec::new();
    offsets.push(0);
    let ef = inst.edge_features();
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let e = inst.edge(i, j);
            if inst.state(e) == EdgeState::Forbidden {
                continue;
            }
            nbr.push(j);
            edge_in.push([ef[e][0] / scale, ef[e][1], ef[e][2]]);
        }
        if nbr.len() == *offsets.last().unwrap() {
            return Err(EgatError::EmptyNeighborhood(i));
        }
        offsets.push(nbr.len());
    }
    let slots = nbr.len();

    let mut h = node_inputs(inst, scale);
    let mut d_in = d.node_in;
    let mut tapes = Vec::with_capacity(d.layers);
    for layer in &params.layers {
        let a_src = &layer.attention[..d_in];
        let a_edge = &layer.attention[d_in..d_in + d.edge_in];
        let a_dst = &layer.attention[d_in + d.edge_in..];

        let mut message = vec![0.0; n * h_dim];
        let mut src = vec![0.0; n];
        let mut dst = vec![0.0; n];
        for j in 0..n {
            let hj = &h[j * d_in..(j + 1) * d_in];
            layer.message.apply(hj, &mut message[j * h_dim..(j + 1) * h_dim]);
            src[j] = dot(a_src, hj);
            dst[j] = dot(a_dst, hj);
        }

        let mut logits = vec![0.0; slots];
        let mut alpha = vec![0.0; slots];
        let mut pre = vec![0.0; n * h_dim];
        for i in 0..n {
            let (a, b) = (offsets[i], offsets[i + 1]);
            let mut max = f64::NEG_INFINITY;
            for s in a..b {
                let z = src[i] + dot(a_edge, &edge_in[s]) + dst[nbr[s]];
                logits[s] = z;
                let act = if z > 0.0 { z } else { LEAKY_SLOPE * z };
                alpha[s] = act;
                max = max.max(act);
            }
            let mut denom = 0.0;
            for s in a..b {
                alpha[s] = (alpha[s] - max).exp();
                denom += alpha[s];
            }
            let out = &mut pre[i * h_dim..(i + 1) * h_dim];
            for s in a..b {
                alpha[s] /= denom;
                let j = nbr[s];
                axpy(alpha[s], &message[j * h_dim..(j + 1) * h_dim], out);
            }
        }
        let next: Vec<f64> = pre.iter().map(|&u| u.max(0.0)).collect();
        tapes.push(LayerTape { input: std::mem::replace(&mut h, next), message, logits, alpha, pre });
        d_in = h_dim;
    }

    let head = &params.head;
    let hh = d.head_hidden;
    let mut head_pre = vec![0.0; n * hh];
    let mut theta = Vec::with_capacity(n);
    for i in 0..n {
        let q = &mut head_pre[i * hh..(i + 1) * hh];
        head.hidden.apply(&h[i * h_dim..(i + 1) * h_dim], q);
        let mut out = head.out_bias[0];
        for (r, qr) in q.iter_mut().enumerate() {
            *qr += head.hidden_bias[r];
            out += head.out[r] * qr.max(0.0);
        }
        theta.push(scale * out);
    }

    let tape = ForwardTape { n, scale, offsets, nbr, edge_in, layers: tapes, embed: h, head_pre };
    Ok((MultiplierVector(theta), tape))
}

/// Gradient of `grad_thetaᵀ θ` with respect to every weight.
pub fn backward(params: &EgatParams, tape: ForwardTape, grad_theta: &[f64]) -> EgatParams {
    let d = params.dims;
    let n = tape.n;
    assert_eq!(grad_theta.len(), n, "gradient length differs from node count");
    assert_eq!(tape.layers.len(), params.layers.len(), "tape recorded for another architecture");
    let h_dim = d.hidden;
    let hh = d.head_hidden;
    let mut grad = params.zeros_like();

    // head
    let head = &params.head;
    let mut g_h = vec![0.0; n * h_dim];
    let mut g_q = vec![0.0; hh];
    for i in 0..n {
        let g_out = tape.scale * grad_theta[i];
        if g_out == 0.0 {
            continue;
        }
        grad.head.out_bias[0] += g_out;
        let q = &tape.head_pre[i * hh..(i + 1) * hh];
        for r in 0..hh {
            grad.head.out[r] += g_out * q[r].max(0.0);
            g_q[r] = if q[r] > 0.0 { g_out * head.out[r] } else { 0.0 };
        }
        let hi = &tape.embed[i * h_dim..(i + 1) * h_dim];
        let gh = &mut g_h[i * h_dim..(i + 1) * h_dim];
        for r in 0..hh {
            if g_q[r] == 0.0 {
                continue;
            }
            grad.head.hidden_bias[r] += g_q[r];
            axpy(g_q[r], hi, &mut grad.head.hidden.data[r * h_dim..(r + 1) * h_dim]);
            axpy(g_q[r], head.hidden.row(r), gh);
        }
    }

    // attention layers, last to first
    for (k, (layer, lt)) in params.layers.iter().zip(&tape.layers).enumerate().rev() {
        let d_in = if k == 0 { d.node_in } else { h_dim };
        let a_src = &layer.attention[..d_in];
        let a_dst = &layer.attention[d_in + d.edge_in..];
        let lg = &mut grad.layers[k];

        // through ReLU
        let g_u: Vec<f64> = g_h.iter().zip(&lt.pre).map(|(&g, &u)| if u > 0.0 { g } else { 0.0 }).collect();
        let mut g_msg = vec![0.0; n * h_dim];
        let mut g_src = vec![0.0; n];
        let mut g_dst = vec![0.0; n];
        let mut g_alpha = Vec::new();
        for i in 0..n {
            let (a, b) = (tape.offsets[i], tape.offsets[i + 1]);
            let gu = &g_u[i * h_dim..(i + 1) * h_dim];
            g_alpha.clear();
            let mut weighted = 0.0;
            for s in a..b {
                let j = tape.nbr[s];
                axpy(lt.alpha[s], gu, &mut g_msg[j * h_dim..(j + 1) * h_dim]);
                let ga = dot(gu, &lt.message[j * h_dim..(j + 1) * h_dim]);
                weighted += lt.alpha[s] * ga;
                g_alpha.push(ga);
            }
            for (t, s) in (a..b).enumerate() {
                let g_act = lt.alpha[s] * (g_alpha[t] - weighted);
                let g_z = if lt.logits[s] > 0.0 { g_act } else { LEAKY_SLOPE * g_act };
                g_src[i] += g_z;
                g_dst[tape.nbr[s]] += g_z;
                axpy(g_z, &tape.edge_in[s], &mut lg.attention[d_in..d_in + d.edge_in]);
            }
        }

        let mut g_in = vec![0.0; n * d_in];
        for j in 0..n {
            let hj = &lt.input[j * d_in..(j + 1) * d_in];
            let gin = &mut g_in[j * d_in..(j + 1) * d_in];
            axpy(g_src[j], hj, &mut lg.attention[..d_in]);
            axpy(g_dst[j], hj, &mut lg.attention[d_in + d.edge_in..]);
            axpy(g_src[j], a_src, gin);
            axpy(g_dst[j], a_dst, gin);
            let gm = &g_msg[j * h_dim..(j + 1) * h_dim];
            for (r, &g) in gm.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, hj, &mut lg.message.data[r * d_in..(r + 1) * d_in]);
                    axpy(g, layer.message.row(r), gin);
                }
            }
        }
        g_h = g_in;
    }
    grad
}

/// Training provenance stored next to the weights.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub dataset_kind: Option<DatasetKind>,
    pub n_cities: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    dims: EgatDims,
    tensors: Vec<TensorRecord>,
    #[serde(default)]
    provenance: Option<ModelProvenance>,
}

/// A loaded model and the provenance block, if the file had one.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub params: EgatParams,
    pub provenance: Option<ModelProvenance>,
}

fn tensor_shapes(dims: EgatDims) -> Vec<Vec<usize>> {
    let mut v = Vec::new();
    let mut d_in = dims.node_in;
    for _ in 0..dims.layers {
        v.push(vec![dims.hidden, d_in]);
        v.push(vec![2 * d_in + dims.edge_in]);
        d_in = dims.hidden;
    }
    v.push(vec![dims.head_hidden, dims.hidden]);
    v.push(vec![dims.head_hidden]);
    v.push(vec![dims.head_hidden]);
    v.push(vec![1]);
    v
}

pub fn params_to_json(params: &EgatParams, provenance: &ModelProvenance) -> Result<String, EgatError> {
    let tensors = params
        .tensor_names()
        .into_iter()
        .zip(tensor_shapes(params.dims))
        .zip(params.tensors())
        .map(|((name, shape), data)| TensorRecord { name, shape, data: data.to_vec() })
        .collect();
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        dims: params.dims,
        tensors,
        provenance: Some(provenance.clone()),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn save_params(params: &EgatParams, provenance: &ModelProvenance, path: impl AsRef<Path>) -> Result<(), EgatError> {
    fs::write(path, params_to_json(params, provenance)?)?;
    Ok(())
}

/// Loads a model with the default architecture.
pub fn load_params(path: impl AsRef<Path>) -> Result<LoadedModel, EgatError> {
    params_from_json(&fs::read_to_string(path)?, EgatDims::default())
}

pub fn params_from_json(text: &str, expected: EgatDims) -> Result<LoadedModel, EgatError> {
    let raw: serde_json::Value = serde_json::from_str(text)?;
    if raw.get("format").and_then(|f| f.as_str()) != Some(MODEL_FORMAT) {
        return Err(EgatError::Format("missing hklearn-egat header".into()));
    }
    let found = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != MODEL_VERSION {
        return Err(EgatError::Version { found, expected: MODEL_VERSION });
    }
    let file: ModelFile = serde_json::from_value(raw)?;
    if file.dims != expected {
        return Err(EgatError::Dimension(format!("file has {:?}, expected {:?}", file.dims, expected)));
    }
    let mut params = EgatParams::init(file.dims, 0);
    let names = params.tensor_names();
    let shapes = tensor_shapes(file.dims);
    if file.tensors.len() != names.len() {
        return Err(EgatError::Dimension(format!("{} tensors, expected {}", file.tensors.len(), names.len())));
    }
    for (((slot, rec), name), shape) in params.tensors_mut().into_iter().zip(&file.tensors).zip(&names).zip(&shapes) {
        if &rec.name != name || &rec.shape != shape || rec.data.len() != slot.len() {
            return Err(EgatError::Dimension(format!("tensor `{}` does not match `{name}` {shape:?}", rec.name)));
        }
        slot.copy_from_slice(&rec.data);
    }
    params.check_shapes()?;
    if file.provenance.is_none() {
        log::warn!("model file has no provenance block");
    }
    Ok(LoadedModel { params, provenance: file.provenance })
}
