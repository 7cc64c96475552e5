//! Complete Euclidean TSP instances: generators, TSPLIB loading, node/edge
//! features and the versioned JSON file format.
//!
//! Node `0` is always the node excluded from the spanning part of a 1-tree.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of features attached to every node.
pub const NODE_FEATURES: usize = 6;
/// Number of features attached to every edge.
pub const EDGE_FEATURES: usize = 3;

pub const INSTANCE_FORMAT: &str = "hklearn-instance";
pub const INSTANCE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing or incomplete section {0}")]
    MissingSection(String),
    #[error("incompatible instance file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid edge state: {0}")]
    State(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = InstanceError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EdgeState {
    #[default]
    Free,
    Mandatory,
    Forbidden,
}

/// How edge costs relate to the coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    /// Full precision Euclidean distances.
    Euclidean,
    /// TSPLIB `nint` rounding of Euclidean distances.
    RoundedEuclidean,
    /// Costs given explicitly; coordinates are placeholders.
    Explicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Random,
    Clustered,
    Hard,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Random => "random",
            DatasetKind::Clustered => "clustered",
            DatasetKind::Hard => "hard",
        })
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = InstanceError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(DatasetKind::Random),
            "clustered" => Ok(DatasetKind::Clustered),
            "hard" => Ok(DatasetKind::Hard),
            other => Err(InstanceError::InvalidConfig(format!("unknown dataset kind `{other}`"))),
        }
    }
}

/// Where an instance came from.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub name: String,
    pub kind: Option<DatasetKind>,
    pub seed: Option<u64>,
}

/// Which formula backs the fourth node feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NearestFeature {
    /// Distance from the node to its nearest other node.
    #[default]
    NearestDistance,
    /// Minimum of the other nodes' mean distances.
    MinOtherMeanDistance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    n: usize,
    coords: Vec<[f64; 2]>,
    cost: Vec<f64>,
    cost_model: CostModel,
    endpoints: Vec<(usize, usize)>,
    edge_state: Vec<EdgeState>,
    node_features: Vec<[f64; NODE_FEATURES]>,
    edge_features: Vec<[f64; EDGE_FEATURES]>,
    provenance: Provenance,
}

/// Index of the unordered edge `{i, j}` in an `n`-node complete graph.
#[inline]
pub fn edge_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i != j && i < n && j < n);
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    a * n - a * (a + 1) / 2 + (b - a - 1)
}

pub fn edge_count(n: usize) -> usize {
    n * (n.saturating_sub(1)) / 2
}

fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl Instance {
    /// Builds an instance from coordinates. All edges start `Free`.
    pub fn from_coords(coords: Vec<[f64; 2]>, cost_model: CostModel, provenance: Provenance) -> Result<Self> {
        if cost_model == CostModel::Explicit {
            return Err(InstanceError::InvalidConfig(
                "explicit costs need a cost matrix".into(),
            ));
        }
        let n = coords.len();
        if n < 3 {
            return Err(InstanceError::InvalidConfig(format!("need at least 3 nodes, got {n}")));
        }
        let mut cost = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = euclid(coords[i], coords[j]);
                let d = match cost_model {
                    CostModel::RoundedEuclidean => (d + 0.5).floor(),
                    _ => d,
                };
                cost[i * n + j] = d;
                cost[j * n + i] = d;
            }
        }
        Ok(Self::assemble(n, coords, cost, cost_model, provenance))
    }

    /// Builds an instance from a symmetric cost matrix (no geometry).
    pub fn from_cost_matrix(matrix: &[Vec<f64>], provenance: Provenance) -> Result<Self> {
        let n = matrix.len();
        if n < 3 {
            return Err(InstanceError::InvalidConfig(format!("need at least 3 nodes, got {n}")));
        }
        let mut cost = vec![0.0; n * n];
        for (i, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(InstanceError::InvalidConfig(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            for (j, &c) in row.iter().enumerate() {
                let ok = if i == j { c == 0.0 } else { c.is_finite() && c >= 0.0 && c == matrix[j][i] };
                if !ok {
                    return Err(InstanceError::InvalidConfig(format!(
                        "cost matrix must be symmetric, non-negative with zero diagonal (entry {i},{j})"
                    )));
                }
                cost[i * n + j] = c;
            }
        }
        Ok(Self::assemble(n, vec![[0.0, 0.0]; n], cost, CostModel::Explicit, provenance))
    }

    fn assemble(n: usize, coords: Vec<[f64; 2]>, cost: Vec<f64>, cost_model: CostModel, provenance: Provenance) -> Self {
        let mut endpoints = Vec::with_capacity(edge_count(n));
        for i in 0..n {
            for j in (i + 1)..n {
                endpoints.push((i, j));
            }
        }
        let m = endpoints.len();
        let mut inst = Instance {
            n,
            coords,
            cost,
            cost_model,
            endpoints,
            edge_state: vec![EdgeState::Free; m],
            node_features: vec![[0.0; NODE_FEATURES]; n],
            edge_features: vec![[0.0; EDGE_FEATURES]; m],
            provenance,
        };
        inst.compute_features();
        inst
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.endpoints.len()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn cost_model(&self) -> CostModel {
        self.cost_model
    }

    /// True when every tour cost is an integer.
    pub fn has_integral_costs(&self) -> bool {
        match self.cost_model {
            CostModel::RoundedEuclidean => true,
            CostModel::Euclidean => false,
            CostModel::Explicit => self.cost.iter().all(|c| c.fract() == 0.0),
        }
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn set_provenance(&mut self, provenance: Provenance) {
        self.provenance = provenance;
    }

    #[inline]
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.n + j]
    }

    #[inline]
    pub fn edge(&self, i: usize, j: usize) -> usize {
        edge_index(self.n, i, j)
    }

    #[inline]
    pub fn endpoints(&self, e: usize) -> (usize, usize) {
        self.endpoints[e]
    }

    /// Per-edge costs in edge-index order.
    pub fn edge_costs(&self) -> Vec<f64> {
        self.endpoints.iter().map(|&(i, j)| self.cost(i, j)).collect()
    }

    #[inline]
    pub fn state(&self, e: usize) -> EdgeState {
        self.edge_state[e]
    }

    pub fn states(&self) -> &[EdgeState] {
        &self.edge_state
    }

    /// Sets the state of one edge. Features are not refreshed.
    ///
    /// Fails when the edge would become the third mandatory edge of a node.
    pub fn set_state(&mut self, e: usize, state: EdgeState) -> Result<()> {
        if state == EdgeState::Mandatory && self.edge_state[e] != EdgeState::Mandatory {
            let (i, j) = self.endpoints[e];
            for v in [i, j] {
                if self.mandatory_degree(v) >= 2 {
                    return Err(InstanceError::State(format!("node {v} already has two mandatory edges")));
                }
            }
        }
        self.edge_state[e] = state;
        Ok(())
    }

    /// Replaces all states at once. Fails if any node ends up with more than two mandatory edges.
    pub fn set_states(&mut self, states: Vec<EdgeState>) -> Result<()> {
        if states.len() != self.edge_count() {
            return Err(InstanceError::State(format!(
                "expected {} edge states, got {}",
                self.edge_count(),
                states.len()
            )));
        }
        let mut mand = vec![0usize; self.n];
        for (e, s) in states.iter().enumerate() {
            if *s == EdgeState::Mandatory {
                let (i, j) = self.endpoints[e];
                mand[i] += 1;
                mand[j] += 1;
            }
        }
        if let Some(v) = mand.iter().position(|&d| d > 2) {
            return Err(InstanceError::State(format!("node {v} has more than two mandatory edges")));
        }
        self.edge_state = states;
        Ok(())
    }

    pub fn mandatory_degree(&self, v: usize) -> usize {
        (0..self.n)
            .filter(|&u| u != v && self.edge_state[self.edge(u, v)] == EdgeState::Mandatory)
            .count()
    }

    /// Number of non-forbidden edges incident to `v`.
    pub fn allowed_degree(&self, v: usize) -> usize {
        (0..self.n)
            .filter(|&u| u != v && self.edge_state[self.edge(u, v)] != EdgeState::Forbidden)
            .count()
    }

    pub fn node_features(&self) -> &[[f64; NODE_FEATURES]] {
        &self.node_features
    }

    pub fn edge_features(&self) -> &[[f64; EDGE_FEATURES]] {
        &self.edge_features
    }

    /// Recomputes node and edge features from coordinates, costs and states.
    pub fn compute_features(&mut self) {
        self.compute_features_with(NearestFeature::default());
    }

    pub fn compute_features_with(&mut self, nearest: NearestFeature) {
        let n = self.n;
        // geometric distances: Euclidean on coordinates, or costs when there is no geometry
        let dist = |i: usize, j: usize| match self.cost_model {
            CostModel::Explicit => self.cost(i, j),
            _ => euclid(self.coords[i], self.coords[j]),
        };
        let mut mean = vec![0.0; n];
        let mut nearest_d = vec![f64::INFINITY; n];
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                if j != i {
                    let d = dist(i, j);
                    sum += d;
                    nearest_d[i] = nearest_d[i].min(d);
                }
            }
            mean[i] = sum / (n - 1) as f64;
        }
        for i in 0..n {
            let f4 = match nearest {
                NearestFeature::NearestDistance => nearest_d[i],
                NearestFeature::MinOtherMeanDistance => (0..n)
                    .filter(|&j| j != i)
                    .map(|j| mean[j])
                    .fold(f64::INFINITY, f64::min),
            };
            self.node_features[i] = [
                self.coords[i][0],
                self.coords[i][1],
                mean[i],
                f4,
                self.allowed_degree(i) as f64,
                if i == 0 { 1.0 } else { 0.0 },
            ];
        }
        for (e, &(i, j)) in self.endpoints.iter().enumerate() {
            let s = self.edge_state[e];
            self.edge_features[e] = [
                self.cost(i, j),
                (s == EdgeState::Forbidden) as u8 as f64,
                (s == EdgeState::Mandatory) as u8 as f64,
            ];
        }
    }

    /// Copy with coordinates rotated by `angle` about their centroid, and
    /// mirrored first if `reflect`. Costs and edge states are kept as they are.
    pub fn rotated(&self, angle: f64, reflect: bool) -> Instance {
        let mut out = self.clone();
        if self.cost_model == CostModel::Explicit {
            return out;
        }
        let k = self.n as f64;
        let cx = self.coords.iter().map(|c| c[0]).sum::<f64>() / k;
        let cy = self.coords.iter().map(|c| c[1]).sum::<f64>() / k;
        let (s, c) = angle.sin_cos();
        for p in &mut out.coords {
            let x = if reflect { cx - p[0] } else { p[0] - cx };
            let y = p[1] - cy;
            *p = [cx + c * x - s * y, cy + s * x + c * y];
        }
        out.compute_features();
        out
    }

    /// Cost of a closed tour given as a node permutation.
    pub fn tour_cost(&self, tour: &[usize]) -> f64 {
        (0..tour.len())
            .map(|k| self.cost(tour[k], tour[(k + 1) % tour.len()]))
            .sum()
    }

    /// Saves to the versioned JSON format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = InstanceFile::from(self);
        fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&InstanceFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        if raw.get("format").and_then(|f| f.as_str()) != Some(INSTANCE_FORMAT) {
            return Err(InstanceError::UnsupportedFormat("not an hklearn instance file".into()));
        }
        let found = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != INSTANCE_VERSION {
            return Err(InstanceError::Version { found, expected: INSTANCE_VERSION });
        }
        let file: InstanceFile = serde_json::from_value(raw)?;
        file.into_instance()
    }
}

/// On-disk representation, version 1.
#[derive(Serialize, Deserialize)]
struct InstanceFile {
    format: String,
    version: u32,
    name: String,
    kind: Option<DatasetKind>,
    seed: Option<u64>,
    cost_model: CostModel,
    coords: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    costs: Option<Vec<Vec<f64>>>,
    /// Non-free edges as `(i, j, state)` with `i < j`.
    #[serde(default)]
    fixed_edges: Vec<(usize, usize, EdgeState)>,
}

impl From<&Instance> for InstanceFile {
    fn from(inst: &Instance) -> Self {
        let costs = (inst.cost_model == CostModel::Explicit).then(|| {
            (0..inst.n).map(|i| (0..inst.n).map(|j| inst.cost(i, j)).collect()).collect()
        });
        let fixed_edges = inst
            .endpoints
            .iter()
            .zip(&inst.edge_state)
            .filter(|(_, s)| **s != EdgeState::Free)
            .map(|(&(i, j), &s)| (i, j, s))
            .collect();
        InstanceFile {
            format: INSTANCE_FORMAT.to_string(),
            version: INSTANCE_VERSION,
            name: inst.provenance.name.clone(),
            kind: inst.provenance.kind,
            seed: inst.provenance.seed,
            cost_model: inst.cost_model,
            coords: inst.coords.clone(),
            costs,
            fixed_edges,
        }
    }
}

impl InstanceFile {
    fn into_instance(self) -> Result<Instance> {
        let provenance = Provenance { name: self.name, kind: self.kind, seed: self.seed };
        let mut inst = match self.cost_model {
            CostModel::Explicit => {
                let costs = self
                    .costs
                    .ok_or_else(|| InstanceError::MissingSection("costs".into()))?;
                let mut inst = Instance::from_cost_matrix(&costs, provenance)?;
                if self.coords.len() == inst.n {
                    inst.coords = self.coords;
                }
                inst
            }
            model => Instance::from_coords(self.coords, model, provenance)?,
        };
        let mut states = vec![EdgeState::Free; inst.edge_count()];
        for (i, j, s) in self.fixed_edges {
            if i >= inst.n || j >= inst.n || i == j {
                return Err(InstanceError::State(format!("bad edge ({i}, {j})")));
            }
            states[inst.edge(i, j)] = s;
        }
        inst.set_states(states)?;
        inst.compute_features();
        Ok(inst)
    }
}

/// The five-city instance with integer costs used throughout the docs.
///
/// Its optimal tour `0-1-4-3-2-0` costs 62; the plain minimum 1-tree costs 50.
pub fn five_city_example() -> Instance {
    let pairs = [
        ((0, 1), 10.0),
        ((0, 2), 16.0),
        ((0, 3), 22.0),
        ((0, 4), 20.0),
        ((1, 2), 5.0),
        ((1, 3), 12.0),
        ((1, 4), 7.0),
        ((2, 3), 14.0),
        ((2, 4), 40.0),
        ((3, 4), 15.0),
    ];
    let mut m = vec![vec![0.0; 5]; 5];
    for ((i, j), c) in pairs {
        m[i][j] = c;
        m[j][i] = c;
    }
    Instance::from_cost_matrix(&m, Provenance { name: "five-city".into(), kind: None, seed: None })
        .expect("valid matrix")
}

/// Derives the seed of the `index`-th instance of a seeded suite.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 step
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` uniform cities in the unit square.
pub fn generate_random(n: usize, seed: u64) -> Result<Instance> {
    if n < 5 {
        return Err(InstanceError::InvalidConfig(format!("need at least 5 cities, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    Instance::from_coords(
        coords,
        CostModel::Euclidean,
        Provenance { name: format!("random{n}-{seed}"), kind: Some(DatasetKind::Random), seed: Some(seed) },
    )
}

/// Cluster centers and cities of a clustered instance.
///
/// City `i` belongs to cluster `i % n_clusters` and is drawn uniformly in the
/// disk of the given radius around its center.
pub fn clustered_layout(
    n: usize,
    n_clusters: usize,
    radius: f64,
    seed: u64,
) -> Result<(Vec<[f64; 2]>, Vec<[f64; 2]>)> {
    if n_clusters < 1 || n < n_clusters {
        return Err(InstanceError::InvalidConfig(format!(
            "need n >= n_clusters >= 1 (n = {n}, clusters = {n_clusters})"
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(InstanceError::InvalidConfig(format!("cluster radius must be positive, got {radius}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<[f64; 2]> = (0..n_clusters).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    let coords = (0..n)
        .map(|i| {
            let c = centers[i % n_clusters];
            let r = radius * rng.gen::<f64>().sqrt();
            let a = std::f64::consts::TAU * rng.gen::<f64>();
            [c[0] + r * a.cos(), c[1] + r * a.sin()]
        })
        .collect();
    Ok((centers, coords))
}

pub fn generate_clustered(n: usize, n_clusters: usize, radius: f64, seed: u64) -> Result<Instance> {
    if n < 5 {
        return Err(InstanceError::InvalidConfig(format!("need at least 5 cities, got {n}")));
    }
    let (_, coords) = clustered_layout(n, n_clusters, radius, seed)?;
    Instance::from_coords(
        coords,
        CostModel::Euclidean,
        Provenance { name: format!("clustered{n}-{seed}"), kind: Some(DatasetKind::Clustered), seed: Some(seed) },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub n_cities: usize,
    pub n_clusters: usize,
    pub cluster_radius: f64,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn random(n_cities: usize, seed: u64) -> Self {
        DatasetConfig { kind: DatasetKind::Random, n_cities, n_clusters: 5, cluster_radius: 0.1, seed }
    }

    pub fn clustered(n_cities: usize, seed: u64) -> Self {
        DatasetConfig { kind: DatasetKind::Clustered, ..Self::random(n_cities, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cities < 5 {
            return Err(InstanceError::InvalidConfig(format!("need at least 5 cities, got {}", self.n_cities)));
        }
        if !(self.cluster_radius > 0.0) {
            return Err(InstanceError::InvalidConfig("cluster radius must be positive".into()));
        }
        Ok(())
    }

    /// The `index`-th instance of this suite.
    pub fn generate(&self, index: u64) -> Result<Instance> {
        self.validate()?;
        let seed = derive_seed(self.seed, index);
        match self.kind {
            DatasetKind::Random => generate_random(self.n_cities, seed),
            DatasetKind::Clustered => generate_clustered(self.n_cities, self.n_clusters, self.cluster_radius, seed),
            DatasetKind::Hard => Err(InstanceError::InvalidConfig(
                "hard instances are loaded from TSPLIB files, not generated".into(),
            )),
        }
    }

    pub fn generate_many(&self, count: usize) -> Result<Vec<Instance>> {
        (0..count as u64).map(|k| self.generate(k)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TsplibOptions {
    /// Round distances to the nearest integer as TSPLIB's EUC_2D does.
    pub round: bool,
}

pub fn load_tsplib(path: impl AsRef<Path>, opts: TsplibOptions) -> Result<Instance> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut inst = parse_tsplib(&text, opts)?;
    if inst.provenance.name.is_empty() {
        inst.provenance.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(inst)
}

/// Parses the EUC_2D subset of TSPLIB.
pub fn parse_tsplib(text: &str, opts: TsplibOptions) -> Result<Instance> {
    let mut name = String::new();
    let mut dimension: Option<usize> = None;
    let mut weight_type: Option<String> = None;
    let mut coords: Vec<Option<[f64; 2]>> = Vec::new();
    let mut in_coords = false;
    let mut seen_coords = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line == "EOF" {
            break;
        }
        if in_coords {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parse_f = |s: &str| {
                s.parse::<f64>().map_err(|_| InstanceError::Parse { line: line_no, msg: format!("bad number `{s}`") })
            };
            if parts.len() == 3 && parts[0].parse::<usize>().is_ok() {
                let id: usize = parts[0].parse().unwrap();
                let dim = coords.len();
                if id == 0 || id > dim {
                    return Err(InstanceError::Parse { line: line_no, msg: format!("node id {id} out of range 1..={dim}") });
                }
                coords[id - 1] = Some([parse_f(parts[1])?, parse_f(parts[2])?]);
                continue;
            }
            if parts[0].chars().next().is_some_and(|c| c.is_ascii_digit() || c == '-') {
                return Err(InstanceError::Parse { line: line_no, msg: format!("malformed coordinate line `{line}`") });
            }
            in_coords = false;
        }
        let (key, value) = match line.split_once(':') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => (line, ""),
        };
        match key {
            "NAME" => name = value.to_string(),
            "TYPE" => {
                if value != "TSP" {
                    return Err(InstanceError::UnsupportedFormat(format!("TYPE {value}")));
                }
            }
            "COMMENT" => {}
            "DIMENSION" => {
                let d = value
                    .parse::<usize>()
                    .map_err(|_| InstanceError::Parse { line: line_no, msg: format!("bad DIMENSION `{value}`") })?;
                dimension = Some(d);
            }
            "EDGE_WEIGHT_TYPE" => {
                if value != "EUC_2D" {
                    return Err(InstanceError::UnsupportedFormat(format!("EDGE_WEIGHT_TYPE {value}")));
                }
                weight_type = Some(value.to_string());
            }
            "NODE_COORD_SECTION" => {
                let d = dimension.ok_or_else(|| InstanceError::MissingSection("DIMENSION".into()))?;
                coords = vec![None; d];
                in_coords = true;
                seen_coords = true;
            }
            other => {
                return Err(InstanceError::Parse { line: line_no, msg: format!("unexpected keyword `{other}`") });
            }
        }
    }

    if weight_type.is_none() {
        return Err(InstanceError::MissingSection("EDGE_WEIGHT_TYPE".into()));
    }
    if !seen_coords {
        return Err(InstanceError::MissingSection("NODE_COORD_SECTION".into()));
    }
    let coords: Vec<[f64; 2]> = coords
        .into_iter()
        .collect::<Option<_>>()
        .ok_or_else(|| InstanceError::MissingSection("NODE_COORD_SECTION".into()))?;
    let model = if opts.round { CostModel::RoundedEuclidean } else { CostModel::Euclidean };
    Instance::from_coords(coords, model, Provenance { name, kind: Some(DatasetKind::Hard), seed: None })
}
