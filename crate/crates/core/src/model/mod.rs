//! Sequential reference implementation of the three-stage network:
//! per-particle embedding, two EdgeConv layers and the MET readout.
//!
//! Every reduction runs in a fixed order (ascending feature index inside
//! dense layers, ascending source node inside aggregation, ascending node
//! inside the MET sum), so results are bit-reproducible and the simulator
//! can be compared against this module exactly.

mod io;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{Event, NUM_CATEGORICAL, NUM_CONTINUOUS};
use crate::graph::{build_graph, DynamicGraph, GraphError};
use crate::EMBED_DIM;

pub use io::{decode_weights, encode_weights, load_weights, save_weights, WEIGHTS_FORMAT_VERSION, WEIGHTS_MAGIC};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("weights format error at byte offset {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
    Sum,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::Max, Aggregation::Mean, Aggregation::Sum];

    pub fn code(self) -> u8 {
        match self {
            Aggregation::Max => 0,
            Aggregation::Mean => 1,
            Aggregation::Sum => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.code() == code)
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Max => "max",
            Aggregation::Mean => "mean",
            Aggregation::Sum => "sum",
        })
    }
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            "sum" => Ok(Aggregation::Sum),
            other => Err(format!("unknown aggregation mode `{other}` (expected max, mean or sum)")),
        }
    }
}

/// Nonlinearity applied between the dense layers of every MLP. The last
/// layer of each MLP is always linear.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

/// Fully connected layer, `weight` is `out_dim x in_dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    fn check(&self) -> Result<(), ModelError> {
        if self.weight.len() != self.in_dim * self.out_dim || self.bias.len() != self.out_dim {
            return Err(ModelError::Shape(format!(
                "dense {}x{} has {} weights and {} biases",
                self.out_dim,
                self.in_dim,
                self.weight.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    /// `out[j] = (sum_i w[j][i] * x[i]) + b[j]`, sum in ascending `i`.
    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim.max(1))
            .take(self.out_dim)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(0.0f32, |acc, (&w, &xi)| acc + w * xi) + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl Mlp {
    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    fn check(&self, name: &str, in_dim: usize, out_dim: usize) -> Result<(), ModelError> {
        if self.layers.is_empty() {
            return Err(ModelError::Shape(format!("{name}: MLP has no layers")));
        }
        let mut width = in_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.check()?;
            if layer.in_dim != width {
                return Err(ModelError::Shape(format!(
                    "{name}: layer {i} expects width {}, previous width is {width}",
                    layer.in_dim
                )));
            }
            width = layer.out_dim;
        }
        if width != out_dim {
            return Err(ModelError::Shape(format!("{name}: output width {width}, expected {out_dim}")));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        let last = self.layers.len().saturating_sub(1);
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i != last {
                h.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
        }
        h
    }
}

/// Inference-mode batch normalization over running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
}

impl BatchNorm {
    /// `gamma = 1, beta = 0, mean = 0, var = 1, eps = 0`: an exact identity.
    pub fn identity(width: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            eps: 0.0,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, name: &str, width: usize) -> Result<(), ModelError> {
        let lens = [self.gamma.len(), self.beta.len(), self.running_mean.len(), self.running_var.len()];
        if lens.iter().any(|&l| l != width) {
            return Err(ModelError::Shape(format!("{name}: batch norm vectors {lens:?}, expected {width}")));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(ModelError::Shape(format!("{name}: epsilon {} must be finite and >= 0", self.eps)));
        }
        if let Some(i) = self.running_var.iter().position(|&v| !(v > 0.0 && (v + self.eps) > 0.0)) {
            return Err(ModelError::Shape(format!("{name}: running_var[{i}] = {} must be > 0", self.running_var[i])));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                (v - self.running_mean[i]) / (self.running_var[i] + self.eps).sqrt() * self.gamma[i] + self.beta[i]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConvWeights {
    /// Message function over `concat(x_u, x_v - x_u)`.
    pub phi: Mlp,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub activation: Activation,
    /// Aggregation the weights were produced for; callers may override.
    pub aggregation: Aggregation,
    pub cardinalities: [u16; NUM_CATEGORICAL],
    pub cat_dim: usize,
    /// Continuous features are standardized as `(x - mean) / scale`.
    pub norm_mean: [f32; NUM_CONTINUOUS],
    pub norm_scale: [f32; NUM_CONTINUOUS],
    /// One `cardinality x cat_dim` row-major table per categorical feature.
    pub cat_embed: [Vec<f32>; NUM_CATEGORICAL],
    pub stage1_mlp: Mlp,
    pub stage1_bn: BatchNorm,
    pub conv: [EdgeConvWeights; 2],
    pub readout_mlp: Mlp,
}

impl ModelWeights {
    pub fn input_width(&self) -> usize {
        NUM_CONTINUOUS + NUM_CATEGORICAL * self.cat_dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (k, table) in self.cat_embed.iter().enumerate() {
            let expected = self.cardinalities[k] as usize * self.cat_dim;
            if table.len() != expected {
                return Err(ModelError::Shape(format!(
                    "cat_embed.{k} has {} entries, expected {expected}",
                    table.len()
                )));
            }
        }
        if let Some(i) = self.norm_scale.iter().position(|&s| !(s.is_finite() && s != 0.0)) {
            return Err(ModelError::Shape(format!("norm.scale[{i}] must be finite and non-zero")));
        }
        self.stage1_mlp.check("stage1.mlp", self.input_width(), EMBED_DIM)?;
        self.stage1_bn.check("stage1.bn", EMBED_DIM)?;
        for (l, conv) in self.conv.iter().enumerate() {
            let name = format!("conv{}", l + 1);
            conv.phi.check(&format!("{name}.phi"), 2 * EMBED_DIM, EMBED_DIM)?;
            conv.bn.check(&format!("{name}.bn"), EMBED_DIM)?;
        }
        self.readout_mlp.check("readout.mlp", EMBED_DIM, 1)?;
        for mlp in [&self.stage1_mlp, &self.conv[0].phi, &self.conv[1].phi, &self.readout_mlp] {
            if mlp.activation != self.activation {
                return Err(ModelError::Shape("all MLPs must share the model activation".into()));
            }
        }
        Ok(())
    }
}

/// Hidden widths and categorical setup for [`random_weights`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cardinalities: [u16; NUM_CATEGORICAL],
    pub cat_dim: usize,
    pub stage1_hidden: Vec<usize>,
    pub phi_hidden: Vec<usize>,
    pub readout_hidden: Vec<usize>,
    pub activation: Activation,
    pub aggregation: Aggregation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            cardinalities: [8, 3],
            cat_dim: 4,
            stage1_hidden: vec![32],
            phi_hidden: vec![32],
            readout_hidden: vec![16],
            activation: Activation::Relu,
            aggregation: Aggregation::Max,
        }
    }
}

fn random_mlp(rng: &mut ChaCha8Rng, widths: &[usize], activation: Activation) -> Mlp {
    let layers = widths
        .windows(2)
        .map(|w| {
            let (in_dim, out_dim) = (w[0], w[1]);
            let limit = (6.0 / (in_dim + out_dim) as f32).sqrt();
            Dense {
                in_dim,
                out_dim,
                weight: (0..in_dim * out_dim).map(|_| rng.random_range(-limit..limit)).collect(),
                bias: (0..out_dim).map(|_| rng.random_range(-0.1..0.1)).collect(),
            }
        })
        .collect();
    Mlp { layers, activation }
}

fn random_bn(rng: &mut ChaCha8Rng, width: usize) -> BatchNorm {
    BatchNorm {
        gamma: (0..width).map(|_| rng.random_range(0.5..1.5)).collect(),
        beta: (0..width).map(|_| rng.random_range(-0.1..0.1)).collect(),
        running_mean: (0..width).map(|_| rng.random_range(-0.1..0.1)).collect(),
        running_var: (0..width).map(|_| rng.random_range(0.5..2.0)).collect(),
        eps: 1e-5,
    }
}

fn chain(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
}

/// Glorot-uniform dense layers, batch norm with variances in `[0.5, 2)`,
/// identity feature standardization. Deterministic in `seed`.
pub fn random_weights(seed: u64, cfg: &ModelConfig) -> Result<ModelWeights, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let act = cfg.activation;
    let input = NUM_CONTINUOUS + NUM_CATEGORICAL * cfg.cat_dim;
    let cat_embed = [0, 1].map(|k| {
        (0..cfg.cardinalities[k] as usize * cfg.cat_dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f32>>()
    });
    let stage1_mlp = random_mlp(&mut rng, &chain(input, &cfg.stage1_hidden, EMBED_DIM), act);
    let stage1_bn = random_bn(&mut rng, EMBED_DIM);
    let conv = [(), ()].map(|_| EdgeConvWeights {
        phi: random_mlp(&mut rng, &chain(2 * EMBED_DIM, &cfg.phi_hidden, EMBED_DIM), act),
        bn: random_bn(&mut rng, EMBED_DIM),
    });
    let readout_mlp = random_mlp(&mut rng, &chain(EMBED_DIM, &cfg.readout_hidden, 1), act);
    let w = ModelWeights {
        activation: act,
        aggregation: cfg.aggregation,
        cardinalities: cfg.cardinalities,
        cat_dim: cfg.cat_dim,
        norm_mean: [0.0; NUM_CONTINUOUS],
        norm_scale: [1.0; NUM_CONTINUOUS],
        cat_embed,
        stage1_mlp,
        stage1_bn,
        conv,
        readout_mlp,
    };
    w.validate()?;
    Ok(w)
}

/// Row-major `n x d` node embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddingMatrix {
    n: usize,
    d: usize,
    values: Vec<f32>,
}

impl NodeEmbeddingMatrix {
    pub fn zeros(n: usize, d: usize) -> Self {
        NodeEmbeddingMatrix { n, d, values: vec![0.0; n * d] }
    }

    pub fn from_rows(d: usize, rows: Vec<Vec<f32>>) -> Result<Self, ModelError> {
        let n = rows.len();
        let mut values = Vec::with_capacity(n * d);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != d {
                return Err(ModelError::Shape(format!("row {i} has width {}, expected {d}", row.len())));
            }
            values.extend(row);
        }
        Ok(NodeEmbeddingMatrix { n, d, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, v: usize) -> &[f32] {
        &self.values[v * self.d..(v + 1) * self.d]
    }

    pub fn row_mut(&mut self, v: usize) -> &mut [f32] {
        &mut self.values[v * self.d..(v + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.d.max(1)).take(self.n)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }
}

/// Stage 1: standardize continuous features, append the categorical
/// embeddings, then MLP and batch norm.
pub fn embed_particle(
    continuous: &[f32; NUM_CONTINUOUS],
    categorical: &[u16; NUM_CATEGORICAL],
    w: &ModelWeights,
) -> Result<Vec<f32>, ModelError> {
    let mut input = Vec::with_capacity(w.input_width());
    input.extend(continuous.iter().enumerate().map(|(i, &x)| (x - w.norm_mean[i]) / w.norm_scale[i]));
    for (k, &code) in categorical.iter().enumerate() {
        if code >= w.cardinalities[k] {
            return Err(ModelError::Input(format!(
                "categorical code {k} = {code} outside table of {} rows",
                w.cardinalities[k]
            )));
        }
        let start = code as usize * w.cat_dim;
        input.extend_from_slice(&w.cat_embed[k][start..start + w.cat_dim]);
    }
    Ok(w.stage1_bn.apply(&w.stage1_mlp.forward(&input)))
}

pub fn embed_nodes(event: &Event, w: &ModelWeights) -> Result<NodeEmbeddingMatrix, ModelError> {
    let rows = event
        .particles
        .iter()
        .map(|p| embed_particle(&p.continuous, &p.categorical, w))
        .collect::<Result<Vec<_>, _>>()?;
    NodeEmbeddingMatrix::from_rows(EMBED_DIM, rows)
}

/// EdgeConv message `phi(x_u, x_v - x_u)`.
pub fn edge_message(x_u: &[f32], x_v: &[f32], phi: &Mlp) -> Result<Vec<f32>, ModelError> {
    if x_u.len() != x_v.len() || phi.in_dim() != 2 * x_u.len() {
        return Err(ModelError::Shape(format!(
            "edge message: |x_u| = {}, |x_v| = {}, phi expects {}",
            x_u.len(),
            x_v.len(),
            phi.in_dim()
        )));
    }
    let mut input = Vec::with_capacity(2 * x_u.len());
    input.extend_from_slice(x_u);
    input.extend(x_v.iter().zip(x_u).map(|(&v, &u)| v - u));
    Ok(phi.forward(&input))
}

/// Elementwise reduction of `messages` in iteration order. No messages
/// yields the zero vector for every mode.
pub fn aggregate<'a, I>(messages: I, width: usize, mode: Aggregation) -> Vec<f32>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut acc = vec![0.0f32; width];
    let mut count = 0usize;
    for m in messages {
        debug_assert_eq!(m.len(), width);
        if count == 0 {
            acc.copy_from_slice(m);
        } else {
            for (a, &x) in acc.iter_mut().zip(m) {
                *a = match mode {
                    Aggregation::Max => a.max(x),
                    Aggregation::Mean | Aggregation::Sum => *a + x,
                };
            }
        }
        count += 1;
    }
    if mode == Aggregation::Mean && count > 0 {
        let c = count as f32;
        acc.iter_mut().for_each(|a| *a /= c);
    }
    acc
}

/// Node update after aggregation: `bn(aggregate) + x_v`.
pub fn node_update(aggregated: &[f32], x_v: &[f32], bn: &BatchNorm) -> Vec<f32> {
    bn.apply(aggregated).into_iter().zip(x_v).map(|(a, &x)| a + x).collect()
}

pub fn edgeconv_layer(
    x: &NodeEmbeddingMatrix,
    graph: &DynamicGraph,
    layer: &EdgeConvWeights,
    mode: Aggregation,
) -> Result<NodeEmbeddingMatrix, ModelError> {
    if x.n() != graph.num_nodes() {
        return Err(ModelError::Shape(format!("{} embeddings for {} nodes", x.n(), graph.num_nodes())));
    }
    if layer.phi.out_dim() != x.d() || layer.bn.width() != x.d() {
        return Err(ModelError::Shape(format!(
            "layer produces width {} (bn {}), embeddings have width {}",
            layer.phi.out_dim(),
            layer.bn.width(),
            x.d()
        )));
    }
    let incoming = graph.in_edges();
    let mut out = NodeEmbeddingMatrix::zeros(x.n(), x.d());
    for v in 0..x.n() {
        let x_v = x.row(v);
        let messages = incoming
            .of(v)
            .iter()
            .map(|&(u, _)| edge_message(x.row(u), x_v, &layer.phi))
            .collect::<Result<Vec<_>, _>>()?;
        let agg = aggregate(messages.iter().map(Vec::as_slice), x.d(), mode);
        out.row_mut(v).copy_from_slice(&node_update(&agg, x_v, &layer.bn));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub weights: Vec<f32>,
    pub met_x: f64,
    pub met_y: f64,
    pub met: f64,
}

/// Per-particle weights from the readout MLP and the weighted transverse
/// momentum sum. Products of two f32 values are exact in f64, so the sum
/// is accumulated in f64 in ascending node order.
pub fn readout(x: &NodeEmbeddingMatrix, event: &Event, w: &ModelWeights) -> Result<Readout, ModelError> {
    if x.n() != event.len() || x.d() != w.readout_mlp.in_dim() {
        return Err(ModelError::Shape(format!(
            "readout of {}x{} embeddings for {} particles",
            x.n(),
            x.d(),
            event.len()
        )));
    }
    let weights: Vec<f32> = x.rows().map(|row| w.readout_mlp.forward(row)[0]).collect();
    let (mut met_x, mut met_y) = (0.0f64, 0.0f64);
    for (wi, p) in weights.iter().zip(&event.particles) {
        met_x += *wi as f64 * p.px() as f64;
        met_y += *wi as f64 * p.py() as f64;
    }
    let met = (met_x * met_x + met_y * met_y).sqrt();
    Ok(Readout { weights, met_x, met_y, met })
}

/// Graph construction and aggregation settings for one inference run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub delta: f64,
    pub wrap_phi: bool,
    pub mode: Aggregation,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions { delta: 0.4, wrap_phi: false, mode: Aggregation::Max }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    /// After stage 1, after EdgeConv layer 1, after EdgeConv layer 2.
    pub embeddings: Vec<NodeEmbeddingMatrix>,
    pub weights: Vec<f32>,
    pub met_x: f64,
    pub met_y: f64,
    pub met: f64,
    pub directed_edges: usize,
}

pub fn run_reference(event: &Event, w: &ModelWeights, opts: &InferenceOptions) -> Result<InferenceResult, ModelError> {
    if event.is_empty() {
        return Err(ModelError::Input(format!("event {} has no particles", event.event_id)));
    }
    let graph = build_graph(event, opts.delta, opts.wrap_phi)?;
    run_reference_on_graph(event, &graph, w, opts.mode)
}

pub fn run_reference_on_graph(
    event: &Event,
    graph: &DynamicGraph,
    w: &ModelWeights,
    mode: Aggregation,
) -> Result<InferenceResult, ModelError> {
    let x0 = embed_nodes(event, w)?;
    let x1 = edgeconv_layer(&x0, graph, &w.conv[0], mode)?;
    let x2 = edgeconv_layer(&x1, graph, &w.conv[1], mode)?;
    let r = readout(&x2, event, w)?;
    Ok(InferenceResult {
        embeddings: vec![x0, x1, x2],
        weights: r.weights,
        met_x: r.met_x,
        met_y: r.met_y,
        met: r.met,
        directed_edges: graph.num_edges(),
    })
}
