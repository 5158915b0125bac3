//! Cycle-level model of the streaming EdgeConv dataflow.
//!
//! Per layer: the input node-embedding buffer is copied once into an
//! intermediate buffer that is broadcast row by row to `p_edge` MP units.
//! Each MP unit keeps the rows its edges target, reads the matching source
//! rows from its own bank and streams messages through the adapter to
//! `p_node` NT units, which aggregate, normalize, add the residual and
//! write the output buffer. The buffers are then swapped.
//!
//! Cycle model:
//! - broadcast emits one row per cycle to every MP unit;
//! - every FIFO push and pop takes one cycle, each unit pops at most one
//!   item per cycle from each input;
//! - the message MLP is a pipeline with initiation interval 1 and
//!   `mlp_latency_cycles` latency;
//! - an NT unit accepts one message per cycle and writes one row per cycle,
//!   and each output bank takes one row write per cycle;
//! - embedding and readout are charged as `stage1_cycles` and
//!   `readout_cycles`;
//! - host transfer costs `bytes * host_transfer_cycles_per_byte`.
//!
//! Values are computed with the same functions and in the same order as
//! [`crate::model`], so outputs match the reference bit for bit for every
//! aggregation mode and every legal `(p_edge, p_node)`.

mod buffers;
mod fifo;
mod layer;
mod units;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use buffers::{BankedBufferPair, IntermediateBuffer};
pub use fifo::BoundedFifo;
pub use layer::SWAP_CYCLES;
pub use units::{adapter_route, Message};

use crate::event::{Event, PARTICLE_RECORD_BYTES};
use crate::graph::{build_graph, partition_edges, DynamicGraph, GraphError};
use crate::model::{embed_nodes, readout, InferenceOptions, InferenceResult, ModelError, ModelWeights};
use layer::{simulate_layer, Faults, UnitPlan};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error("deadlock in layer {layer} at cycle {cycle}; blocked: {}", blocked.join("; "))]
    Deadlock { layer: usize, cycle: u64, blocked: Vec<String> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rational {
    pub num: u64,
    pub den: u64,
}

impl Rational {
    pub const ZERO: Rational = Rational { num: 0, den: 1 };

    /// `ceil(x * num / den)`.
    pub fn scale_ceil(self, x: u64) -> u64 {
        let p = x as u128 * self.num as u128;
        p.div_ceil(self.den as u128) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub p_edge: usize,
    pub p_node: usize,
    pub fifo_depth: usize,
    pub mlp_latency_cycles: u64,
    pub clock_hz: u64,
    pub host_transfer_cycles_per_byte: Rational,
    pub stage1_cycles: u64,
    pub readout_cycles: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            p_edge: 4,
            p_node: 4,
            fifo_depth: 16,
            mlp_latency_cycles: 8,
            clock_hz: 200_000_000,
            host_transfer_cycles_per_byte: Rational::ZERO,
            stage1_cycles: 32,
            readout_cycles: 32,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("p_edge", self.p_edge as u64),
            ("p_node", self.p_node as u64),
            ("fifo_depth", self.fifo_depth as u64),
            ("mlp_latency_cycles", self.mlp_latency_cycles),
            ("clock_hz", self.clock_hz),
            ("host_transfer_cycles_per_byte.den", self.host_transfer_cycles_per_byte.den),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(SimError::Config(format!("{name} must be at least 1")));
        }
        if self.p_node > self.p_edge {
            return Err(SimError::Config(format!("p_node ({}) must not exceed p_edge ({})", self.p_node, self.p_edge)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub layer: usize,
    pub cycles: u64,
    pub embeddings_broadcast: usize,
    pub messages_produced: usize,
    pub messages_delivered: usize,
    pub ne_duplications: usize,
    pub broadcast_stall: u64,
    pub broadcast_fifo_highwater: Vec<usize>,
    pub mp_out_fifo_highwater: Vec<usize>,
    pub nt_in_fifo_highwater: Vec<usize>,
    pub mp_stall: Vec<u64>,
    pub nt_stall: Vec<u64>,
}

impl LayerTrace {
    pub fn max_fifo_highwater(&self) -> usize {
        self.broadcast_fifo_highwater
            .iter()
            .chain(&self.mp_out_fifo_highwater)
            .chain(&self.nt_in_fifo_highwater)
            .copied()
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTrace {
    pub event_id: u32,
    pub num_nodes: usize,
    pub directed_edges: usize,
    /// Device cycles: embedding, both layers, readout.
    pub total_cycles: u64,
    pub transfer_cycles: u64,
    pub stage1_cycles: u64,
    pub readout_cycles: u64,
    pub layers: Vec<LayerTrace>,
}

impl SimTrace {
    /// Modeled end-to-end latency: device cycles plus host transfer at the
    /// configured clock.
    pub fn latency_seconds(&self, clock_hz: u64) -> f64 {
        (self.total_cycles + self.transfer_cycles) as f64 / clock_hz as f64
    }

    fn write_records(&self, out: &mut String) {
        writeln!(
            out,
            "event id={} nodes={} edges={} total_cycles={} transfer_cycles={} stage1_cycles={} readout_cycles={}",
            self.event_id,
            self.num_nodes,
            self.directed_edges,
            self.total_cycles,
            self.transfer_cycles,
            self.stage1_cycles,
            self.readout_cycles
        )
        .unwrap();
        for l in &self.layers {
            writeln!(
                out,
                "layer index={} cycles={} broadcast={} produced={} delivered={} duplications={} broadcast_stall={}",
                l.layer,
                l.cycles,
                l.embeddings_broadcast,
                l.messages_produced,
                l.messages_delivered,
                l.ne_duplications,
                l.broadcast_stall
            )
            .unwrap();
            writeln!(
                out,
                "fifo_highwater layer={} broadcast={} mp_out={} nt_in={}",
                l.layer,
                join(&l.broadcast_fifo_highwater),
                join(&l.mp_out_fifo_highwater),
                join(&l.nt_in_fifo_highwater)
            )
            .unwrap();
            writeln!(out, "stall layer={} mp={} nt={}", l.layer, join(&l.mp_stall), join(&l.nt_stall)).unwrap();
        }
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Structured text dump of a sequence of traces.
pub fn trace_dump(traces: &[SimTrace]) -> String {
    let mut out = format!("dgnnflow-trace schema={TRACE_SCHEMA_VERSION}\n");
    for t in traces {
        t.write_records(&mut out);
    }
    out
}

/// Bytes moved between host and device for one graph: particle records and
/// the edge list in, per-particle weights and the MET out.
pub fn host_transfer_bytes(num_nodes: usize, directed_edges: usize) -> u64 {
    (num_nodes * PARTICLE_RECORD_BYTES + directed_edges * 8 + num_nodes * 4 + 8) as u64
}

/// Lower bound on a layer's cycles: every row is broadcast, one per cycle,
/// and a message into the last target with in-edges cannot leave the
/// pipeline before that row has been broadcast and the latency has passed.
pub fn layer_cycle_lower_bound(graph: &DynamicGraph, cfg: &SimConfig) -> u64 {
    let last_target = graph.edges().map(|(_, v)| v).max();
    let message_path = last_target.map_or(0, |v| v as u64 + 1 + cfg.mlp_latency_cycles);
    (graph.num_nodes() as u64).max(message_path) + SWAP_CYCLES
}

/// Runs the full pipeline through the simulated dataflow.
pub fn run_dataflow(
    event: &Event,
    weights: &ModelWeights,
    opts: &InferenceOptions,
    cfg: &SimConfig,
) -> Result<(InferenceResult, SimTrace), SimError> {
    cfg.validate()?;
    if event.is_empty() {
        return Err(ModelError::Input(format!("event {} has no particles", event.event_id)).into());
    }
    let graph = build_graph(event, opts.delta, opts.wrap_phi)?;
    run_dataflow_on_graph(event, &graph, weights, opts, cfg, Faults::default())
}

fn run_dataflow_on_graph(
    event: &Event,
    graph: &DynamicGraph,
    weights: &ModelWeights,
    opts: &InferenceOptions,
    cfg: &SimConfig,
    faults: Faults,
) -> Result<(InferenceResult, SimTrace), SimError> {
    let partition = partition_edges(graph, cfg.p_edge)?;
    let plan = UnitPlan::new(graph, &partition);

    let x0 = embed_nodes(event, weights)?;
    let mut buffers = BankedBufferPair::new(x0.clone(), cfg.p_edge);
    let mut embeddings = vec![x0];
    let mut layers = Vec::with_capacity(weights.conv.len());
    for (i, conv) in weights.conv.iter().enumerate() {
        let outcome = simulate_layer(i + 1, &plan, &mut buffers, conv, opts.mode, cfg, faults)?;
        buffers.swap();
        embeddings.push(buffers.input().clone());
        layers.push(outcome.trace);
    }
    let r = readout(buffers.input(), event, weights)?;

    let total_cycles = cfg.stage1_cycles + layers.iter().map(|l| l.cycles).sum::<u64>() + cfg.readout_cycles;
    let transfer_cycles =
        cfg.host_transfer_cycles_per_byte.scale_ceil(host_transfer_bytes(graph.num_nodes(), graph.num_edges()));
    let trace = SimTrace {
        event_id: event.event_id,
        num_nodes: graph.num_nodes(),
        directed_edges: graph.num_edges(),
        total_cycles,
        transfer_cycles,
        stage1_cycles: cfg.stage1_cycles,
        readout_cycles: cfg.readout_cycles,
        layers,
    };
    let result = InferenceResult {
        embeddings,
        weights: r.weights,
        met_x: r.met_x,
        met_y: r.met_y,
        met: r.met,
        directed_edges: graph.num_edges(),
    };
    Ok((result, trace))
}
