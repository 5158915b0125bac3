//! Cycle loop for one EdgeConv layer.
//!
//! Within a cycle the stages are evaluated from the sink back to the
//! source (NT write, NT accept, adapter, MP retire/issue/capture,
//! broadcast), so an item advances at most one stage per cycle and a slot
//! freed downstream is usable upstream in the same cycle.

use super::buffers::{BankedBufferPair, IntermediateBuffer};
use super::units::{Adapter, Broadcaster, MpUnit, NtUnit};
use super::{LayerTrace, SimConfig, SimError};
use crate::graph::{DynamicGraph, EdgePartition};
use crate::model::{Aggregation, EdgeConvWeights};

/// Cycles charged for swapping the input and output buffers.
pub const SWAP_CYCLES: u64 = 1;

/// Per-event wiring shared by both layers: which sources each MP unit
/// handles for each target, and every node's in-edge sources.
#[derive(Debug, Clone)]
pub struct UnitPlan {
    pub sources_for: Vec<Vec<Vec<usize>>>,
    pub in_sources: Vec<Vec<usize>>,
    pub in_degree: Vec<usize>,
    pub directed_edges: usize,
}

impl UnitPlan {
    pub fn new(graph: &DynamicGraph, partition: &EdgePartition) -> Self {
        let n = graph.num_nodes();
        let mut sources_for = vec![vec![Vec::new(); n]; partition.p_edge];
        let mut in_sources = vec![Vec::new(); n];
        // CSR order visits sources ascending, so each list comes out sorted.
        for (index, (u, v)) in graph.edges().enumerate() {
            sources_for[partition.unit_of_edge[index]][v].push(u);
            in_sources[v].push(u);
        }
        let in_degree = in_sources.iter().map(Vec::len).collect();
        UnitPlan { sources_for, in_sources, in_degree, directed_edges: graph.num_edges() }
    }
}

/// Test hook: an NT unit that never accepts messages.
#[derive(Debug, Default, Clone, Copy)]
pub struct Faults {
    pub refuse_nt: Option<usize>,
}

#[derive(Debug)]
pub struct LayerOutcome {
    pub trace: LayerTrace,
    /// Rows captured by each MP unit, in capture order.
    #[cfg_attr(not(test), allow(dead_code))]
    pub captured: Vec<Vec<usize>>,
}

/// Runs one layer from `buffers.input()` into the output buffer. The
/// caller swaps the buffers afterwards.
pub fn simulate_layer(
    index: usize,
    plan: &UnitPlan,
    buffers: &mut BankedBufferPair,
    layer: &EdgeConvWeights,
    mode: Aggregation,
    cfg: &SimConfig,
    faults: Faults,
) -> Result<LayerOutcome, SimError> {
    let n = buffers.input().n();
    let mut duplications = 0;
    let intermediate = IntermediateBuffer::snapshot(buffers.input(), &mut duplications);
    debug_assert_eq!(intermediate.len(), n);

    let mut broadcaster = Broadcaster::new(n);
    let mut mps: Vec<MpUnit<'_>> = plan
        .sources_for
        .iter()
        .enumerate()
        .map(|(k, s)| MpUnit::new(k, s, cfg.fifo_depth, cfg.mlp_latency_cycles))
        .collect();
    let mut nts: Vec<NtUnit> =
        (0..cfg.p_node).map(|j| NtUnit::new(j, cfg.p_node, &plan.in_degree, cfg.fifo_depth)).collect();
    let mut adapter = Adapter::new(&plan.in_sources, cfg.p_edge, cfg.p_node);
    let mut bank_busy = vec![false; cfg.p_edge];
    let mut bank_next: Vec<usize> = (0..cfg.p_edge).collect();

    let mut cycle: u64 = 0;
    let elapsed = loop {
        let mut progress = false;

        bank_busy.iter_mut().for_each(|b| *b = false);
        for nt in nts.iter_mut() {
            progress |= nt.write(&mut bank_busy, &mut bank_next, buffers, layer, mode).progress;
        }
        for nt in nts.iter_mut() {
            if faults.refuse_nt != Some(nt.id) {
                progress |= nt.accept().progress;
            }
        }
        progress |= adapter.step(&mut mps, &mut nts, faults.refuse_nt).progress;
        for mp in mps.iter_mut() {
            let retire = mp.retire(cycle);
            let issue = mp.issue(cycle, buffers, layer)?;
            let capture = mp.capture(&intermediate);
            progress |= retire.progress || issue.progress || capture.progress || mp.in_flight(cycle);
            if retire.blocked || issue.blocked || capture.blocked {
                mp.stalls += 1;
            }
        }
        progress |= broadcaster.step(&mut mps).progress;

        if broadcaster.done() && mps.iter().all(MpUnit::is_drained) && nts.iter().all(NtUnit::done) {
            break cycle + 1;
        }
        if !progress {
            let mut blocked: Vec<String> = mps.iter().filter(|m| !m.is_drained()).map(MpUnit::describe).collect();
            blocked.extend(nts.iter().filter(|t| !t.done()).map(NtUnit::describe));
            if !broadcaster.done() {
                blocked.push(format!("broadcast: {} of {n} rows emitted", broadcaster.emitted));
            }
            return Err(SimError::Deadlock { layer: index, cycle, blocked });
        }
        cycle += 1;
    };

    let produced: usize = mps.iter().map(|m| m.produced).sum();
    let delivered: usize = nts.iter().map(|t| t.delivered).sum();
    assert_eq!(produced, plan.directed_edges, "layer {index}: produced {produced} messages");
    assert_eq!(delivered, plan.directed_edges, "layer {index}: delivered {delivered} messages");

    let trace = LayerTrace {
        layer: index,
        cycles: elapsed + SWAP_CYCLES,
        embeddings_broadcast: broadcaster.emitted,
        messages_produced: produced,
        messages_delivered: delivered,
        ne_duplications: duplications,
        broadcast_stall: broadcaster.stalls,
        broadcast_fifo_highwater: mps.iter().map(|m| m.broadcast_in.highwater()).collect(),
        mp_out_fifo_highwater: mps.iter().map(|m| m.out.highwater()).collect(),
        nt_in_fifo_highwater: nts.iter().map(|t| t.input.highwater()).collect(),
        mp_stall: mps.iter().map(|m| m.stalls).collect(),
        nt_stall: nts.iter().map(|t| t.stalls).collect(),
    };
    let captured = mps.into_iter().map(|m| m.captured_log).collect();
    Ok(LayerOutcome { trace, captured })
}
