//! Processing elements of one simulated GNN layer.

use std::collections::VecDeque;

use super::buffers::{BankedBufferPair, IntermediateBuffer};
use super::fifo::BoundedFifo;
use crate::model::{aggregate, edge_message, node_update, Aggregation, EdgeConvWeights, ModelError};

/// Edge message tagged with its endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub source: usize,
    pub target: usize,
    pub values: Vec<f32>,
}

/// NT unit that owns target node `v`.
pub fn adapter_route(target: usize, p_node: usize) -> usize {
    target % p_node
}

/// Per-cycle outcome of a unit step.
#[derive(Debug, Clone, Copy, Default)]
pub struct Step {
    pub progress: bool,
    pub blocked: bool,
}

impl Step {
    fn moved() -> Self {
        Step { progress: true, blocked: false }
    }

    fn blocked() -> Self {
        Step { progress: false, blocked: true }
    }

    fn idle() -> Self {
        Step::default()
    }
}

/// Streams every row of the intermediate buffer, one per cycle and in
/// ascending node order, to all MP units at once. Stalls while any unit's
/// broadcast FIFO is full.
#[derive(Debug)]
pub struct Broadcaster {
    next: usize,
    n: usize,
    pub emitted: usize,
    pub stalls: u64,
}

impl Broadcaster {
    pub fn new(n: usize) -> Self {
        Broadcaster { next: 0, n, emitted: 0, stalls: 0 }
    }

    pub fn done(&self) -> bool {
        self.next == self.n
    }

    pub fn step(&mut self, units: &mut [MpUnit<'_>]) -> Step {
        if self.done() {
            return Step::idle();
        }
        if units.iter().all(|u| u.broadcast_in.has_space()) {
            for u in units.iter_mut() {
                u.broadcast_in.push(self.next);
            }
            self.next += 1;
            self.emitted += 1;
            Step::moved()
        } else {
            self.stalls += 1;
            Step::blocked()
        }
    }
}

/// Message-passing unit. Owns the edges whose source lies in its bank,
/// captures the broadcast target rows it needs and runs the message
/// function as a pipeline with initiation interval 1.
#[derive(Debug)]
pub struct MpUnit<'a> {
    pub id: usize,
    /// Assigned sources per target node, ascending.
    sources_for: &'a [Vec<usize>],
    captured: VecDeque<(usize, Vec<f32>)>,
    cursor: usize,
    capture_capacity: usize,
    pipeline: VecDeque<(u64, Message)>,
    latency: u64,
    pub broadcast_in: BoundedFifo<usize>,
    pub out: BoundedFifo<Message>,
    pub captured_log: Vec<usize>,
    pub produced: usize,
    pub stalls: u64,
}

impl<'a> MpUnit<'a> {
    pub fn new(id: usize, sources_for: &'a [Vec<usize>], fifo_depth: usize, latency: u64) -> Self {
        MpUnit {
            id,
            sources_for,
            captured: VecDeque::new(),
            cursor: 0,
            capture_capacity: fifo_depth,
            pipeline: VecDeque::with_capacity(latency as usize),
            latency,
            broadcast_in: BoundedFifo::new(fifo_depth),
            out: BoundedFifo::new(fifo_depth),
            captured_log: Vec::new(),
            produced: 0,
            stalls: 0,
        }
    }

    /// Oldest pipeline result into the adapter-facing FIFO.
    pub fn retire(&mut self, cycle: u64) -> Step {
        match self.pipeline.front() {
            Some(&(ready, _)) if ready <= cycle => {
                if self.out.has_space() {
                    let (_, msg) = self.pipeline.pop_front().unwrap();
                    self.out.push(msg);
                    self.produced += 1;
                    Step::moved()
                } else {
                    Step::blocked()
                }
            }
            _ => Step::idle(),
        }
    }

    /// Starts the next pending edge of the oldest captured target.
    pub fn issue(
        &mut self,
        cycle: u64,
        buffers: &BankedBufferPair,
        layer: &EdgeConvWeights,
    ) -> Result<Step, ModelError> {
        let Some((v, x_v)) = self.captured.front() else { return Ok(Step::idle()) };
        if self.pipeline.len() as u64 >= self.latency {
            return Ok(Step::blocked());
        }
        let v = *v;
        let sources = &self.sources_for[v];
        let u = sources[self.cursor];
        let x_u = buffers.read_bank(self.id, u);
        let values = edge_message(x_u, x_v, &layer.phi)?;
        self.pipeline.push_back((cycle + self.latency, Message { source: u, target: v, values }));
        self.cursor += 1;
        if self.cursor == sources.len() {
            self.captured.pop_front();
            self.cursor = 0;
        }
        Ok(Step::moved())
    }

    /// Pops one broadcast row, keeping it only if an assigned edge
    /// targets it.
    pub fn capture(&mut self, intermediate: &IntermediateBuffer) -> Step {
        let Some(&v) = self.broadcast_in.front() else { return Step::idle() };
        if self.sources_for[v].is_empty() {
            self.broadcast_in.pop();
            return Step::moved();
        }
        if self.captured.len() >= self.capture_capacity {
            return Step::blocked();
        }
        self.broadcast_in.pop();
        self.captured.push_back((v, intermediate.row(v).to_vec()));
        self.captured_log.push(v);
        Step::moved()
    }

    /// True while a pipeline entry is still maturing.
    pub fn in_flight(&self, cycle: u64) -> bool {
        self.pipeline.front().is_some_and(|&(ready, _)| ready > cycle)
    }

    pub fn is_drained(&self) -> bool {
        self.captured.is_empty() && self.pipeline.is_empty() && self.out.is_empty() && self.broadcast_in.is_empty()
    }

    pub fn describe(&self) -> String {
        format!(
            "mp[{}]: broadcast_in={} captured={} pipeline={} out={}",
            self.id,
            self.broadcast_in.len(),
            self.captured.len(),
            self.pipeline.len(),
            self.out.len()
        )
    }
}

/// Crossbar between MP and NT units. Each NT input takes its messages in
/// ascending (target, source) order, at most one per cycle; each MP FIFO
/// moves at most one message per cycle. The fixed delivery order keeps the
/// schedule independent of arbitration timing.
#[derive(Debug)]
pub struct Adapter {
    /// Per NT unit, the (source, target) sequence it receives.
    order: Vec<Vec<(usize, usize)>>,
    cursor: Vec<usize>,
    moved: Vec<bool>,
}

impl Adapter {
    /// `in_sources[v]` lists the sources of `v`'s in-edges, ascending.
    pub fn new(in_sources: &[Vec<usize>], p_edge: usize, p_node: usize) -> Self {
        let mut order = vec![Vec::new(); p_node];
        for (v, sources) in in_sources.iter().enumerate() {
            order[adapter_route(v, p_node)].extend(sources.iter().map(|&u| (u, v)));
        }
        Adapter { order, cursor: vec![0; p_node], moved: vec![false; p_edge] }
    }

    pub fn step(&mut self, mps: &mut [MpUnit<'_>], nts: &mut [NtUnit], refuse: Option<usize>) -> Step {
        let p_edge = mps.len();
        self.moved.iter_mut().for_each(|m| *m = false);
        let mut step = Step::idle();
        for (dest, nt) in nts.iter_mut().enumerate() {
            let Some(&(u, v)) = self.order[dest].get(self.cursor[dest]) else { continue };
            let k = u % p_edge;
            let at_head = mps[k].out.front().is_some_and(|m| m.source == u && m.target == v);
            if !at_head || self.moved[k] {
                continue;
            }
            if !nt.input.has_space() || refuse == Some(dest) {
                step.blocked = true;
                continue;
            }
            let msg = mps[k].out.pop().unwrap();
            nt.input.push(msg);
            self.moved[k] = true;
            self.cursor[dest] += 1;
            step.progress = true;
        }
        step
    }
}

/// Node-transformation unit owning the nodes `v` with
/// `v mod p_node == id`. Collects each owned node's messages and, in
/// ascending node order, folds them in ascending source order, applies
/// batch norm and the residual, and writes the row to the output buffer.
#[derive(Debug)]
pub struct NtUnit {
    pub id: usize,
    expected: Vec<usize>,
    received: Vec<Vec<(usize, Vec<f32>)>>,
    next: usize,
    p_node: usize,
    pub input: BoundedFifo<Message>,
    pub written: usize,
    pub delivered: usize,
    pub stalls: u64,
}

impl NtUnit {
    /// `in_degree[v]` is the number of messages node `v` will receive.
    pub fn new(id: usize, p_node: usize, in_degree: &[usize], fifo_depth: usize) -> Self {
        let n = in_degree.len();
        NtUnit {
            id,
            expected: in_degree.to_vec(),
            received: vec![Vec::new(); n],
            next: id,
            p_node,
            input: BoundedFifo::new(fifo_depth),
            written: 0,
            delivered: 0,
            stalls: 0,
        }
    }

    pub fn done(&self) -> bool {
        self.next >= self.expected.len()
    }

    pub fn accept(&mut self) -> Step {
        let Some(msg) = self.input.pop() else { return Step::idle() };
        let v = msg.target;
        let slot = &mut self.received[v];
        slot.push((msg.source, msg.values));
        assert!(
            slot.len() <= self.expected[v],
            "nt[{}]: node {v} received {} messages, in-degree is {}",
            self.id,
            slot.len(),
            self.expected[v]
        );
        self.delivered += 1;
        Step::moved()
    }

    /// Writes the next owned row once all its messages are in. Each bank
    /// takes its rows in ascending node order, one per cycle; `bank_next`
    /// holds the next row each bank expects.
    pub fn write(
        &mut self,
        bank_busy: &mut [bool],
        bank_next: &mut [usize],
        buffers: &mut BankedBufferPair,
        layer: &EdgeConvWeights,
        mode: Aggregation,
    ) -> Step {
        if self.done() {
            return Step::idle();
        }
        let v = self.next;
        if self.received[v].len() < self.expected[v] {
            return Step::idle();
        }
        let bank = buffers.bank_of(v);
        if bank_busy[bank] || bank_next[bank] != v {
            self.stalls += 1;
            return Step::blocked();
        }
        let mut messages = std::mem::take(&mut self.received[v]);
        messages.sort_by_key(|&(u, _)| u);
        let (input, output) = buffers.split();
        let agg = aggregate(messages.iter().map(|(_, m)| m.as_slice()), input.d(), mode);
        let row = node_update(&agg, input.row(v), &layer.bn);
        output.row_mut(v).copy_from_slice(&row);
        bank_busy[bank] = true;
        bank_next[bank] += buffers.banks();
        self.next += self.p_node;
        self.written += 1;
        Step::moved()
    }

    pub fn describe(&self) -> String {
        let partial = self.received.iter().filter(|r| !r.is_empty()).count();
        format!(
            "nt[{}]: input={} next_row={} partial_nodes={} written={}",
            self.id,
            self.input.len(),
            self.next,
            partial,
            self.written
        )
    }
}
