//! Per-event proximity graphs in CSR form.
//!
//! Two particles are connected when their squared angular distance
//! `deta^2 + dphi^2` is strictly below `delta^2`. Each undirected edge is
//! stored as two directed edges; self-loops are never created.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use thiserror::Error;

use crate::event::{Event, Particle};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("invalid graph config: {0}")]
    Config(String),
    #[error("invalid graph structure: {0}")]
    Structure(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGraph {
    num_nodes: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    delta: f64,
}

/// Azimuthal difference, optionally wrapped into (-pi, pi].
pub fn delta_phi(phi_u: f32, phi_v: f32, wrap_phi: bool) -> f64 {
    let mut d = phi_u as f64 - phi_v as f64;
    if wrap_phi {
        if d > PI {
            d -= 2.0 * PI;
        } else if d <= -PI {
            d += 2.0 * PI;
        }
    }
    d
}

/// Squared angular distance between two particles, in double precision.
pub fn delta_r2(a: &Particle, b: &Particle, wrap_phi: bool) -> f64 {
    let deta = a.eta() as f64 - b.eta() as f64;
    let dphi = delta_phi(a.phi(), b.phi(), wrap_phi);
    deta * deta + dphi * dphi
}

impl DynamicGraph {
    /// Builds a CSR graph from directed edges. Edges may arrive in any
    /// order; duplicates, self-loops and out-of-range indices are rejected.
    /// Symmetry is not required here, see [`DynamicGraph::validate`].
    pub fn from_directed_edges(num_nodes: usize, edges: &[(usize, usize)], delta: f64) -> Result<Self, GraphError> {
        let mut sorted = edges.to_vec();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(GraphError::Structure(format!("duplicate edge {:?}", w[0])));
            }
        }
        let mut offsets = vec![0usize; num_nodes + 1];
        for &(u, v) in &sorted {
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::Structure(format!("edge ({u}, {v}) out of range for {num_nodes} nodes")));
            }
            if u == v {
                return Err(GraphError::Structure(format!("self-loop on node {u}")));
            }
            offsets[u + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let targets = sorted.into_iter().map(|(_, v)| v).collect();
        Ok(DynamicGraph { num_nodes, offsets, targets, delta })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of directed edges.
    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn csr_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn csr_targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.targets[self.offsets[u]..self.offsets[u + 1]]
    }

    /// Directed edges `(u, v)` in CSR order; the position in this iterator
    /// is the edge index.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |u| self.neighbors(u).iter().map(move |&v| (u, v)))
    }

    pub fn edge(&self, index: usize) -> (usize, usize) {
        let u = self.offsets.partition_point(|&o| o <= index) - 1;
        (u, self.targets[index])
    }

    /// Incoming edges grouped by target, sources ascending within each
    /// target.
    pub fn in_edges(&self) -> InEdges {
        let mut offsets = vec![0usize; self.num_nodes + 1];
        for &v in &self.targets {
            offsets[v + 1] += 1;
        }
        for i in 0..self.num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut entries = vec![(0usize, 0usize); self.targets.len()];
        // Sources are visited in ascending order, so each bucket ends up sorted.
        for (index, (u, v)) in self.edges().enumerate() {
            entries[fill[v]] = (u, index);
            fill[v] += 1;
        }
        InEdges { offsets, entries }
    }

    /// Checks every CSR invariant, including edge symmetry.
    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |s: String| Err(GraphError::Structure(s));
        if self.offsets.len() != self.num_nodes + 1 || self.offsets[0] != 0 {
            return bad("offsets must have num_nodes + 1 entries starting at 0".into());
        }
        if self.offsets[self.num_nodes] != self.targets.len() {
            return bad("last offset must equal the edge count".into());
        }
        if self.offsets.windows(2).any(|w| w[0] > w[1]) {
            return bad("offsets must be non-decreasing".into());
        }
        for u in 0..self.num_nodes {
            let row = self.neighbors(u);
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("targets of node {u} not strictly ascending"));
            }
            for &v in row {
                if v >= self.num_nodes {
                    return bad(format!("target {v} out of range"));
                }
                if v == u {
                    return bad(format!("self-loop on node {u}"));
                }
                if self.neighbors(v).binary_search(&u).is_err() {
                    return bad(format!("edge ({u}, {v}) has no reverse"));
                }
            }
        }
        Ok(())
    }

    /// Text dump: a `nodes N edges E` header, then one `u v` line per
    /// directed edge in CSR order.
    pub fn to_dump(&self) -> String {
        let mut out = format!("nodes {} edges {}\n", self.num_nodes, self.num_edges());
        for (u, v) in self.edges() {
            writeln!(out, "{u} {v}").unwrap();
        }
        out
    }
}

/// Transposed adjacency: for each target node, its `(source, edge index)`
/// pairs in ascending source order.
#[derive(Debug, Clone)]
pub struct InEdges {
    offsets: Vec<usize>,
    entries: Vec<(usize, usize)>,
}

impl InEdges {
    pub fn of(&self, v: usize) -> &[(usize, usize)] {
        &self.entries[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }
}

/// Builds the proximity graph of an event.
///
/// Candidate pairs come from a uniform grid over `(eta, phi)` with cells at
/// least `delta` wide, so only the 3x3 neighbourhood of each cell is
/// tested. The exact predicate decides every edge.
pub fn build_graph(event: &Event, delta: f64, wrap_phi: bool) -> Result<DynamicGraph, GraphError> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(GraphError::Config(format!("delta must be positive and finite, got {delta}")));
    }
    let particles = &event.particles;
    let n = particles.len();
    let delta2 = delta * delta;

    // Slightly widened cell so rounding in the index computation can never
    // push a true neighbour two cells away.
    let cell = delta * (1.0 + 1e-9);
    let phi_cells = if wrap_phi { ((2.0 * PI) / cell).floor().max(1.0) as i64 } else { 0 };
    let phi_width = if wrap_phi { 2.0 * PI / phi_cells as f64 } else { cell };

    let key = |p: &Particle| -> (i64, i64) {
        let ie = (p.eta() as f64 / cell).floor() as i64;
        let ip = ((p.phi() as f64 + PI) / phi_width).floor() as i64;
        (ie, if wrap_phi { ip.rem_euclid(phi_cells) } else { ip })
    };

    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in particles.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }

    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    let mut targets = Vec::new();
    let mut phi_neighbours = Vec::with_capacity(3);
    for (u, pu) in particles.iter().enumerate() {
        let (ie, ip) = key(pu);
        phi_neighbours.clear();
        for d in -1..=1 {
            let c = if wrap_phi { (ip + d).rem_euclid(phi_cells) } else { ip + d };
            if !phi_neighbours.contains(&c) {
                phi_neighbours.push(c);
            }
        }
        let start = targets.len();
        for de in -1..=1 {
            for &cp in &phi_neighbours {
                let Some(bucket) = grid.get(&(ie.saturating_add(de), cp)) else { continue };
                for &v in bucket {
                    if v != u && delta_r2(pu, &particles[v], wrap_phi) < delta2 {
                        targets.push(v);
                    }
                }
            }
        }
        // Neighbour cells are distinct, so no target is found twice.
        targets[start..].sort_unstable();
        debug_assert!(targets[start..].windows(2).all(|w| w[0] < w[1]));
        offsets.push(targets.len());
    }
    Ok(DynamicGraph { num_nodes: n, offsets, targets, delta })
}

/// Out-degree of every node.
pub fn node_degrees(graph: &DynamicGraph) -> Vec<usize> {
    graph.offsets.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Assignment of directed edges to message-passing units. Edge `(u, v)`
/// goes to unit `u mod p_edge`, the unit that owns `u`'s embedding bank.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePartition {
    pub p_edge: usize,
    /// Unit index per directed edge index.
    pub unit_of_edge: Vec<usize>,
    /// Edge indices per unit, in CSR order.
    pub edges_of_unit: Vec<Vec<usize>>,
}

pub fn partition_edges(graph: &DynamicGraph, p_edge: usize) -> Result<EdgePartition, GraphError> {
    if p_edge == 0 {
        return Err(GraphError::Config("p_edge must be at least 1".into()));
    }
    let mut unit_of_edge = Vec::with_capacity(graph.num_edges());
    let mut edges_of_unit = vec![Vec::new(); p_edge];
    for (index, (u, _)) in graph.edges().enumerate() {
        let unit = u % p_edge;
        unit_of_edge.push(unit);
        edges_of_unit[unit].push(index);
    }
    Ok(EdgePartition { p_edge, unit_of_edge, edges_of_unit })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event_at(coords: &[(f32, f32)]) -> Event {
        Event {
            event_id: 0,
            particles: coords.iter().map(|&(eta, phi)| Particle::from_kinematics(1.0, eta, phi, [0, 0])).collect(),
        }
    }

    #[test]
    fn close_pair_connects() {
        let g = build_graph(&event_at(&[(0.0, 0.0), (0.0, 0.1)]), 0.5, false).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 0)]);
        g.validate().unwrap();
    }

    #[test]
    fn single_particle_has_no_edges() {
        let g = build_graph(&event_at(&[(1.0, 2.0)]), 10.0, true).unwrap();
        assert_eq!(g.num_edges(), 0);
        assert_eq!(g.csr_offsets(), &[0, 0]);
    }

    #[test]
    fn boundary_is_exclusive() {
        // deta = 0.5 exactly representable, delta = 0.5: not connected
        let g = build_graph(&event_at(&[(0.0, 0.0), (0.5, 0.0)]), 0.5, false).unwrap();
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn wrap_connects_across_seam() {
        let ev = event_at(&[(0.0, 3.1), (0.0, -3.1)]);
        assert_eq!(build_graph(&ev, 0.2, false).unwrap().num_edges(), 0);
        assert_eq!(build_graph(&ev, 0.2, true).unwrap().num_edges(), 2);
    }

    #[test]
    fn rejects_bad_delta() {
        let ev = event_at(&[(0.0, 0.0)]);
        assert!(build_graph(&ev, 0.0, false).is_err());
        assert!(build_graph(&ev, f64::NAN, false).is_err());
    }

    #[test]
    fn partition_by_source_modulo() {
        let g = DynamicGraph::from_directed_edges(3, &[(0, 1), (1, 0), (2, 1)], 1.0).unwrap();
        assert!(g.validate().is_err());
        let p = partition_edges(&g, 2).unwrap();
        let edges_of = |k: usize| p.edges_of_unit[k].iter().map(|&e| g.edge(e)).collect::<Vec<_>>();
        assert_eq!(edges_of(0), vec![(0, 1), (2, 1)]);
        assert_eq!(edges_of(1), vec![(1, 0)]);

        let single = partition_edges(&g, 1).unwrap();
        assert_eq!(single.edges_of_unit[0], vec![0, 1, 2]);
        assert_eq!(partition_edges(&g, 0), Err(GraphError::Config("p_edge must be at least 1".into())));
    }

    #[test]
    fn degrees() {
        let empty = DynamicGraph::from_directed_edges(4, &[], 1.0).unwrap();
        assert_eq!(node_degrees(&empty), vec![0; 4]);
        let tri = DynamicGraph::from_directed_edges(3, &[(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0)], 1.0).unwrap();
        tri.validate().unwrap();
        assert_eq!(node_degrees(&tri), vec![2, 2, 2]);
    }

    #[test]
    fn in_edges_sorted_by_source() {
        let g = DynamicGraph::from_directed_edges(4, &[(3, 0), (1, 0), (2, 0), (0, 3)], 1.0).unwrap();
        let inc = g.in_edges();
        let sources: Vec<usize> = inc.of(0).iter().map(|&(u, _)| u).collect();
        assert_eq!(sources, vec![1, 2, 3]);
        for &(u, e) in inc.of(0) {
            assert_eq!(g.edge(e), (u, 0));
        }
        assert_eq!(inc.degree(3), 1);
        assert_eq!(inc.degree(1), 0);
    }

    #[test]
    fn from_edges_rejects_bad_input() {
        assert!(DynamicGraph::from_directed_edges(2, &[(0, 0)], 1.0).is_err());
        assert!(DynamicGraph::from_directed_edges(2, &[(0, 2)], 1.0).is_err());
        assert!(DynamicGraph::from_directed_edges(2, &[(0, 1), (0, 1)], 1.0).is_err());
    }

    #[test]
    fn dump_format() {
        let g = build_graph(&event_at(&[(0.0, 0.0), (0.0, 0.1)]), 0.5, false).unwrap();
        assert_eq!(g.to_dump(), "nodes 2 edges 2\n0 1\n1 0\n");
    }
}
