mod common;

use std::collections::BTreeSet;

use common::{events, oracle};
use dgnnflow::event::{generate_events, Event, GeneratorConfig, Particle};
use dgnnflow::graph::{build_graph, node_degrees, partition_edges, DynamicGraph};
use proptest::prelude::*;

fn edge_set(g: &DynamicGraph) -> BTreeSet<(usize, usize)> {
    g.edges().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matches_brute_force(ev in events(64), delta in prop_oneof![Just(0.1), Just(0.4), Just(1.0), 0.05f64..3.0], wrap in any::<bool>()) {
        let g = build_graph(&ev, delta, wrap).unwrap();
        prop_assert_eq!(edge_set(&g), oracle::brute_edges(&ev, delta, wrap));
    }

    #[test]
    fn csr_invariants_hold(ev in events(64), delta in 0.05f64..3.0, wrap in any::<bool>()) {
        let g = build_graph(&ev, delta, wrap).unwrap();
        prop_assert!(g.validate().is_ok());
        let off = g.csr_offsets();
        prop_assert_eq!(off.len(), ev.len() + 1);
        prop_assert_eq!(off[0], 0);
        prop_assert_eq!(off[ev.len()], g.csr_targets().len());
        prop_assert!(off.windows(2).all(|w| w[0] <= w[1]));
        let es = edge_set(&g);
        for u in 0..ev.len() {
            let nb = g.neighbors(u);
            prop_assert!(nb.windows(2).all(|w| w[0] < w[1]), "targets ascending");
            for &v in nb {
                prop_assert!(v < ev.len());
                prop_assert_ne!(u, v);
                prop_assert!(es.contains(&(v, u)), "symmetric");
            }
        }
    }

    #[test]
    fn partition_is_a_permutation_by_source_modulo(ev in events(48), delta in 0.2f64..2.0, p_edge in 1usize..=9) {
        let g = build_graph(&ev, delta, false).unwrap();
        let part = partition_edges(&g, p_edge).unwrap();
        prop_assert_eq!(part.edges_of_unit.len(), p_edge);
        let edges: Vec<(usize, usize)> = g.edges().collect();
        let mut seen: Vec<usize> = part.edges_of_unit.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..edges.len()).collect::<Vec<_>>());
        for (k, list) in part.edges_of_unit.iter().enumerate() {
            prop_assert!(list.windows(2).all(|w| w[0] < w[1]));
            for &e in list {
                prop_assert_eq!(part.unit_of_edge[e], k);
                prop_assert_eq!(edges[e].0 % p_edge, k);
            }
        }
    }

    #[test]
    fn degrees_match_recount(ev in events(64), delta in 0.05f64..3.0) {
        let g = build_graph(&ev, delta, false).unwrap();
        let deg = node_degrees(&g);
        let brute = oracle::brute_edges(&ev, delta, false);
        for (v, &d) in deg.iter().enumerate() {
            prop_assert_eq!(d, brute.iter().filter(|&&(u, _)| u == v).count());
        }
        prop_assert_eq!(deg.iter().sum::<usize>(), g.csr_targets().len());
    }

    #[test]
    fn relabeling_permutes_edges(ev in events(40), delta in 0.2f64..2.0, rot in 0usize..40) {
        let n = ev.len();
        let shift = rot % n;
        // New index i holds old particle (i + shift) mod n.
        let permuted = Event {
            event_id: ev.event_id,
            particles: (0..n).map(|i| ev.particles[(i + shift) % n]).collect(),
        };
        let old = edge_set(&build_graph(&ev, delta, true).unwrap());
        let new = edge_set(&build_graph(&permuted, delta, true).unwrap());
        let back: BTreeSet<(usize, usize)> = new.iter().map(|&(u, v)| ((u + shift) % n, (v + shift) % n)).collect();
        prop_assert_eq!(back, old);
        prop_assert_eq!(build_graph(&ev, delta, true).unwrap(), build_graph(&ev, delta, true).unwrap());
    }
}

#[test]
fn generated_events_match_brute_force() {
    let cfg = GeneratorConfig { max_particles: 64, eta_max: 1.5, ..Default::default() };
    for ev in generate_events(11, 300, &cfg).unwrap() {
        for wrap in [false, true] {
            let g = build_graph(&ev, 0.4, wrap).unwrap();
            assert_eq!(edge_set(&g), oracle::brute_edges(&ev, 0.4, wrap), "event {}", ev.event_id);
        }
    }
}

#[test]
fn triangle_degrees() {
    let p = |eta: f32| Particle::from_kinematics(1.0, eta, 0.0, [0, 0]);
    let ev = Event { event_id: 0, particles: vec![p(0.0), p(0.1), p(0.2)] };
    let g = build_graph(&ev, 0.5, false).unwrap();
    assert_eq!(node_degrees(&g), vec![2, 2, 2]);
    let far = Event { event_id: 1, particles: vec![p(0.0), p(2.0), p(4.0)] };
    assert_eq!(node_degrees(&build_graph(&far, 0.5, false).unwrap()), vec![0, 0, 0]);
}

#[test]
fn seam_pairs_only_connect_when_wrapped() {
    let a = Particle::from_kinematics(1.0, 0.0, 3.1, [0, 0]);
    let b = Particle::from_kinematics(1.0, 0.0, -3.1, [0, 0]);
    let ev = Event { event_id: 0, particles: vec![a, b] };
    assert_eq!(build_graph(&ev, 0.4, false).unwrap().num_edges(), 0);
    assert_eq!(edge_set(&build_graph(&ev, 0.4, true).unwrap()), BTreeSet::from([(0, 1), (1, 0)]));
}
