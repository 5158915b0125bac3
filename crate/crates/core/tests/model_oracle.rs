mod common;

use std::collections::BTreeSet;

use common::{events, oracle};
use dgnnflow::event::{generate_events, Event, GeneratorConfig, Particle};
use dgnnflow::graph::{build_graph, DynamicGraph};
use dgnnflow::model::{
    aggregate, edge_message, edgeconv_layer, embed_nodes, load_weights, random_weights, readout, run_reference,
    Activation, Aggregation, BatchNorm, InferenceOptions, ModelConfig, ModelWeights, NodeEmbeddingMatrix,
};
use dgnnflow::EMBED_DIM;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model_config(shape: usize, mode: Aggregation) -> ModelConfig {
    let hidden: [&[usize]; 4] = [&[], &[32], &[16, 24], &[48]];
    ModelConfig {
        stage1_hidden: hidden[shape % 4].to_vec(),
        phi_hidden: hidden[(shape / 4) % 4].to_vec(),
        readout_hidden: hidden[(shape / 16) % 4].to_vec(),
        activation: if shape % 7 == 3 { Activation::Identity } else { Activation::Relu },
        aggregation: mode,
        ..Default::default()
    }
}

fn weights(seed: u64) -> ModelWeights {
    random_weights(seed, &model_config(seed as usize % 64, Aggregation::Max)).unwrap()
}

fn modes() -> impl Strategy<Value = Aggregation> {
    prop::sample::select(Aggregation::ALL.to_vec())
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f32>> {
    (0..n).map(|_| (0..EMBED_DIM).map(|_| rng.random_range(-3.0f32..3.0)).collect()).collect()
}

fn matrix(rows: &[Vec<f32>]) -> NodeEmbeddingMatrix {
    NodeEmbeddingMatrix::from_rows(EMBED_DIM, rows.to_vec()).unwrap()
}

fn rows_of(x: &NodeEmbeddingMatrix) -> Vec<Vec<f32>> {
    x.rows().map(<[f32]>::to_vec).collect()
}

fn assert_rows_close(a: &[Vec<f32>], b: &[Vec<f32>], tol: f64) -> Result<(), TestCaseError> {
    prop_assert_eq!(a.len(), b.len());
    for (v, (ra, rb)) in a.iter().zip(b).enumerate() {
        let d = oracle::max_abs_diff(ra, rb);
        prop_assert!(d <= tol, "row {} differs by {}", v, d);
    }
    Ok(())
}

fn graph_edges(g: &DynamicGraph) -> BTreeSet<(usize, usize)> {
    g.edges().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn embed_nodes_matches_scalar_oracle(ev in events(32), seed in any::<u64>()) {
        let w = weights(seed);
        let x = embed_nodes(&ev, &w).unwrap();
        assert_rows_close(&rows_of(&x), &oracle::embed_all(&ev, &w), 1e-6)?;
    }

    #[test]
    fn edge_message_matches_scalar_oracle(seed in any::<u64>()) {
        let w = weights(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let xs = random_rows(&mut rng, 2);
        for conv in &w.conv {
            let m = edge_message(&xs[0], &xs[1], &conv.phi).unwrap();
            prop_assert!(oracle::max_abs_diff(&m, &oracle::message(&xs[0], &xs[1], &conv.phi)) <= 1e-6);
            let same = edge_message(&xs[0], &xs[0], &conv.phi).unwrap();
            prop_assert!(oracle::max_abs_diff(&same, &oracle::message(&xs[0], &xs[0], &conv.phi)) <= 1e-6);
        }
    }

    #[test]
    fn aggregate_matches_fold_oracle(seed in any::<u64>(), count in 0usize..12, width in 1usize..40, mode in modes()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let msgs: Vec<Vec<f32>> = (0..count).map(|_| (0..width).map(|_| rng.random_range(-100.0f32..100.0)).collect()).collect();
        let got = aggregate(msgs.iter().map(Vec::as_slice), width, mode);
        let want = oracle::fold(&msgs, width, mode);
        prop_assert_eq!(got.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), want.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn edgeconv_layer_matches_scalar_oracle(ev in events(32), seed in any::<u64>(), delta in 0.2f64..2.5, mode in modes()) {
        let w = weights(seed);
        let g = build_graph(&ev, delta, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_rows(&mut rng, ev.len());
        let edges = graph_edges(&g);
        for conv in &w.conv {
            let got = edgeconv_layer(&matrix(&x), &g, conv, mode).unwrap();
            assert_rows_close(&rows_of(&got), &oracle::edgeconv(&x, &edges, conv, mode), 1e-5)?;
        }
    }

    #[test]
    fn readout_matches_scalar_oracle(ev in events(32), seed in any::<u64>()) {
        let w = weights(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_rows(&mut rng, ev.len());
        let r = readout(&matrix(&x), &ev, &w).unwrap();
        let (weights, met) = oracle::readout(&x, &ev, &w);
        prop_assert!(oracle::max_abs_diff(&r.weights, &weights) <= 1e-6);
        prop_assert!((r.met - met).abs() <= 1e-6 * met.abs().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn full_pipeline_matches_scalar_oracle(ev in events(32), seed in any::<u64>(), delta in 0.2f64..2.0, wrap in any::<bool>(), mode in modes()) {
        let w = weights(seed);
        let r = run_reference(&ev, &w, &InferenceOptions { delta, wrap_phi: wrap, mode }).unwrap();
        let o = oracle::pipeline(&ev, &w, delta, wrap, mode);
        prop_assert_eq!(r.directed_edges, o.edges);
        assert_rows_close(&rows_of(&r.embeddings[0]), &o.x0, 1e-6)?;
        assert_rows_close(&rows_of(&r.embeddings[1]), &o.x1, 1e-5)?;
        assert_rows_close(&rows_of(&r.embeddings[2]), &o.x2, 1e-5)?;
        prop_assert!(oracle::max_abs_diff(&r.weights, &o.weights) <= 1e-6);
        prop_assert!((r.met - o.met).abs() <= 1e-6 * o.met.abs().max(1e-30));
    }

    #[test]
    fn isolated_nodes_keep_their_embedding(ev in events(32), seed in any::<u64>(), delta in 0.1f64..1.0, mode in modes()) {
        let mut w = weights(seed);
        for conv in &mut w.conv {
            conv.bn = BatchNorm::identity(EMBED_DIM);
        }
        let g = build_graph(&ev, delta, false).unwrap();
        let x0 = embed_nodes(&ev, &w).unwrap();
        let x1 = edgeconv_layer(&x0, &g, &w.conv[0], mode).unwrap();
        for v in (0..ev.len()).filter(|&v| g.neighbors(v).is_empty()) {
            prop_assert_eq!(x1.row(v), x0.row(v));
        }
    }

    #[test]
    fn permuting_particles_permutes_weights(ev in events(32), seed in any::<u64>(), shift in 0usize..32, mode in modes()) {
        let n = ev.len();
        let shift = shift % n;
        let permuted = Event { event_id: ev.event_id, particles: (0..n).map(|i| ev.particles[(i + shift) % n]).collect() };
        let w = weights(seed);
        let opts = InferenceOptions { delta: 0.8, wrap_phi: true, mode };
        let a = run_reference(&ev, &w, &opts).unwrap();
        let b = run_reference(&permuted, &w, &opts).unwrap();
        let tol = if mode == Aggregation::Max { 1e-6 } else { 1e-4 };
        for i in 0..n {
            let (x, y) = (a.weights[(i + shift) % n] as f64, b.weights[i] as f64);
            prop_assert!((x - y).abs() <= tol * x.abs().max(1.0), "particle {}: {} vs {}", i, x, y);
        }
        prop_assert!((a.met - b.met).abs() <= tol * a.met.abs().max(1e-12), "met {} vs {}", a.met, b.met);
    }
}

#[test]
fn every_intermediate_is_finite_on_generated_events() {
    let events = generate_events(77, 500, &GeneratorConfig::default()).unwrap();
    for (i, ev) in events.iter().enumerate() {
        let w = random_weights(i as u64 % 16, &ModelConfig::default()).unwrap();
        for mode in Aggregation::ALL {
            let r = run_reference(ev, &w, &InferenceOptions { mode, ..Default::default() }).unwrap();
            assert!(r.embeddings.iter().all(NodeEmbeddingMatrix::all_finite), "event {i} {mode}");
            assert!(r.weights.iter().all(|x| x.is_finite()) && r.met.is_finite());
        }
    }
}

#[test]
fn runs_are_bit_identical() {
    let ev = &generate_events(3, 1, &GeneratorConfig { min_particles: 100, ..Default::default() }).unwrap()[0];
    let w = random_weights(9, &ModelConfig::default()).unwrap();
    for mode in Aggregation::ALL {
        let opts = InferenceOptions { mode, ..Default::default() };
        assert_eq!(run_reference(ev, &w, &opts).unwrap(), run_reference(ev, &w, &opts).unwrap());
    }
}

/// Hand-authored weights file: 2x2 categorical tables of width 2 and one
/// dense layer per MLP. Stage 1 copies the continuous features into
/// columns 0..6, both EdgeConv layers are zero messages with identity batch
/// norm, and the readout is `0.1 * x[0]`, so each weight is `0.1 * pt`.
fn fixture_bytes() -> Vec<u8> {
    fn tensor(buf: &mut Vec<u8>, name: &str, dims: &[u32], data: &[f32]) {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(dims.len() as u8);
        for d in dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for x in data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn identity_bn(buf: &mut Vec<u8>, prefix: &str) {
        tensor(buf, &format!("{prefix}.gamma"), &[32], &[1.0; 32]);
        tensor(buf, &format!("{prefix}.beta"), &[32], &[0.0; 32]);
        tensor(buf, &format!("{prefix}.running_mean"), &[32], &[0.0; 32]);
        tensor(buf, &format!("{prefix}.running_var"), &[32], &[1.0; 32]);
        tensor(buf, &format!("{prefix}.eps"), &[1], &[0.0]);
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(b"DGNW");
    buf.extend_from_slice(&1u16.to_le_bytes());
    buf.push(0); // relu
    buf.push(0); // max
    buf.extend_from_slice(&2u16.to_le_bytes());
    buf.extend_from_slice(&2u16.to_le_bytes());
    buf.extend_from_slice(&2u16.to_le_bytes()); // cat_dim
    buf.extend_from_slice(&27u32.to_le_bytes()); // tensor count

    tensor(&mut buf, "norm.mean", &[6], &[0.0; 6]);
    tensor(&mut buf, "norm.scale", &[6], &[1.0; 6]);
    tensor(&mut buf, "cat_embed.0", &[2, 2], &[0.5, -0.5, 0.25, -0.25]);
    tensor(&mut buf, "cat_embed.1", &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let mut stage1 = vec![0.0f32; 32 * 10];
    for i in 0..6 {
        stage1[i * 10 + i] = 1.0;
    }
    tensor(&mut buf, "stage1.mlp.0.weight", &[32, 10], &stage1);
    tensor(&mut buf, "stage1.mlp.0.bias", &[32], &[0.0; 32]);
    identity_bn(&mut buf, "stage1.bn");
    for l in 1..=2 {
        tensor(&mut buf, &format!("conv{l}.phi.0.weight"), &[32, 64], &[0.0; 32 * 64]);
        tensor(&mut buf, &format!("conv{l}.phi.0.bias"), &[32], &[0.0; 32]);
        identity_bn(&mut buf, &format!("conv{l}.bn"));
    }
    let mut head = [0.0f32; 32];
    head[0] = 0.1;
    tensor(&mut buf, "readout.mlp.0.weight", &[1, 32], &head);
    tensor(&mut buf, "readout.mlp.0.bias", &[1], &[0.0]);
    buf
}

#[test]
fn hand_written_weights_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixture.dgnw");
    std::fs::write(&path, fixture_bytes()).unwrap();
    let w = load_weights(&path).unwrap();
    assert_eq!(w.cardinalities, [2, 2]);
    assert_eq!(w.cat_dim, 2);
    assert_eq!(w.input_width(), 10);
    assert_eq!(w.activation, Activation::Relu);
    assert_eq!(w.aggregation, Aggregation::Max);
    let shape = |m: &dgnnflow::model::Mlp| m.layers.iter().map(|l| (l.in_dim, l.out_dim)).collect::<Vec<_>>();
    assert_eq!(shape(&w.stage1_mlp), vec![(10, 32)]);
    assert_eq!(shape(&w.conv[0].phi), vec![(64, 32)]);
    assert_eq!(shape(&w.conv[1].phi), vec![(64, 32)]);
    assert_eq!(shape(&w.readout_mlp), vec![(32, 1)]);
    assert_eq!(w.cat_embed[1], vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(dgnnflow::model::encode_weights(&w).unwrap(), fixture_bytes());

    // pt 3 at phi 0 and pt 4 at phi pi/2 with delta 2 so the pair is
    // connected. Weights 0.3 and 0.4, met = |(0.9, 1.6)| = sqrt(3.37).
    let ev = Event {
        event_id: 0,
        particles: vec![
            Particle::from_kinematics(3.0, 0.0, 0.0, [0, 1]),
            Particle::from_kinematics(4.0, 0.0, std::f32::consts::FRAC_PI_2, [1, 0]),
        ],
    };
    for mode in Aggregation::ALL {
        let r = run_reference(&ev, &w, &InferenceOptions { delta: 2.0, wrap_phi: false, mode }).unwrap();
        assert_eq!(r.directed_edges, 2);
        assert!((r.weights[0] as f64 - 0.3).abs() < 1e-6 && (r.weights[1] as f64 - 0.4).abs() < 1e-6);
        let hand = 3.37f64.sqrt();
        assert!((r.met - hand).abs() <= 1e-6 * hand, "met {} vs {hand}", r.met);
    }
}

#[test]
fn single_particle_with_unit_weight_gives_its_pt() {
    let bytes = fixture_bytes();
    let mut w = dgnnflow::model::decode_weights(&bytes).unwrap();
    // Readout becomes the constant 1.
    w.readout_mlp.layers[0].weight.iter_mut().for_each(|x| *x = 0.0);
    w.readout_mlp.layers[0].bias[0] = 1.0;
    for (pt, phi) in [(7.5f32, 0.3f32), (0.2, -2.9), (123.0, 3.1)] {
        let ev = Event { event_id: 1, particles: vec![Particle::from_kinematics(pt, 1.0, phi, [0, 0])] };
        let r = run_reference(&ev, &w, &InferenceOptions::default()).unwrap();
        assert_eq!(r.directed_edges, 0);
        assert_eq!(r.weights, vec![1.0]);
        assert!((r.met - pt as f64).abs() <= 1e-6 * pt as f64, "{} vs {pt}", r.met);
    }
}
