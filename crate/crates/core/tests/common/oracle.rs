//! Naive scalar re-implementations used as test oracles. Plain index
//! loops over the raw weight fields; nothing here calls into the model,
//! graph or simulator code.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::f64::consts::PI;

use dgnnflow::event::{Event, Particle};
use dgnnflow::model::{Activation, Aggregation, BatchNorm, EdgeConvWeights, Mlp, ModelWeights};

/// All ordered pairs `(u, v)`, `u != v`, closer than `delta`.
pub fn brute_edges(event: &Event, delta: f64, wrap_phi: bool) -> BTreeSet<(usize, usize)> {
    let p = &event.particles;
    let mut out = BTreeSet::new();
    for u in 0..p.len() {
        for v in 0..p.len() {
            if u == v {
                continue;
            }
            let deta = p[u].continuous[1] as f64 - p[v].continuous[1] as f64;
            let mut dphi = p[u].continuous[2] as f64 - p[v].continuous[2] as f64;
            if wrap_phi {
                while dphi > PI {
                    dphi -= 2.0 * PI;
                }
                while dphi <= -PI {
                    dphi += 2.0 * PI;
                }
            }
            if deta * deta + dphi * dphi < delta * delta {
                out.insert((u, v));
            }
        }
    }
    out
}

pub fn dense(x: &[f32], weight: &[f32], bias: &[f32], in_dim: usize, out_dim: usize) -> Vec<f32> {
    let mut y = vec![0.0f32; out_dim];
    for j in 0..out_dim {
        let mut acc = 0.0f32;
        for i in 0..in_dim {
            acc += weight[j * in_dim + i] * x[i];
        }
        y[j] = acc + bias[j];
    }
    y
}

pub fn mlp(x: &[f32], m: &Mlp) -> Vec<f32> {
    let mut h = x.to_vec();
    for (k, l) in m.layers.iter().enumerate() {
        h = dense(&h, &l.weight, &l.bias, l.in_dim, l.out_dim);
        if k + 1 < m.layers.len() && m.activation == Activation::Relu {
            for v in h.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
    h
}

pub fn batch_norm(x: &[f32], bn: &BatchNorm) -> Vec<f32> {
    let mut y = vec![0.0f32; x.len()];
    for i in 0..x.len() {
        let s = (bn.running_var[i] + bn.eps).sqrt();
        y[i] = (x[i] - bn.running_mean[i]) / s * bn.gamma[i] + bn.beta[i];
    }
    y
}

pub fn embed(p: &Particle, w: &ModelWeights) -> Vec<f32> {
    let mut input = Vec::new();
    for c in 0..6 {
        input.push((p.continuous[c] - w.norm_mean[c]) / w.norm_scale[c]);
    }
    for k in 0..2 {
        let row = p.categorical[k] as usize;
        for j in 0..w.cat_dim {
            input.push(w.cat_embed[k][row * w.cat_dim + j]);
        }
    }
    batch_norm(&mlp(&input, &w.stage1_mlp), &w.stage1_bn)
}

pub fn embed_all(event: &Event, w: &ModelWeights) -> Vec<Vec<f32>> {
    event.particles.iter().map(|p| embed(p, w)).collect()
}

pub fn message(x_u: &[f32], x_v: &[f32], phi: &Mlp) -> Vec<f32> {
    let d = x_u.len();
    let mut input = vec![0.0f32; 2 * d];
    for i in 0..d {
        input[i] = x_u[i];
        input[d + i] = x_v[i] - x_u[i];
    }
    mlp(&input, phi)
}

/// Per-element fold in the given order.
pub fn fold(messages: &[Vec<f32>], width: usize, mode: Aggregation) -> Vec<f32> {
    let mut out = vec![0.0f32; width];
    if messages.is_empty() {
        return out;
    }
    for i in 0..width {
        let mut acc = messages[0][i];
        for m in &messages[1..] {
            acc = match mode {
                Aggregation::Max => {
                    if m[i] > acc {
                        m[i]
                    } else {
                        acc
                    }
                }
                _ => acc + m[i],
            };
        }
        if mode == Aggregation::Mean {
            acc /= messages.len() as f32;
        }
        out[i] = acc;
    }
    out
}

/// One EdgeConv layer over an explicit edge set; messages into each
/// target are folded in ascending source order.
pub fn edgeconv(
    x: &[Vec<f32>],
    edges: &BTreeSet<(usize, usize)>,
    layer: &EdgeConvWeights,
    mode: Aggregation,
) -> Vec<Vec<f32>> {
    let d = x.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(x.len());
    for v in 0..x.len() {
        let mut sources: Vec<usize> = edges.iter().filter(|&&(_, t)| t == v).map(|&(u, _)| u).collect();
        sources.sort_unstable();
        let msgs: Vec<Vec<f32>> = sources.iter().map(|&u| message(&x[u], &x[v], &layer.phi)).collect();
        let agg = fold(&msgs, d, mode);
        let normed = batch_norm(&agg, &layer.bn);
        let mut row = vec![0.0f32; d];
        for i in 0..d {
            row[i] = normed[i] + x[v][i];
        }
        out.push(row);
    }
    out
}

/// Per-particle weights and met.
pub fn readout(x: &[Vec<f32>], event: &Event, w: &ModelWeights) -> (Vec<f32>, f64) {
    let mut weights = Vec::new();
    let (mut mx, mut my) = (0.0f64, 0.0f64);
    for (i, row) in x.iter().enumerate() {
        let wi = mlp(row, &w.readout_mlp)[0];
        weights.push(wi);
        mx += wi as f64 * event.particles[i].continuous[3] as f64;
        my += wi as f64 * event.particles[i].continuous[4] as f64;
    }
    (weights, (mx * mx + my * my).sqrt())
}

pub struct Pipeline {
    pub x0: Vec<Vec<f32>>,
    pub x1: Vec<Vec<f32>>,
    pub x2: Vec<Vec<f32>>,
    pub weights: Vec<f32>,
    pub met: f64,
    pub edges: usize,
}

pub fn pipeline(event: &Event, w: &ModelWeights, delta: f64, wrap_phi: bool, mode: Aggregation) -> Pipeline {
    let edges = brute_edges(event, delta, wrap_phi);
    let x0 = embed_all(event, w);
    let x1 = edgeconv(&x0, &edges, &w.conv[0], mode);
    let x2 = edgeconv(&x1, &edges, &w.conv[1], mode);
    let (weights, met) = readout(&x2, event, w);
    Pipeline { x0, x1, x2, weights, met, edges: edges.len() }
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()).fold(0.0, f64::max)
}
