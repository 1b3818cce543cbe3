//! Independent reference implementations in plain `Vec<f64>` arithmetic.
#![allow(dead_code)]

use mmsg_core::bmc::BmcParams;
use mmsg_core::chem::MolGraph;
use mmsg_core::diff::{Gru, Linear, ParamStore, Tensor};
use mmsg_core::featurize::{GraphFeatures, ATOM_FEATURES, BOND_FEATURES};

pub fn esol() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/esol.csv")
}

pub fn bbbp() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/bbbp.csv")
}

/// `W x + b` with `W` stored `out x in`.
pub fn affine(store: &ParamStore, layer: &Linear, x: &[f64]) -> Vec<f64> {
    let w = store.value(layer.weight);
    assert_eq!(w.cols(), x.len());
    (0..w.rows())
        .map(|j| {
            let mut acc = 0.0;
            for (i, xi) in x.iter().enumerate() {
                acc += w.get(j, i) * xi;
            }
            if let Some(b) = layer.bias {
                acc += store.value(b).get(0, j);
            }
            acc
        })
        .collect()
}

pub fn vadd(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn vsub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn relu(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| x.max(0.0)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One GRU step, gates ordered reset, update, candidate.
pub fn gru_step(store: &ParamStore, gru: &Gru, x: &[f64], h: &[f64]) -> Vec<f64> {
    let hd = gru.hidden_dim;
    let gx = affine(store, &gru.input, x);
    let gh = affine(store, &gru.hidden, h);
    (0..hd)
        .map(|j| {
            let r = sigmoid(gx[j] + gh[j]);
            let z = sigmoid(gx[hd + j] + gh[hd + j]);
            let n = (gx[2 * hd + j] + r * gh[2 * hd + j]).tanh();
            (1.0 - z) * n + z * h[j]
        })
        .collect()
}

/// Runs the GRU over `rows` in order from a zero state and sums the outputs.
pub fn gru_sum_readout(store: &ParamStore, gru: &Gru, rows: &[Vec<f64>]) -> Vec<f64> {
    let mut h = vec![0.0; gru.hidden_dim];
    let mut total = vec![0.0; gru.hidden_dim];
    for x in rows {
        h = gru_step(store, gru, x, &h);
        total = vadd(&total, &h);
    }
    total
}

pub struct Alg1Output {
    /// Node hiddens per step, `t = 0..=T`.
    pub nodes: Vec<Vec<Vec<f64>>>,
    pub edges: Vec<Vec<Vec<f64>>>,
    pub h_v: Vec<f64>,
    pub h_e: Vec<f64>,
}

/// Straight-line Bidirectional Message Communication: T-1 update rounds,
/// one gathering round, then GRU-sum readouts.
pub fn alg1(graph: &MolGraph, feats: &GraphFeatures, store: &ParamStore, p: &BmcParams) -> Alg1Output {
    let n = graph.atoms.len();
    let ne = graph.edges.len();
    let ends: Vec<(usize, usize)> = graph.edges.iter().map(|e| (e.source, e.target)).collect();
    let reverse: Vec<usize> = ends
        .iter()
        .map(|&(s, t)| ends.iter().position(|&(a, b)| a == t && b == s).expect("reverse edge"))
        .collect();

    let x_v: Vec<&[f64]> = feats.atoms.chunks(ATOM_FEATURES).collect();
    let x_e: Vec<&[f64]> = feats.edges.chunks(BOND_FEATURES).collect();
    let h_v0: Vec<Vec<f64>> = x_v.iter().map(|x| affine(store, &p.atom_in, x)).collect();
    let h_e0: Vec<Vec<f64>> = x_e.iter().map(|x| affine(store, &p.bond_in, x)).collect();
    let hd = p.config.hidden_dim();

    let node_message = |h_e: &Vec<Vec<f64>>, v: usize| -> Vec<f64> {
        let incoming: Vec<usize> = (0..ne).filter(|&e| ends[e].1 == v).collect();
        if incoming.is_empty() {
            return vec![0.0; hd];
        }
        (0..hd)
            .map(|k| {
                let mut mx = f64::NEG_INFINITY;
                let mut sm = 0.0;
                for &e in &incoming {
                    mx = mx.max(h_e[e][k]);
                    sm += h_e[e][k];
                }
                mx * sm
            })
            .collect()
    };
    let edge_message = |h_v: &Vec<Vec<f64>>, e: usize| -> Vec<f64> {
        let (s, t) = ends[e];
        h_v[s].iter().zip(&h_v[t]).map(|(a, b)| (a + b) / 2.0).collect()
    };

    let mut nodes = vec![h_v0.clone()];
    let mut edges = vec![h_e0.clone()];
    let (mut h_v, mut h_e) = (h_v0.clone(), h_e0.clone());
    for _ in 0..p.config.depth() - 1 {
        let p_v: Vec<Vec<f64>> = (0..n).map(|v| vadd(&node_message(&h_e, v), &h_v[v])).collect();
        let p_e_pre: Vec<Vec<f64>> = (0..ne).map(|e| vadd(&edge_message(&h_v, e), &h_e[e])).collect();
        let p_e: Vec<Vec<f64>> = (0..ne).map(|e| vsub(&p_v[ends[e].0], &p_e_pre[reverse[e]])).collect();
        let new_e: Vec<Vec<f64>> = (0..ne).map(|e| relu(&vadd(&h_e0[e], &affine(store, &p.w_e, &p_e[e])))).collect();
        let new_v: Vec<Vec<f64>> = (0..n).map(|v| relu(&vadd(&h_v0[v], &affine(store, &p.w_v, &p_v[v])))).collect();
        h_v = new_v;
        h_e = new_e;
        nodes.push(h_v.clone());
        edges.push(h_e.clone());
    }
    let final_v: Vec<Vec<f64>> = (0..n)
        .map(|v| vadd(&vadd(&node_message(&h_e, v), &h_v[v]), &h_v0[v]))
        .collect();
    let final_e: Vec<Vec<f64>> = (0..ne)
        .map(|e| vadd(&vadd(&edge_message(&h_v, e), &h_e[e]), &h_e0[e]))
        .collect();
    let out_v = gru_sum_readout(store, &p.node_readout, &final_v);
    let out_e = gru_sum_readout(store, &p.edge_readout, &final_e);
    nodes.push(final_v);
    edges.push(final_e);
    Alg1Output { nodes, edges, h_v: out_v, h_e: out_e }
}

/// Single-sequence multi-head attention with an additive per-key bias row
/// per head, followed by the output projection.
pub fn attention(
    store: &ParamStore,
    q_l: &Linear,
    k_l: &Linear,
    v_l: &Linear,
    o_l: &Linear,
    rows: &[Vec<f64>],
    heads: usize,
    bias: Option<&[Vec<f64>]>,
) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let n = rows.len();
    let q: Vec<Vec<f64>> = rows.iter().map(|x| affine(store, q_l, x)).collect();
    let k: Vec<Vec<f64>> = rows.iter().map(|x| affine(store, k_l, x)).collect();
    let v: Vec<Vec<f64>> = rows.iter().map(|x| affine(store, v_l, x)).collect();
    let d = q[0].len();
    let dk = d / heads;
    let mut concat = vec![vec![0.0; d]; n];
    let mut all_weights = Vec::new();
    for h in 0..heads {
        let mut weights = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut logits = vec![0.0; n];
            for j in 0..n {
                let mut dot = 0.0;
                for c in h * dk..(h + 1) * dk {
                    dot += q[i][c] * k[j][c];
                }
                logits[j] = dot / (dk as f64).sqrt() + bias.map_or(0.0, |b| b[h][j]);
            }
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..n {
                weights[i][j] = exps[j] / z;
            }
            for c in h * dk..(h + 1) * dk {
                concat[i][c] = (0..n).map(|j| weights[i][j] * v[j][c]).sum();
            }
        }
        all_weights.push(weights);
    }
    (concat.iter().map(|x| affine(store, o_l, x)).collect(), all_weights)
}

/// ROC-AUC by enumerating every positive-negative pair.
pub fn auc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

pub fn segment_sum(rows: &[Vec<f64>], seg: &[usize], n: usize) -> Vec<Vec<f64>> {
    let width = rows.first().map_or(0, |r| r.len());
    let mut out = vec![vec![0.0; width]; n];
    for (r, &s) in rows.iter().zip(seg) {
        for c in 0..width {
            out[s][c] += r[c];
        }
    }
    out
}

pub fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}
