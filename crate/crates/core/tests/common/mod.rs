//! Independent reference computations shared by the integration suites.
#![allow(dead_code)]

use kgbs_core::embedding::{loss_and_gradient, AggregationMode, EmbeddingModel};
use kgbs_core::policy::{QNetwork, StateVector};
use kgbs_core::rng::SimRng;
use kgbs_core::{FeatureTable, KnowledgeGraph, NodeId};
use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};

pub const FD_STEP: f64 = 1e-5;

/// Relative error with the denominator floored at 1e-6, so components that
/// are zero up to rounding compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// A connected random graph on `n` nodes: a random tree plus a few chords.
pub fn random_graph(n: usize, r: &mut SimRng) -> KnowledgeGraph {
    let mut edges: Vec<(NodeId, NodeId)> = (1..n)
        .map(|i| (NodeId::from(r.random_range(0..i)), NodeId::from(i)))
        .collect();
    for _ in 0..n / 2 {
        edges.push((NodeId::from(r.random_range(0..n)), NodeId::from(r.random_range(0..n))));
    }
    KnowledgeGraph::from_edges(n, edges).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, r: &mut SimRng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
}

/// Largest relative error between the analytic embedding-loss gradient and
/// central differences, over every parameter of a random small instance.
pub fn embedding_fd_max_rel_err(seed: u64, mode: AggregationMode) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(4..9);
    let d = r.random_range(2..6);
    let d_out = r.random_range(2..5);
    let g = random_graph(n, &mut r);
    let feats = FeatureTable::from_array(random_matrix(n, d, &mut r));
    let mut model = EmbeddingModel::random(d, d_out, mode, &mut r);
    model.clf_b = r.random_range(-0.5..0.5);
    let examples: Vec<(NodeId, bool)> = (0..n).map(|i| (NodeId::from(i), r.random())).collect();

    let (_, grad) = loss_and_gradient(&model, &g, &feats, &examples).unwrap();
    let analytic = grad.to_flat();
    let theta = model.to_flat();
    assert_eq!(analytic.len(), theta.len());
    let loss_at = |p: &[f64]| {
        let mut m = model.clone();
        m.set_flat(p);
        loss_and_gradient(&m, &g, &feats, &examples).unwrap().0
    };
    let mut worst: f64 = 0.0;
    let mut p = theta.clone();
    for k in 0..theta.len() {
        p[k] = theta[k] + FD_STEP;
        let up = loss_at(&p);
        p[k] = theta[k] - FD_STEP;
        let down = loss_at(&p);
        p[k] = theta[k];
        worst = worst.max(rel_err(analytic[k], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

pub fn random_state(d_out: usize, r: &mut SimRng) -> StateVector {
    StateVector {
        frontier_summary: Array1::from_shape_simple_fn(d_out, || r.random_range(-1.0..1.0)),
        candidate_summary: Array1::from_shape_simple_fn(d_out, || r.random_range(-1.0..1.0)),
        budget_frac: r.random(),
        step_frac: r.random(),
    }
}

/// Smallest |pre-activation| over both hidden layers, by hand from the weights.
pub fn kink_margin(q: &QNetwork, state: &StateVector, action: ArrayView1<f64>) -> f64 {
    let x: Vec<f64> = state.to_input().iter().chain(action.iter()).copied().collect();
    let pre1: Vec<f64> = (0..q.b1.len())
        .map(|i| q.b1[i] + (0..x.len()).map(|j| q.w1[[i, j]] * x[j]).sum::<f64>())
        .collect();
    let pre2: Vec<f64> = (0..q.b2.len())
        .map(|i| q.b2[i] + (0..pre1.len()).map(|j| q.w2[[i, j]] * pre1[j].max(0.0)).sum::<f64>())
        .collect();
    pre1.iter().chain(&pre2).map(|v| v.abs()).fold(f64::INFINITY, f64::min)
}

/// Same as [`embedding_fd_max_rel_err`] for `∂Q(s,a)/∂θ` of a random network.
pub fn qnet_fd_max_rel_err(seed: u64) -> f64 {
    let mut r = rng(seed);
    let d_out = r.random_range(2..5);
    let hidden = [r.random_range(3..8), r.random_range(3..8)];
    let mut q = QNetwork::random(d_out, hidden, &mut r);
    // Non-zero biases so every parameter block is exercised.
    q.b1.mapv_inplace(|_| r.random_range(-0.3..0.3));
    q.b2.mapv_inplace(|_| r.random_range(-0.3..0.3));
    q.b3 = r.random_range(-0.3..0.3);
    // Central differences are meaningless across a ReLU kink, so redraw the
    // input until every hidden unit is clear of zero by more than the step moves it.
    let (state, action) = loop {
        let state = random_state(d_out, &mut r);
        let action = Array1::from_shape_simple_fn(d_out, || r.random_range(-1.0..1.0));
        if kink_margin(&q, &state, action.view()) > 1e-3 {
            break (state, action);
        }
    };

    let (_, grad) = q.gradient(&state, action.view()).unwrap();
    let analytic = grad.to_flat();
    let theta = q.to_flat();
    assert_eq!(analytic.len(), theta.len());
    let mut probe = q.clone();
    let mut p = theta.clone();
    let mut worst: f64 = 0.0;
    for k in 0..theta.len() {
        p[k] = theta[k] + FD_STEP;
        probe.set_flat(&p).unwrap();
        let up = probe.q_value(&state, action.view()).unwrap();
        p[k] = theta[k] - FD_STEP;
        probe.set_flat(&p).unwrap();
        let down = probe.q_value(&state, action.view()).unwrap();
        p[k] = theta[k];
        worst = worst.max(rel_err(analytic[k], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Attention weights written out term by term.
pub fn scratch_attention(m: &EmbeddingModel, x_self: ArrayView1<f64>, nbs: &[ArrayView1<f64>]) -> Vec<f64> {
    let d_out = m.w_h.nrows();
    let matvec = |x: ArrayView1<f64>| -> Vec<f64> {
        (0..d_out)
            .map(|i| (0..x.len()).map(|j| m.w_h[[i, j]] * x[j]).sum())
            .collect()
    };
    let zi = matvec(x_self);
    let e: Vec<f64> = nbs
        .iter()
        .map(|x| {
            let zj = matvec(*x);
            let s: f64 = (0..d_out).map(|k| m.attn[k] * zi[k] + m.attn[d_out + k] * zj[k]).sum();
            if s > 0.0 {
                s
            } else {
                0.2 * s
            }
        })
        .collect();
    let exps: Vec<f64> = e.iter().map(|s| s.exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|x| x / z).collect()
}

/// `relu(Σ α_j W_h x_j + W_r x_self)` with explicit loops.
pub fn scratch_aggregate(m: &EmbeddingModel, x_self: ArrayView1<f64>, nbs: &[ArrayView1<f64>]) -> Vec<f64> {
    let alpha = if nbs.is_empty() { Vec::new() } else { scratch_attention(m, x_self, nbs) };
    (0..m.w_h.nrows())
        .map(|i| {
            let mut s: f64 = (0..x_self.len()).map(|j| m.w_r[[i, j]] * x_self[j]).sum();
            for (a, x) in alpha.iter().zip(nbs) {
                s += a * (0..x.len()).map(|j| m.w_h[[i, j]] * x[j]).sum::<f64>();
            }
            s.max(0.0)
        })
        .collect()
}
