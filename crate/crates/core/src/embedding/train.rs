use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{leaky, sigmoid, softmax_into, AggregationMode, EmbeddingModel, LEAKY_SLOPE};
use super::table::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, NodeId};
use crate::oracle::FeatureTable;
use crate::rng;

/// Default step size for the mean cross-entropy. Full-batch training at or
/// below it decreases the loss monotonically on unit-scale features of a few
/// hundred nodes; larger steps are allowed but watched for divergence.
pub const STABLE_LEARNING_RATE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingHyper {
    pub d_out: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub mode: AggregationMode,
}

impl Default for EmbeddingHyper {
    fn default() -> Self {
        Self {
            d_out: 32,
            learning_rate: STABLE_LEARNING_RATE,
            epochs: 500,
            seed: 0,
            batch_size: None,
            mode: AggregationMode::Attention,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedEmbedding {
    pub model: EmbeddingModel,
    pub table: EmbeddingTable,
    /// Mean cross-entropy per epoch.
    pub loss_curve: Vec<f64>,
    pub seed: u64,
}

/// Per-parameter gradient with the same shapes as [`EmbeddingModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingGradient {
    pub w_h: Array2<f64>,
    pub w_r: Array2<f64>,
    pub attn: Array1<f64>,
    pub clf_w: Array1<f64>,
    pub clf_b: f64,
}

impl EmbeddingGradient {
    /// Same layout as [`EmbeddingModel::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        self.w_h
            .iter()
            .chain(self.w_r.iter())
            .chain(self.attn.iter())
            .chain(self.clf_w.iter())
            .copied()
            .chain(std::iter::once(self.clf_b))
            .collect()
    }
}

/// Per-node linear terms shared by every node that touches them.
pub(crate) struct Encoded {
    z: Array2<f64>,
    r: Array2<f64>,
    self_score: Array1<f64>,
    nb_score: Array1<f64>,
}

pub(crate) struct NodeForward {
    pub pre: Array1<f64>,
    pub h: Array1<f64>,
    /// Pre-activation attention scores, aligned with the neighbour list.
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Encoded {
    pub fn new(model: &EmbeddingModel, x: &Array2<f64>) -> Self {
        let z = x.dot(&model.w_h.t());
        let r = x.dot(&model.w_r.t());
        let self_score = z.dot(&model.attn_self());
        let nb_score = z.dot(&model.attn_nb());
        Self {
            z,
            r,
            self_score,
            nb_score,
        }
    }

    pub fn forward(
        &self,
        model: &EmbeddingModel,
        v: NodeId,
        nbrs: &[NodeId],
        scratch: &mut Vec<f64>,
    ) -> NodeForward {
        let i = v.index();
        let mut pre = self.r.row(i).to_owned();
        let mut scores = Vec::new();
        let mut weights = Vec::new();
        if model.mode.uses_neighbors() && !nbrs.is_empty() {
            if model.mode == AggregationMode::Attention {
                scores.extend(nbrs.iter().map(|&j| self.self_score[i] + self.nb_score[j.index()]));
                scratch.clear();
                scratch.extend(scores.iter().map(|&s| leaky(s)));
                softmax_into(scratch, &mut weights);
            } else {
                weights = vec![1.0 / nbrs.len() as f64; nbrs.len()];
            }
            for (&w, &j) in weights.iter().zip(nbrs) {
                pre.scaled_add(w, &self.z.row(j.index()));
            }
        }
        let h = if model.mode == AggregationMode::RawProjection {
            pre.clone()
        } else {
            pre.mapv(|p| p.max(0.0))
        };
        NodeForward {
            pre,
            h,
            scores,
            weights,
        }
    }
}

fn check_examples(
    graph: &KnowledgeGraph,
    features: &FeatureTable,
    examples: &[(NodeId, bool)],
) -> Result<()> {
    for &(v, _) in examples {
        graph.check_node(v)?;
        if !features.has(v) {
            return Err(Error::State(format!("missing features for node {v}")));
        }
        if let Some(u) = graph.nb(v).iter().find(|&&u| !features.has(u)) {
            return Err(Error::State(format!(
                "missing features for node {u}, a neighbour of training node {v}"
            )));
        }
    }
    Ok(())
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean cross-entropy over `examples` and its exact gradient.
pub fn loss_and_gradient(
    model: &EmbeddingModel,
    graph: &KnowledgeGraph,
    features: &FeatureTable,
    examples: &[(NodeId, bool)],
) -> Result<(f64, EmbeddingGradient)> {
    check_examples(graph, features, examples)?;
    if examples.is_empty() {
        return Err(Error::Domain("no training examples".into()));
    }
    if features.dim() != model.input_dim() {
        return Err(Error::Domain(format!(
            "features have dimension {}, model expects {}",
            features.dim(),
            model.input_dim()
        )));
    }
    let x = features.as_array();
    let enc = Encoded::new(model, x);
    let n = graph.node_count();
    let d_out = model.output_dim();
    let scale = 1.0 / examples.len() as f64;

    let mut d_z = Array2::<f64>::zeros((n, d_out));
    let mut d_r = Array2::<f64>::zeros((n, d_out));
    let mut d_self_score = Array1::<f64>::zeros(n);
    let mut d_nb_score = Array1::<f64>::zeros(n);
    let mut d_clf_w = Array1::<f64>::zeros(d_out);
    let mut d_clf_b = 0.0;
    let mut loss = 0.0;
    let mut scratch = Vec::new();
    let mut d_alpha = Vec::new();

    for &(v, y) in examples {
        let nbrs = graph.nb(v);
        let fwd = enc.forward(model, v, nbrs, &mut scratch);
        let logit = model.clf_w.dot(&fwd.h) + model.clf_b;
        let y = if y { 1.0 } else { 0.0 };
        loss += softplus(logit) - y * logit;

        let g = (sigmoid(logit) - y) * scale;
        d_clf_w.scaled_add(g, &fwd.h);
        d_clf_b += g;
        let mut d_pre = &model.clf_w * g;
        if model.mode != AggregationMode::RawProjection {
            d_pre.zip_mut_with(&fwd.pre, |d, &p| {
                if p <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        d_r.row_mut(v.index()).scaled_add(1.0, &d_pre);

        if fwd.weights.is_empty() {
            continue;
        }
        for (&w, &j) in fwd.weights.iter().zip(nbrs) {
            d_z.row_mut(j.index()).scaled_add(w, &d_pre);
        }
        if model.mode == AggregationMode::Attention {
            d_alpha.clear();
            d_alpha.extend(nbrs.iter().map(|&j| d_pre.dot(&enc.z.row(j.index()))));
            let mean: f64 = fwd.weights.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
            for ((&j, &s), (&a, &da)) in nbrs
                .iter()
                .zip(&fwd.scores)
                .zip(fwd.weights.iter().zip(&d_alpha))
            {
                let slope = if s > 0.0 { 1.0 } else { LEAKY_SLOPE };
                let d_s = a * (da - mean) * slope;
                d_self_score[v.index()] += d_s;
                d_nb_score[j.index()] += d_s;
            }
        }
    }

    let d_out_len = d_out;
    let mut attn_grad = Array1::<f64>::zeros(2 * d_out_len);
    if model.mode == AggregationMode::Attention {
        // score_self = z·a_self and score_nb = z·a_nb feed back into z.
        let a_self = model.attn_self().to_owned();
        let a_nb = model.attn_nb().to_owned();
        let ga_self = enc.z.t().dot(&d_self_score);
        let ga_nb = enc.z.t().dot(&d_nb_score);
        attn_grad.slice_mut(ndarray::s![..d_out_len]).assign(&ga_self);
        attn_grad.slice_mut(ndarray::s![d_out_len..]).assign(&ga_nb);
        let ds = d_self_score.view().insert_axis(Axis(1));
        let dn = d_nb_score.view().insert_axis(Axis(1));
        d_z = d_z + &ds.dot(&a_self.view().insert_axis(Axis(0)));
        d_z = d_z + &dn.dot(&a_nb.view().insert_axis(Axis(0)));
    }
    let grad = EmbeddingGradient {
        w_h: d_z.t().dot(x),
        w_r: d_r.t().dot(x),
        attn: attn_grad,
        clf_w: d_clf_w,
        clf_b: d_clf_b,
    };
    Ok((loss * scale, grad))
}

fn apply(model: &mut EmbeddingModel, grad: &EmbeddingGradient, lr: f64) {
    if model.mode.trains_encoder() {
        model.w_r.scaled_add(-lr, &grad.w_r);
        if model.mode.uses_neighbors() {
            model.w_h.scaled_add(-lr, &grad.w_h);
        }
        if model.mode == AggregationMode::Attention {
            model.attn.scaled_add(-lr, &grad.attn);
        }
    }
    model.clf_w.scaled_add(-lr, &grad.clf_w);
    model.clf_b -= lr * grad.clf_b;
}

/// Gradient descent on the mean cross-entropy of the classifier over the
/// aggregated embeddings of `examples`.
///
/// Full-batch runs are monitored: a NaN loss, non-finite parameters, or a
/// loss that is higher than it was ten epochs earlier aborts training.
pub fn train_embeddings(
    graph: &KnowledgeGraph,
    features: Arc<FeatureTable>,
    examples: &[(NodeId, bool)],
    hyper: &EmbeddingHyper,
) -> Result<TrainedEmbedding> {
    if hyper.d_out == 0 || hyper.epochs == 0 {
        return Err(Error::Config("d_out and epochs must be positive".into()));
    }
    if !(hyper.learning_rate > 0.0 && hyper.learning_rate.is_finite()) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {}",
            hyper.learning_rate
        )));
    }
    if features.node_count() != graph.node_count() {
        return Err(Error::Validation(format!(
            "feature table has {} rows, graph has {} nodes",
            features.node_count(),
            graph.node_count()
        )));
    }
    check_examples(graph, &features, examples)?;

    let mut init_rng = rng::stream(hyper.seed, "embedding-init");
    let mut model = EmbeddingModel::random(features.dim(), hyper.d_out, hyper.mode, &mut init_rng);
    let mut batch_rng = rng::stream(hyper.seed, "embedding-batches");
    let mut order: Vec<(NodeId, bool)> = examples.to_vec();
    let mut loss_curve = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        let epoch_loss = match hyper.batch_size {
            None => {
                let (loss, grad) = loss_and_gradient(&model, graph, &features, examples)?;
                if loss.is_finite() {
                    apply(&mut model, &grad, hyper.learning_rate);
                }
                loss
            }
            Some(bs) => {
                order.shuffle(&mut batch_rng);
                let mut total = 0.0;
                for batch in order.chunks(bs.max(1)) {
                    let (loss, grad) = loss_and_gradient(&model, graph, &features, batch)?;
                    total += loss * batch.len() as f64;
                    apply(&mut model, &grad, hyper.learning_rate);
                }
                total / order.len() as f64
            }
        };
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged {
                stage: "embedding training",
                at: format!("epoch {epoch}"),
                detail: format!("loss is {epoch_loss}"),
            });
        }
        if !model.is_finite() {
            return Err(Error::Diverged {
                stage: "embedding training",
                at: format!("epoch {epoch}"),
                detail: "non-finite parameters".into(),
            });
        }
        if hyper.batch_size.is_none() && epoch >= 10 {
            let earlier = loss_curve[epoch - 10];
            if epoch_loss > earlier + 1e-12 * f64::max(1.0, earlier) {
                return Err(Error::Diverged {
                    stage: "embedding training",
                    at: format!("epoch {epoch}"),
                    detail: format!(
                        "loss rose from {earlier} to {epoch_loss} over 10 epochs \
                         (learning rate {}, stable default {STABLE_LEARNING_RATE})",
                        hyper.learning_rate
                    ),
                });
            }
        }
        loss_curve.push(epoch_loss);
    }

    let table = EmbeddingTable::build(&model, graph, features)?;
    Ok(TrainedEmbedding {
        model,
        table,
        loss_curve,
        seed: hyper.seed,
    })
}

/// Classifier probability for each of `nodes`, read from a built table.
pub fn predict(
    model: &EmbeddingModel,
    table: &EmbeddingTable,
    nodes: &[NodeId],
) -> Result<Vec<f64>> {
    nodes
        .iter()
        .map(|&v| model.classify(table.get(v)?))
        .collect()
}
