use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::state::StateVector;
use super::Transition;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::rng::SimRng;

pub const DEFAULT_HIDDEN: usize = 64;

/// Two-hidden-layer ReLU network scoring `(state, candidate embedding)`.
///
/// The first layer is split into a state block and an action block so the
/// state half can be shared across all candidates of one decision.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    state_dim: usize,
    action_dim: usize,
    /// `h1 × (state_dim + action_dim)`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `h2 × h1`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array1<f64>,
    pub b3: f64,
}

/// Gradient of the scalar output, laid out like the network.
#[derive(Clone, Debug)]
pub struct QGradient {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array1<f64>,
    pub b3: f64,
}

impl QGradient {
    fn zeros_like(q: &QNetwork) -> Self {
        Self {
            w1: Array2::zeros(q.w1.raw_dim()),
            b1: Array1::zeros(q.b1.len()),
            w2: Array2::zeros(q.w2.raw_dim()),
            b2: Array1::zeros(q.b2.len()),
            w3: Array1::zeros(q.w3.len()),
            b3: 0.0,
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(self.w1.iter());
        v.extend(self.b1.iter());
        v.extend(self.w2.iter());
        v.extend(self.b2.iter());
        v.extend(self.w3.iter());
        v.push(self.b3);
        v
    }
}

impl QNetwork {
    /// All-zero network for a state of `d_out` embeddings.
    pub fn zeros(d_out: usize, hidden: [usize; 2]) -> Self {
        let state_dim = StateVector::dim_for(d_out);
        let input = state_dim + d_out;
        Self {
            state_dim,
            action_dim: d_out,
            w1: Array2::zeros((hidden[0], input)),
            b1: Array1::zeros(hidden[0]),
            w2: Array2::zeros((hidden[1], hidden[0])),
            b2: Array1::zeros(hidden[1]),
            w3: Array1::zeros(hidden[1]),
            b3: 0.0,
        }
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn random(d_out: usize, hidden: [usize; 2], rng: &mut SimRng) -> Self {
        let mut q = Self::zeros(d_out, hidden);
        let fill = |a: &mut [f64], fan_in: usize, rng: &mut SimRng| {
            let r = 1.0 / (fan_in as f64).sqrt();
            a.iter_mut().for_each(|x| *x = rng.random_range(-r..r));
        };
        let input = q.input_dim();
        fill(q.w1.as_slice_mut().expect("standard layout"), input, rng);
        fill(q.w2.as_slice_mut().expect("standard layout"), hidden[0], rng);
        fill(q.w3.as_slice_mut().expect("standard layout"), hidden[1], rng);
        q
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn hidden(&self) -> [usize; 2] {
        [self.b1.len(), self.b2.len()]
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).chain(&self.w3).all(|x| x.is_finite())
            && self.b3.is_finite()
    }

    fn check_dims(&self, state: &StateVector, action: &ArrayView1<f64>) -> Result<()> {
        if state.dim() != self.state_dim || action.len() != self.action_dim {
            return Err(Error::Domain(format!(
                "network expects state {} + action {}, got {} + {}",
                self.state_dim,
                self.action_dim,
                state.dim(),
                action.len()
            )));
        }
        Ok(())
    }

    fn state_pre(&self, state: &StateVector) -> Array1<f64> {
        self.w1.slice(s![.., ..self.state_dim]).dot(&state.to_input()) + &self.b1
    }

    fn action_block(&self) -> ndarray::ArrayView2<'_, f64> {
        self.w1.slice(s![.., self.state_dim..])
    }

    pub fn q_value(&self, state: &StateVector, action: ArrayView1<f64>) -> Result<f64> {
        self.check_dims(state, &action)?;
        let pre1 = self.state_pre(state) + self.action_block().dot(&action);
        Ok(self.head(pre1.view()))
    }

    /// Output for a first-layer pre-activation.
    fn head(&self, pre1: ArrayView1<f64>) -> f64 {
        let h1 = pre1.mapv(relu);
        let h2 = (self.w2.dot(&h1) + &self.b2).mapv(relu);
        h2.dot(&self.w3) + self.b3
    }

    fn head_batch(&self, pre1: Array2<f64>) -> Vec<f64> {
        let h1 = pre1.mapv_into(relu);
        let h2 = (h1.dot(&self.w2.t()) + &self.b2).mapv_into(relu);
        (h2.dot(&self.w3) + self.b3).to_vec()
    }

    /// Q-values of every candidate in one batched pass.
    pub fn q_values(&self, state: &StateVector, candidates: &[NodeId], table: &EmbeddingTable) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        if state.dim() != self.state_dim || table.dim() != self.action_dim {
            return Err(Error::Domain(format!(
                "network expects state {} + action {}, got {} + {}",
                self.state_dim,
                self.action_dim,
                state.dim(),
                table.dim()
            )));
        }
        let actions = table.gather(candidates)?;
        let pre1 = actions.dot(&self.action_block().t()) + &self.state_pre(state);
        Ok(self.head_batch(pre1))
    }

    /// Largest Q over `candidates`, or `None` when there are none.
    pub fn max_q(&self, state: &StateVector, candidates: &[NodeId], table: &EmbeddingTable) -> Result<Option<f64>> {
        Ok(self.q_values(state, candidates, table)?.into_iter().reduce(f64::max))
    }

    /// Gradient of `Q(state, action)` with respect to every parameter.
    pub fn gradient(&self, state: &StateVector, action: ArrayView1<f64>) -> Result<(f64, QGradient)> {
        self.check_dims(state, &action)?;
        let mut g = QGradient::zeros_like(self);
        let q = self.accumulate(&state.to_input(), action, 1.0, &mut g);
        Ok((q, g))
    }

    /// Adds `scale · ∂Q/∂θ` into `g` and returns Q.
    fn accumulate(&self, state_in: &Array1<f64>, action: ArrayView1<f64>, scale: f64, g: &mut QGradient) -> f64 {
        let x = ndarray::concatenate(Axis(0), &[state_in.view(), action]).expect("1-d concatenation");
        let pre1 = self.w1.dot(&x) + &self.b1;
        let h1 = pre1.mapv(relu);
        let pre2 = self.w2.dot(&h1) + &self.b2;
        let h2 = pre2.mapv(relu);
        let q = h2.dot(&self.w3) + self.b3;

        g.b3 += scale;
        g.w3.scaled_add(scale, &h2);
        let d2 = Array1::from_shape_fn(h2.len(), |k| if pre2[k] > 0.0 { scale * self.w3[k] } else { 0.0 });
        g.b2 += &d2;
        g.w2 += &outer(&d2, &h1);
        let back1 = self.w2.t().dot(&d2);
        let d1 = Array1::from_shape_fn(h1.len(), |k| if pre1[k] > 0.0 { back1[k] } else { 0.0 });
        g.b1 += &d1;
        g.w1 += &outer(&d1, &x);
        q
    }

    fn apply(&mut self, g: &QGradient, step: f64) {
        self.w1.scaled_add(-step, &g.w1);
        self.b1.scaled_add(-step, &g.b1);
        self.w2.scaled_add(-step, &g.w2);
        self.b2.scaled_add(-step, &g.b2);
        self.w3.scaled_add(-step, &g.w3);
        self.b3 -= step * g.b3;
    }

    /// One semi-gradient step on `½ Σ (Q(s,a) − target)²` over the batch.
    ///
    /// Targets and gradients are all taken at the pre-update parameters.
    /// Returns the mean absolute TD error before the step.
    pub fn td_update(&mut self, batch: &[Transition], table: &EmbeddingTable, eta: f64, gamma: f64) -> Result<f64> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Domain(format!("discount {gamma} outside (0, 1]")));
        }
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut g = QGradient::zeros_like(self);
        let mut abs_err = 0.0;
        for tr in batch {
            let target = tr.reward + gamma * self.bootstrap(tr, table)?;
            let action = table.get(tr.action)?;
            self.check_dims(&tr.state, &action)?;
            // Peek at Q first so the accumulated gradient is scaled by the error.
            let q = self.q_value(&tr.state, action)?;
            let err = q - target;
            abs_err += err.abs();
            self.accumulate(&tr.state.to_input(), action, err, &mut g);
        }
        self.apply(&g, eta);
        if !self.is_finite() {
            return Err(Error::Diverged {
                stage: "q-network",
                at: "td update".into(),
                detail: "non-finite parameters".into(),
            });
        }
        Ok(abs_err / batch.len() as f64)
    }

    /// `max_a' Q(s', a')`, zero for terminal transitions and dead ends.
    fn bootstrap(&self, tr: &Transition, table: &EmbeddingTable) -> Result<f64> {
        if tr.terminal {
            return Ok(0.0);
        }
        match self.max_q(&tr.next_state, &tr.next_candidates, table)? {
            Some(q) => Ok(q),
            None => {
                log::debug!("transition into {} has no next candidates; treated as terminal", tr.action);
                Ok(0.0)
            }
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend(self.w1.iter());
        v.extend(self.b1.iter());
        v.extend(self.w2.iter());
        v.extend(self.b2.iter());
        v.extend(self.w3.iter());
        v.push(self.b3);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Domain(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for p in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
            .chain(self.w3.iter_mut())
        {
            *p = it.next().expect("length checked");
        }
        self.b3 = it.next().expect("length checked");
        Ok(())
    }

    /// Frozen scorer with the action block pre-applied to every embedding.
    pub fn scorer<'a>(&'a self, table: &'a EmbeddingTable) -> Result<QScorer<'a>> {
        if table.dim() != self.action_dim {
            return Err(Error::Domain(format!(
                "network expects {}-dim actions, table has {}",
                self.action_dim,
                table.dim()
            )));
        }
        Ok(QScorer {
            net: self,
            projected: table.as_array().dot(&self.action_block().t()),
        })
    }

    pub fn to_checkpoint(&self, meta: QMetadata) -> QCheckpoint {
        QCheckpoint {
            version: QCheckpoint::VERSION,
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            hidden: self.hidden(),
            params: self.to_flat(),
            meta,
        }
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Read-only Q evaluation with a cached per-node first-layer projection.
/// Valid only while the network parameters stay unchanged.
pub struct QScorer<'a> {
    net: &'a QNetwork,
    projected: Array2<f64>,
}

impl QScorer<'_> {
    pub fn network(&self) -> &QNetwork {
        self.net
    }

    pub fn q_values(&self, state: &StateVector, candidates: &[NodeId]) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        if state.dim() != self.net.state_dim {
            return Err(Error::Domain(format!(
                "network expects state {}, got {}",
                self.net.state_dim,
                state.dim()
            )));
        }
        let shared = self.net.state_pre(state);
        let mut pre1 = Array2::zeros((candidates.len(), shared.len()));
        for (mut row, &c) in pre1.rows_mut().into_iter().zip(candidates) {
            if c.index() >= self.projected.nrows() {
                return Err(Error::Domain(format!("node {c} has no embedding")));
            }
            row.assign(&self.projected.row(c.index()));
            row += &shared;
        }
        Ok(self.net.head_batch(pre1))
    }
}

/// Training metadata stored alongside the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QMetadata {
    pub gamma: f64,
    pub eta: f64,
    pub episodes_completed: usize,
    pub final_epsilon: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QCheckpoint {
    pub version: u32,
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: [usize; 2],
    pub params: Vec<f64>,
    pub meta: QMetadata,
}

impl QCheckpoint {
    pub const VERSION: u32 = 1;

    pub fn into_network(self) -> Result<QNetwork> {
        if self.version != Self::VERSION {
            return Err(Error::Validation(format!(
                "unsupported Q-network checkpoint version {}",
                self.version
            )));
        }
        if self.state_dim != StateVector::dim_for(self.action_dim) {
            return Err(Error::Validation(format!(
                "state dimension {} does not match action dimension {}",
                self.state_dim, self.action_dim
            )));
        }
        let mut q = QNetwork::zeros(self.action_dim, self.hidden);
        q.set_flat(&self.params).map_err(|e| Error::Validation(e.to_string()))?;
        if !q.is_finite() {
            return Err(Error::Validation("checkpoint has non-finite parameters".into()));
        }
        Ok(q)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
