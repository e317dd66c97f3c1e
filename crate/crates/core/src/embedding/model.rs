use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Which parts of the aggregation are active. The non-default modes are
/// the ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Learned attention over neighbours.
    #[default]
    Attention,
    /// Neighbour term with uniform weights `1/|nb(i)|`.
    Uniform,
    /// No neighbour term: `h = relu(W_r x)`, still trained.
    SelfOnly,
    /// No neighbour term and no training: `h = W_r x` at its initial value.
    RawProjection,
}

impl AggregationMode {
    pub fn uses_neighbors(self) -> bool {
        matches!(self, AggregationMode::Attention | AggregationMode::Uniform)
    }

    pub fn trains_encoder(self) -> bool {
        self != AggregationMode::RawProjection
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    pub mode: AggregationMode,
    /// Neighbour transform, `d_out × d`.
    pub w_h: Array2<f64>,
    /// Self transform, `d_out × d`.
    pub w_r: Array2<f64>,
    /// Attention vector `[a_self ‖ a_nb]`, length `2·d_out`.
    pub attn: Array1<f64>,
    pub clf_w: Array1<f64>,
    pub clf_b: f64,
}

#[inline]
pub(crate) fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax of `scores` into `out` (same length, non-empty).
pub(crate) fn softmax_into(scores: &[f64], out: &mut Vec<f64>) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(scores.iter().map(|&s| (s - max).exp()));
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|w| *w /= total);
}

impl EmbeddingModel {
    pub fn zeros(d: usize, d_out: usize, mode: AggregationMode) -> Self {
        Self {
            mode,
            w_h: Array2::zeros((d_out, d)),
            w_r: Array2::zeros((d_out, d)),
            attn: Array1::zeros(2 * d_out),
            clf_w: Array1::zeros(d_out),
            clf_b: 0.0,
        }
    }

    /// Every weight uniform in `[-1/√d, 1/√d]`, classifier bias zero.
    pub fn random(d: usize, d_out: usize, mode: AggregationMode, rng: &mut SimRng) -> Self {
        let bound = 1.0 / (d.max(1) as f64).sqrt();
        let mut draw = |shape: (usize, usize)| {
            Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
        };
        let w_h = draw((d_out, d));
        let w_r = draw((d_out, d));
        let attn = draw((1, 2 * d_out)).into_shape_with_order(2 * d_out).unwrap();
        let clf_w = draw((1, d_out)).into_shape_with_order(d_out).unwrap();
        Self {
            mode,
            w_h,
            w_r,
            attn,
            clf_w,
            clf_b: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_h.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w_h.nrows()
    }

    pub(crate) fn attn_self(&self) -> ArrayView1<'_, f64> {
        self.attn.slice(ndarray::s![..self.output_dim()])
    }

    pub(crate) fn attn_nb(&self) -> ArrayView1<'_, f64> {
        self.attn.slice(ndarray::s![self.output_dim()..])
    }

    fn check_input(&self, x: ArrayView1<'_, f64>, what: &str) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Domain(format!(
                "{what} has dimension {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Normalised neighbour weights, aligned with `neighbors`.
    ///
    /// Fails with a domain error on an empty neighbour list; callers then
    /// aggregate over the self term alone.
    pub fn attention_coeffs(
        &self,
        h0_self: ArrayView1<'_, f64>,
        neighbors: &[ArrayView1<'_, f64>],
    ) -> Result<Vec<f64>> {
        self.check_input(h0_self, "self features")?;
        for x in neighbors {
            self.check_input(*x, "neighbour features")?;
        }
        if neighbors.is_empty() {
            return Err(Error::Domain(
                "no neighbours to attend over; use self-only aggregation".into(),
            ));
        }
        if self.mode != AggregationMode::Attention {
            return Ok(vec![1.0 / neighbors.len() as f64; neighbors.len()]);
        }
        let self_score = self.attn_self().dot(&self.w_h.dot(&h0_self));
        let a_nb = self.attn_nb();
        let scores: Vec<f64> = neighbors
            .iter()
            .map(|x| leaky(self_score + a_nb.dot(&self.w_h.dot(x))))
            .collect();
        let mut weights = Vec::with_capacity(scores.len());
        softmax_into(&scores, &mut weights);
        Ok(weights)
    }

    /// Embedding of one node from its own and its neighbours' raw features.
    pub fn aggregate(
        &self,
        h0_self: ArrayView1<'_, f64>,
        neighbors: &[ArrayView1<'_, f64>],
    ) -> Result<Array1<f64>> {
        self.check_input(h0_self, "self features")?;
        let mut pre = self.w_r.dot(&h0_self);
        if self.mode == AggregationMode::RawProjection {
            return Ok(pre);
        }
        if self.mode.uses_neighbors() && !neighbors.is_empty() {
            let weights = self.attention_coeffs(h0_self, neighbors)?;
            for (w, x) in weights.iter().zip(neighbors) {
                pre.scaled_add(*w, &self.w_h.dot(x));
            }
        } else {
            for x in neighbors {
                self.check_input(*x, "neighbour features")?;
            }
        }
        pre.mapv_inplace(|v| v.max(0.0));
        Ok(pre)
    }

    /// Probability that an embedding belongs to a bias node.
    pub fn classify(&self, h: ArrayView1<'_, f64>) -> Result<f64> {
        if h.len() != self.output_dim() {
            return Err(Error::Domain(format!(
                "embedding has dimension {}, classifier expects {}",
                h.len(),
                self.output_dim()
            )));
        }
        Ok(sigmoid(self.clf_w.dot(&h) + self.clf_b))
    }

    pub fn is_finite(&self) -> bool {
        self.w_h.iter().all(|v| v.is_finite())
            && self.w_r.iter().all(|v| v.is_finite())
            && self.attn.iter().all(|v| v.is_finite())
            && self.clf_w.iter().all(|v| v.is_finite())
            && self.clf_b.is_finite()
    }

    /// All parameters flattened: `w_h`, `w_r`, `attn`, `clf_w`, `clf_b`.
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

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for v in self
            .w_h
            .iter_mut()
            .chain(self.w_r.iter_mut())
            .chain(self.attn.iter_mut())
            .chain(self.clf_w.iter_mut())
        {
            *v = it.next().expect("flat parameter vector too short");
        }
        self.clf_b = it.next().expect("flat parameter vector too short");
        assert!(it.next().is_none(), "flat parameter vector too long");
    }

    pub fn to_checkpoint(&self, seed: u64) -> EmbeddingCheckpoint {
        EmbeddingCheckpoint {
            version: EmbeddingCheckpoint::VERSION,
            mode: self.mode,
            d: self.input_dim(),
            d_out: self.output_dim(),
            seed,
            w_h: self.w_h.iter().copied().collect(),
            w_r: self.w_r.iter().copied().collect(),
            attn: self.attn.to_vec(),
            clf_w: self.clf_w.to_vec(),
            clf_b: self.clf_b,
        }
    }
}

/// On-disk model: shapes, row-major parameters and the training seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCheckpoint {
    pub version: u32,
    pub mode: AggregationMode,
    pub d: usize,
    pub d_out: usize,
    pub seed: u64,
    pub w_h: Vec<f64>,
    pub w_r: Vec<f64>,
    pub attn: Vec<f64>,
    pub clf_w: Vec<f64>,
    pub clf_b: f64,
}

impl EmbeddingCheckpoint {
    pub const VERSION: u32 = 1;

    pub fn into_model(self) -> Result<EmbeddingModel> {
        if self.version != Self::VERSION {
            return Err(Error::Validation(format!(
                "unsupported embedding checkpoint version {}",
                self.version
            )));
        }
        let shape_err = |what: &str| Error::Validation(format!("checkpoint {what} has wrong size"));
        let w_h = Array2::from_shape_vec((self.d_out, self.d), self.w_h).map_err(|_| shape_err("w_h"))?;
        let w_r = Array2::from_shape_vec((self.d_out, self.d), self.w_r).map_err(|_| shape_err("w_r"))?;
        if self.attn.len() != 2 * self.d_out {
            return Err(shape_err("attn"));
        }
        if self.clf_w.len() != self.d_out {
            return Err(shape_err("clf_w"));
        }
        Ok(EmbeddingModel {
            mode: self.mode,
            w_h,
            w_r,
            attn: Array1::from(self.attn),
            clf_w: Array1::from(self.clf_w),
            clf_b: self.clf_b,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;

    #[test]
    fn single_neighbor_gets_all_weight() {
        let mut rng = SimRng::seed_from_u64(1);
        let m = EmbeddingModel::random(3, 4, AggregationMode::Attention, &mut rng);
        let x = array![1.0, -2.0, 0.5];
        let n = array![0.3, 0.3, 0.3];
        assert_eq!(m.attention_coeffs(x.view(), &[n.view()]).unwrap(), vec![1.0]);
    }

    #[test]
    fn identical_neighbors_split_evenly() {
        let mut rng = SimRng::seed_from_u64(2);
        let m = EmbeddingModel::random(3, 4, AggregationMode::Attention, &mut rng);
        let x = array![1.0, -2.0, 0.5];
        let n = array![0.3, -0.7, 2.0];
        let w = m.attention_coeffs(x.view(), &[n.view(), n.view()]).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn empty_neighbor_list_is_signalled() {
        let m = EmbeddingModel::zeros(2, 2, AggregationMode::Attention);
        let x = array![1.0, 1.0];
        assert!(matches!(m.attention_coeffs(x.view(), &[]), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_model_gives_zero_embedding_and_even_odds() {
        let m = EmbeddingModel::zeros(3, 2, AggregationMode::Attention);
        let x = array![1.0, 2.0, 3.0];
        let h = m.aggregate(x.view(), &[x.view()]).unwrap();
        assert_eq!(h, array![0.0, 0.0]);
        assert_eq!(m.classify(h.view()).unwrap(), 0.5);
    }

    #[test]
    fn identity_self_transform_passes_input_through() {
        let mut m = EmbeddingModel::zeros(3, 3, AggregationMode::Attention);
        m.w_r = Array2::eye(3);
        let x = array![0.5, 0.0, 2.0];
        assert_eq!(m.aggregate(x.view(), &[]).unwrap(), x);
    }

    #[test]
    fn large_logit_saturates() {
        let mut m = EmbeddingModel::zeros(1, 1, AggregationMode::Attention);
        m.clf_b = 50.0;
        assert!(m.classify(array![0.0].view()).unwrap() >= 0.999);
        m.clf_b = -800.0;
        let p = m.classify(array![0.0].view()).unwrap();
        assert!(p.is_finite() && p >= 0.0);
    }

    #[test]
    fn dimension_mismatch_is_domain_error() {
        let m = EmbeddingModel::zeros(3, 2, AggregationMode::Attention);
        assert!(m.aggregate(array![1.0].view(), &[]).is_err());
        assert!(m.classify(array![1.0, 2.0, 3.0].view()).is_err());
    }

    #[test]
    fn uniform_mode_matches_attention_on_identical_neighbors() {
        let mut rng = SimRng::seed_from_u64(5);
        let att = EmbeddingModel::random(4, 3, AggregationMode::Attention, &mut rng);
        let uni = EmbeddingModel {
            mode: AggregationMode::Uniform,
            ..att.clone()
        };
        let x = array![0.1, 0.2, -0.3, 0.4];
        let n = array![1.0, 1.0, 0.0, -1.0];
        let a = att.aggregate(x.view(), &[n.view(), n.view(), n.view()]).unwrap();
        let u = uni.aggregate(x.view(), &[n.view(), n.view(), n.view()]).unwrap();
        for (p, q) in a.iter().zip(u.iter()) {
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = SimRng::seed_from_u64(9);
        let m = EmbeddingModel::random(3, 2, AggregationMode::Attention, &mut rng);
        let mut z = EmbeddingModel::zeros(3, 2, AggregationMode::Attention);
        z.set_flat(&m.to_flat());
        assert_eq!(z, m);
        let back = m.to_checkpoint(4).into_model().unwrap();
        assert_eq!(back, m);
    }
}
