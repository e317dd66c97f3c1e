use std::sync::Arc;

use ndarray::{Array2, ArrayView1};

use super::model::EmbeddingModel;
use super::train::Encoded;
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, NodeId};
use crate::oracle::FeatureTable;

/// Raw features and aggregated embeddings per node. An embedding exists only
/// for nodes whose own and neighbours' features are all known.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    h0: Arc<FeatureTable>,
    h: Array2<f64>,
    present: Vec<bool>,
}

impl EmbeddingTable {
    pub fn build(
        model: &EmbeddingModel,
        graph: &KnowledgeGraph,
        features: Arc<FeatureTable>,
    ) -> Result<Self> {
        if features.node_count() != graph.node_count() {
            return Err(Error::Validation(format!(
                "feature table has {} rows, graph has {} nodes",
                features.node_count(),
                graph.node_count()
            )));
        }
        if features.dim() != model.input_dim() {
            return Err(Error::Domain(format!(
                "features have dimension {}, model expects {}",
                features.dim(),
                model.input_dim()
            )));
        }
        let enc = Encoded::new(model, features.as_array());
        let n = graph.node_count();
        let mut h = Array2::zeros((n, model.output_dim()));
        let mut present = vec![false; n];
        let mut scratch = Vec::new();
        for v in graph.nodes() {
            let complete =
                features.has(v) && graph.nb(v).iter().all(|&u| features.has(u));
            if !complete {
                continue;
            }
            let out = enc.forward(model, v, graph.nb(v), &mut scratch);
            h.row_mut(v.index()).assign(&out.h);
            present[v.index()] = true;
        }
        Ok(Self { h0: features, h, present })
    }

    /// Table from precomputed embeddings (every row present).
    pub fn from_embeddings(h0: Arc<FeatureTable>, h: Array2<f64>) -> Self {
        let present = vec![true; h.nrows()];
        Self { h0, h, present }
    }

    pub fn dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn node_count(&self) -> usize {
        self.h.nrows()
    }

    pub fn h0(&self) -> &FeatureTable {
        &self.h0
    }

    pub fn has(&self, v: NodeId) -> bool {
        self.present.get(v.index()).copied().unwrap_or(false)
    }

    pub fn get(&self, v: NodeId) -> Result<ArrayView1<'_, f64>> {
        if self.has(v) {
            Ok(self.h.row(v.index()))
        } else {
            Err(Error::State(format!("no embedding for node {v}")))
        }
    }

    /// Rows for `nodes`, in order.
    pub fn gather(&self, nodes: &[NodeId]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((nodes.len(), self.dim()));
        for (row, &v) in out.outer_iter_mut().zip(nodes) {
            let mut row = row;
            row.assign(&self.get(v)?);
        }
        Ok(out)
    }

    /// Every row, absent rows zero.
    pub fn as_array(&self) -> &Array2<f64> {
        &self.h
    }
}
