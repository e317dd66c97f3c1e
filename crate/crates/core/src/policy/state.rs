use std::collections::BTreeSet;

use ndarray::{concatenate, Array1, Axis};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, NodeId, NodeSet};

/// Fixed-size summary of a search: mean embedding of the tested nodes, mean
/// embedding of their untested neighbours, and two progress fractions.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub frontier_summary: Array1<f64>,
    pub candidate_summary: Array1<f64>,
    pub budget_frac: f64,
    pub step_frac: f64,
}

impl StateVector {
    pub fn dim_for(d_out: usize) -> usize {
        2 * d_out + 2
    }

    pub fn dim(&self) -> usize {
        self.frontier_summary.len() + self.candidate_summary.len() + 2
    }

    /// Flat network input `[frontier ‖ candidates ‖ budget_frac, step_frac]`.
    pub fn to_input(&self) -> Array1<f64> {
        let scalars = Array1::from(vec![self.budget_frac, self.step_frac]);
        concatenate(
            Axis(0),
            &[
                self.frontier_summary.view(),
                self.candidate_summary.view(),
                scalars.view(),
            ],
        )
        .expect("1-d concatenation")
    }
}

fn check_fracs(budget_frac: f64, step_frac: f64) -> Result<()> {
    for (name, f) in [("budget fraction", budget_frac), ("step fraction", step_frac)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Domain(format!("{name} {f} outside [0, 1]")));
        }
    }
    Ok(())
}

/// State of a search whose tested set is `frontier`.
pub fn build_state(
    frontier: &NodeSet,
    graph: &KnowledgeGraph,
    table: &EmbeddingTable,
    budget_frac: f64,
    step_frac: f64,
) -> Result<StateVector> {
    if frontier.is_empty() {
        return Err(Error::Domain("state needs at least one tested node".into()));
    }
    check_fracs(budget_frac, step_frac)?;
    let d = table.dim();
    let mut tested_sum = Array1::zeros(d);
    for v in frontier.iter() {
        tested_sum += &table.get(v)?;
    }
    let mut candidates = BTreeSet::new();
    for v in frontier.iter() {
        for &u in graph.neighbors(v)? {
            if !frontier.contains(u) {
                candidates.insert(u);
            }
        }
    }
    let mut cand_sum = Array1::zeros(d);
    for &u in &candidates {
        cand_sum += &table.get(u)?;
    }
    let cand_mean = if candidates.is_empty() {
        cand_sum
    } else {
        cand_sum / candidates.len() as f64
    };
    Ok(StateVector {
        frontier_summary: tested_sum / frontier.len() as f64,
        candidate_summary: cand_mean,
        budget_frac,
        step_frac,
    })
}

/// Incrementally maintained tested set and candidate frontier of one search
/// (a training try or an inference agent).
///
/// Candidates are the untested neighbours of every node tested so far, kept
/// sorted so that random picks and tie-breaks are reproducible.
#[derive(Clone, Debug)]
pub struct SearchFront {
    tested: NodeSet,
    candidates: BTreeSet<NodeId>,
    tested_sum: Array1<f64>,
    cand_sum: Array1<f64>,
    current: NodeId,
}

impl SearchFront {
    pub fn new(graph: &KnowledgeGraph, table: &EmbeddingTable, start: NodeId) -> Result<Self> {
        let mut front = Self {
            tested: NodeSet::new(graph.node_count()),
            candidates: BTreeSet::new(),
            tested_sum: Array1::zeros(table.dim()),
            cand_sum: Array1::zeros(table.dim()),
            current: start,
        };
        front.test(graph, table, start)?;
        Ok(front)
    }

    /// Mark `v` tested and make it the current node. Returns `false` if it
    /// had already been tested.
    pub fn test(&mut self, graph: &KnowledgeGraph, table: &EmbeddingTable, v: NodeId) -> Result<bool> {
        graph.check_node(v)?;
        self.current = v;
        if self.tested.contains(v) {
            return Ok(false);
        }
        self.tested.insert(v);
        self.tested_sum += &table.get(v)?;
        if self.candidates.remove(&v) {
            self.cand_sum -= &table.get(v)?;
        }
        for &u in graph.nb(v) {
            if !self.tested.contains(u) && self.candidates.insert(u) {
                self.cand_sum += &table.get(u)?;
            }
        }
        Ok(true)
    }

    pub fn current(&self) -> NodeId {
        self.current
    }

    pub fn tested(&self) -> &NodeSet {
        &self.tested
    }

    pub fn candidates(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.candidates.iter().copied()
    }

    pub fn candidate_vec(&self) -> Vec<NodeId> {
        self.candidates.iter().copied().collect()
    }

    pub fn has_candidates(&self) -> bool {
        !self.candidates.is_empty()
    }

    pub fn state(&self, budget_frac: f64, step_frac: f64) -> StateVector {
        let cand = if self.candidates.is_empty() {
            Array1::zeros(self.cand_sum.len())
        } else {
            &self.cand_sum / self.candidates.len() as f64
        };
        StateVector {
            frontier_summary: &self.tested_sum / self.tested.len() as f64,
            candidate_summary: cand,
            budget_frac: budget_frac.clamp(0.0, 1.0),
            step_frac: step_frac.clamp(0.0, 1.0),
        }
    }
}
