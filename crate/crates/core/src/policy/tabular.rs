use std::collections::HashMap;

use super::Transition;
use crate::error::{Error, Result};
use crate::graph::NodeId;

/// Lookup-table Q with the state collapsed to the node the walker stands on.
///
/// Only used to check the update rule arithmetic exactly; the network is the
/// real model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TabularQ {
    values: HashMap<(NodeId, NodeId), f64>,
}

impl TabularQ {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, at: NodeId, action: NodeId) -> f64 {
        self.values.get(&(at, action)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, at: NodeId, action: NodeId, q: f64) {
        self.values.insert((at, action), q);
    }

    /// `Q(s,a) ← Q(s,a) + η (R + γ max_a' Q(s',a') − Q(s,a))`, with all
    /// errors computed before any entry changes. Returns the mean |TD error|.
    pub fn td_update(&mut self, batch: &[Transition], eta: f64, gamma: f64) -> Result<f64> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Domain(format!("discount {gamma} outside (0, 1]")));
        }
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut deltas = Vec::with_capacity(batch.len());
        for tr in batch {
            let next = if tr.terminal {
                0.0
            } else {
                tr.next_candidates
                    .iter()
                    .map(|&a| self.get(tr.action, a))
                    .reduce(f64::max)
                    .unwrap_or(0.0)
            };
            let err = tr.reward + gamma * next - self.get(tr.from, tr.action);
            deltas.push(((tr.from, tr.action), err));
        }
        let mean = deltas.iter().map(|(_, e)| e.abs()).sum::<f64>() / batch.len() as f64;
        for (key, err) in deltas {
            *self.values.entry(key).or_insert(0.0) += eta * err;
        }
        Ok(mean)
    }
}
