//! State summaries, the Q-network and ε-greedy action selection.

mod qnet;
mod state;
mod tabular;

use rand::Rng;

pub use qnet::{QCheckpoint, QGradient, QMetadata, QNetwork, QScorer, DEFAULT_HIDDEN};
pub use state::{build_state, SearchFront, StateVector};
pub use tabular::TabularQ;

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::rng::SimRng;

pub const DEFAULT_EPS0: f64 = 1.0;
pub const DEFAULT_EPS_DECAY: f64 = 0.994;
pub const DEFAULT_EPS_FLOOR: f64 = 0.2;
pub const DEFAULT_GAMMA: f64 = 0.97;

/// One step of experience. The reward belongs to arriving at `action`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: StateVector,
    /// Node the walker moved from.
    pub from: NodeId,
    pub action: NodeId,
    pub reward: f64,
    pub next_state: StateVector,
    pub next_candidates: Vec<NodeId>,
    pub terminal: bool,
}

/// Exploration rate for an episode: `max(floor, eps0 · decay^episode)`.
pub fn epsilon_at(episode: u64, eps0: f64, decay: f64, floor: f64) -> f64 {
    let e = i32::try_from(episode).map_or(0.0, |e| eps0 * decay.powi(e));
    e.max(floor)
}

/// Index of the largest score; ties go to the smallest node id.
pub fn argmax_candidate(candidates: &[NodeId], scores: &[f64]) -> Option<NodeId> {
    candidates
        .iter()
        .zip(scores)
        .fold(None, |best: Option<(NodeId, f64)>, (&c, &q)| match best {
            Some((b, bq)) if bq > q || (bq == q && b < c) => Some((b, bq)),
            _ => Some((c, q)),
        })
        .map(|(c, _)| c)
}

/// ε-greedy choice among `candidates`; `None` when there is nothing to pick.
///
/// The exploration coin is always drawn, so the random stream advances the
/// same way regardless of the outcome.
pub fn select_action(
    qnet: &QNetwork,
    state: &StateVector,
    candidates: &[NodeId],
    table: &EmbeddingTable,
    eps: f64,
    rng: &mut SimRng,
) -> Result<Option<NodeId>> {
    select_with(candidates, eps, rng, || qnet.q_values(state, candidates, table))
}

/// [`select_action`] using a scorer with cached projections.
pub fn select_action_cached(
    scorer: &QScorer<'_>,
    state: &StateVector,
    candidates: &[NodeId],
    eps: f64,
    rng: &mut SimRng,
) -> Result<Option<NodeId>> {
    select_with(candidates, eps, rng, || scorer.q_values(state, candidates))
}

fn select_with(
    candidates: &[NodeId],
    eps: f64,
    rng: &mut SimRng,
    score: impl FnOnce() -> Result<Vec<f64>>,
) -> Result<Option<NodeId>> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Domain(format!("exploration rate {eps} outside [0, 1]")));
    }
    if candidates.is_empty() {
        return Ok(None);
    }
    let explore = rng.random::<f64>() < eps;
    if explore {
        return Ok(Some(candidates[rng.random_range(0..candidates.len())]));
    }
    let scores = score()?;
    Ok(argmax_candidate(candidates, &scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_schedule_endpoints() {
        assert_eq!(epsilon_at(0, 1.0, 0.994, 0.2), 1.0);
        assert_eq!(epsilon_at(268, 1.0, 0.994, 0.2), 0.2);
        assert!(epsilon_at(267, 1.0, 0.994, 0.2) > 0.2);
        assert_eq!(epsilon_at(u64::MAX, 1.0, 0.994, 0.2), 0.2);
    }

    #[test]
    fn argmax_prefers_smallest_id_on_ties() {
        let c = [NodeId(4), NodeId(2), NodeId(7)];
        assert_eq!(argmax_candidate(&c, &[1.0, 1.0, 0.5]), Some(NodeId(2)));
        assert_eq!(argmax_candidate(&c, &[1.0, 1.0, 1.5]), Some(NodeId(7)));
        assert_eq!(argmax_candidate(&[], &[]), None);
    }
}
