//! Episodic single-walker training of the Q-network against a simulated
//! oracle.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::{Distance, KnowledgeGraph, NodeId};
use crate::oracle::Oracle;
use crate::policy::{
    epsilon_at, select_action_cached, QMetadata, QNetwork, QScorer, SearchFront, Transition, DEFAULT_EPS0,
    DEFAULT_EPS_DECAY, DEFAULT_EPS_FLOOR, DEFAULT_GAMMA, DEFAULT_HIDDEN,
};
use crate::rng::{self, SimRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    /// Reward per newly tested biased node.
    pub beta: f64,
    /// Cost per newly tested node.
    pub alpha: f64,
    /// Weight of the `1/(dist+1)` proximity bonus.
    pub w: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        // w/2 ≤ alpha: a step that finds nothing never earns a net reward,
        // so hovering next to a biased node cannot beat stepping onto it.
        Self {
            beta: 1.0,
            alpha: 0.1,
            w: 0.2,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.alpha >= 0.0 && self.w >= 0.0) {
            return Err(Error::Config(format!(
                "reward needs beta > 0, alpha ≥ 0, w ≥ 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// `β·#biased − α·#new + w/(dist+1)`; the bonus vanishes when no untested
/// biased node is reachable.
pub fn step_reward(newly_tested: &[bool], dist: Distance, params: &RewardParams) -> f64 {
    let hits = newly_tested.iter().filter(|&&y| y).count() as f64;
    let bonus = match dist {
        Distance::Finite(d) => params.w / (f64::from(d) + 1.0),
        Distance::Infinite => 0.0,
    };
    params.beta * hits - params.alpha * newly_tested.len() as f64 + bonus
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_episodes: usize,
    pub n_tries: usize,
    pub max_steps: usize,
    pub eps0: f64,
    pub decay: f64,
    pub eps_floor: f64,
    pub eta: f64,
    pub gamma: f64,
    pub reward: RewardParams,
    pub hidden: [usize; 2],
    /// Oracle budget per episode; unlimited when absent.
    pub query_limit: Option<u64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_episodes: 600,
            n_tries: 200,
            max_steps: 2000,
            eps0: DEFAULT_EPS0,
            decay: DEFAULT_EPS_DECAY,
            eps_floor: DEFAULT_EPS_FLOOR,
            eta: 5e-4,
            gamma: DEFAULT_GAMMA,
            reward: RewardParams::default(),
            hidden: [DEFAULT_HIDDEN, DEFAULT_HIDDEN],
            query_limit: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_episodes == 0 || self.n_tries == 0 || self.max_steps == 0 {
            return Err(Error::Config("episode, try and step counts must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eps0)
            || !(0.0..=1.0).contains(&self.eps_floor)
            || !(self.decay > 0.0 && self.decay <= 1.0)
        {
            return Err(Error::Config("exploration schedule parameters outside [0, 1]".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.eta)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("discount {} outside (0, 1]", self.gamma)));
        }
        self.reward.validate()
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        epsilon_at(episode as u64, self.eps0, self.decay, self.eps_floor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TryOutcome {
    Success,
    Truncated,
    DeadEnd,
    OutOfBudget,
}

/// One walk from a random start.
#[derive(Clone, Debug, PartialEq)]
pub struct TryTrace {
    pub start: NodeId,
    pub start_label: bool,
    /// Reward for testing the start node; not part of any transition since
    /// no action led there.
    pub start_reward: f64,
    pub moves: Vec<NodeId>,
    pub rewards: Vec<f64>,
    pub outcome: TryOutcome,
}

impl TryTrace {
    pub fn steps(&self) -> usize {
        self.moves.len()
    }

    /// Undiscounted return including the start query.
    pub fn total_return(&self) -> f64 {
        self.start_reward + self.rewards.iter().sum::<f64>()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeStats {
    pub tries: usize,
    pub successes: usize,
    pub total_steps: usize,
    pub queries: u64,
    pub budget_exhausted: bool,
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub transitions: Vec<Transition>,
    pub tries: Vec<TryTrace>,
    pub stats: EpisodeStats,
}

/// Query `v`, mapping an exhausted budget to `None`.
fn query_label(oracle: &mut impl Oracle, v: NodeId) -> Result<Option<bool>> {
    match oracle.query(v) {
        Ok(r) => Ok(Some(r.label)),
        Err(Error::BudgetExhausted { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Collect one episode of `n_tries` walks with a frozen network.
pub fn run_episode(
    graph: &KnowledgeGraph,
    oracle: &mut impl Oracle,
    table: &EmbeddingTable,
    scorer: &QScorer<'_>,
    episode: usize,
    config: &TrainConfig,
    rng: &mut SimRng,
) -> Result<EpisodeOutcome> {
    if graph.node_count() == 0 {
        return Err(Error::Domain("cannot train on an empty graph".into()));
    }
    let eps = config.epsilon(episode);
    let spent_before = oracle.spent();
    let mut out = EpisodeOutcome {
        transitions: Vec::new(),
        tries: Vec::new(),
        stats: EpisodeStats::default(),
    };
    let try_budget = (config.max_steps + 1) as f64;
    let step_frac = |t: usize| t as f64 / config.max_steps as f64;

    'tries: for _ in 0..config.n_tries {
        let start = NodeId::from(rng.random_range(0..graph.node_count()));
        let Some(start_label) = query_label(oracle, start)? else {
            out.stats.budget_exhausted = true;
            break;
        };
        out.stats.tries += 1;
        let mut front = SearchFront::new(graph, table, start)?;
        let start_dist = graph.dist_to_nearest_untested_bias(start, front.tested())?;
        let mut trace = TryTrace {
            start,
            start_label,
            start_reward: step_reward(&[start_label], start_dist, &config.reward),
            moves: Vec::new(),
            rewards: Vec::new(),
            outcome: TryOutcome::Success,
        };
        if start_label {
            out.stats.successes += 1;
            out.tries.push(trace);
            continue;
        }
        let mut candidates = front.candidate_vec();
        for t in 0..config.max_steps {
            let state = front.state(front.tested().len() as f64 / try_budget, step_frac(t));
            let Some(action) = select_action_cached(scorer, &state, &candidates, eps, rng)? else {
                trace.outcome = TryOutcome::DeadEnd;
                break;
            };
            let Some(label) = query_label(oracle, action)? else {
                trace.outcome = TryOutcome::OutOfBudget;
                out.stats.budget_exhausted = true;
                out.stats.total_steps += trace.steps();
                out.tries.push(trace);
                break 'tries;
            };
            let from = front.current();
            front.test(graph, table, action)?;
            let dist = graph.dist_to_nearest_untested_bias(action, front.tested())?;
            let reward = step_reward(&[label], dist, &config.reward);
            let next_candidates = front.candidate_vec();
            let truncated = t + 1 == config.max_steps;
            out.transitions.push(Transition {
                state,
                from,
                action,
                reward,
                next_state: front.state(front.tested().len() as f64 / try_budget, step_frac(t + 1)),
                next_candidates: next_candidates.clone(),
                terminal: label || truncated,
            });
            trace.moves.push(action);
            trace.rewards.push(reward);
            if label {
                out.stats.successes += 1;
                break;
            }
            if truncated {
                trace.outcome = TryOutcome::Truncated;
            }
            candidates = next_candidates;
        }
        out.stats.total_steps += trace.steps();
        out.tries.push(trace);
    }
    out.stats.queries = oracle.spent() - spent_before;
    Ok(out)
}

/// Per-episode training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub epsilon: f64,
    pub success_rate: f64,
    /// Mean walk length; unsuccessful walks count with their full length.
    pub mean_steps_to_bias: f64,
    pub queries: u64,
    pub transitions: usize,
    pub mean_td_error: f64,
    pub budget_exhausted: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub qnet: QNetwork,
    pub log: Vec<EpisodeLog>,
}

impl TrainOutcome {
    pub fn metadata(&self, config: &TrainConfig) -> QMetadata {
        QMetadata {
            gamma: config.gamma,
            eta: config.eta,
            episodes_completed: self.log.len(),
            final_epsilon: self.log.last().map_or(config.eps0, |l| l.epsilon),
            seed: config.seed,
        }
    }
}

/// Train a fresh network: collect an episode with the current parameters,
/// then replay its transitions in order, one TD step each.
///
/// `oracle_factory` is called once per episode and should return an oracle
/// with an empty cache.
pub fn train<O: Oracle>(
    graph: &KnowledgeGraph,
    mut oracle_factory: impl FnMut(usize) -> O,
    table: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if graph.labels().is_none() {
        return Err(Error::State("training needs a labelled graph".into()));
    }
    let mut qnet = QNetwork::random(table.dim(), config.hidden, &mut rng::stream(config.seed, "qnet-init"));
    let mut log = Vec::with_capacity(config.n_episodes);
    for episode in 0..config.n_episodes {
        let mut oracle = oracle_factory(episode);
        let mut ep_rng = rng::indexed_stream(config.seed, "train-episode", &[episode as u64]);
        let outcome = {
            let scorer = qnet.scorer(table)?;
            run_episode(graph, &mut oracle, table, &scorer, episode, config, &mut ep_rng)?
        };
        let mut td_sum = 0.0;
        for tr in &outcome.transitions {
            td_sum += qnet
                .td_update(std::slice::from_ref(tr), table, config.eta, config.gamma)
                .map_err(|e| match e {
                    Error::Diverged { detail, .. } => Error::Diverged {
                        stage: "q-network training",
                        at: format!("episode {episode}"),
                        detail,
                    },
                    other => other,
                })?;
        }
        let s = &outcome.stats;
        let n_tr = outcome.transitions.len();
        let record = EpisodeLog {
            episode,
            epsilon: config.epsilon(episode),
            success_rate: ratio(s.successes as f64, s.tries),
            mean_steps_to_bias: ratio(s.total_steps as f64, s.tries),
            queries: s.queries,
            transitions: n_tr,
            mean_td_error: ratio(td_sum, n_tr),
            budget_exhausted: s.budget_exhausted,
        };
        if !record.mean_td_error.is_finite() {
            return Err(Error::Diverged {
                stage: "q-network training",
                at: format!("episode {episode}"),
                detail: "non-finite TD error".into(),
            });
        }
        if (episode + 1) % 25 == 0 || episode + 1 == config.n_episodes {
            log::info!(
                "episode {}: success {:.2}, steps {:.1}, td {:.4}",
                episode,
                record.success_rate,
                record.mean_steps_to_bias,
                record.mean_td_error
            );
        }
        log.push(record);
    }
    Ok(TrainOutcome { qnet, log })
}

fn ratio(num: f64, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
