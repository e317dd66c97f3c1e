//! Multi-agent inference: several walkers share one oracle and a scheduler
//! that lets exactly one of them move per tick.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bench::RunMetrics;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, NodeId};
use crate::oracle::Oracle;
use crate::policy::{argmax_candidate, QScorer, SearchFront, StateVector};
use crate::rng::{self, SimRng};
use crate::trainer::RewardParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwarmConfig {
    pub n_agents: usize,
    pub q_limit: u64,
    /// Subtracted from the Q-value of a candidate another agent has tested.
    pub overlap_penalty: f64,
    /// Moves in a row after which the scheduler prefers another agent.
    pub max_consecutive: u32,
    /// Steps since the last restart that count as a full step budget in the
    /// state's step fraction.
    pub horizon: usize,
    /// Used for the efficiency ranking: β per discovery, −α per query.
    pub reward: RewardParams,
    pub seed: u64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            n_agents: 5,
            q_limit: 300,
            overlap_penalty: 1.0,
            max_consecutive: 5,
            horizon: 100,
            reward: RewardParams::default(),
            seed: 0,
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::Config("need at least one agent".into()));
        }
        if self.q_limit <= self.n_agents as u64 {
            return Err(Error::Config(format!(
                "query limit {} must exceed the number of agents {}",
                self.q_limit, self.n_agents
            )));
        }
        if !(self.overlap_penalty >= 0.0) {
            return Err(Error::Config("overlap penalty must be non-negative".into()));
        }
        if self.max_consecutive == 0 || self.horizon == 0 {
            return Err(Error::Config("max_consecutive and horizon must be positive".into()));
        }
        self.reward.validate()
    }
}

/// One walker. Its tested set is cumulative across restarts.
#[derive(Clone, Debug)]
pub struct AgentState {
    pub id: usize,
    pub front: SearchFront,
    pub consecutive_moves: u32,
    pub reward_accrued: f64,
    pub queries_used: u64,
    /// Moves since the last (re)start.
    pub steps: usize,
}

impl AgentState {
    pub fn current(&self) -> NodeId {
        self.front.current()
    }

    pub fn efficiency(&self) -> f64 {
        self.reward_accrued / self.queries_used.max(1) as f64
    }

    pub fn state(&self, budget_frac: f64, horizon: usize) -> StateVector {
        self.front.state(budget_frac, self.steps as f64 / horizon as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoundNode {
    pub node: NodeId,
    pub tick: u64,
    pub agent: usize,
}

/// Discovered biased nodes in discovery order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BiasNodeSet {
    pub found: Vec<FoundNode>,
}

impl BiasNodeSet {
    pub fn contains(&self, v: NodeId) -> bool {
        self.found.iter().any(|f| f.node == v)
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        self.found.iter().map(|f| f.node).collect()
    }

    pub fn len(&self) -> usize {
        self.found.len()
    }

    pub fn is_empty(&self) -> bool {
        self.found.is_empty()
    }
}

/// Scores the candidate moves of one agent.
pub trait MoveScorer {
    fn scores(&mut self, state: &StateVector, candidates: &[NodeId]) -> Result<Vec<f64>>;
}

impl MoveScorer for QScorer<'_> {
    fn scores(&mut self, state: &StateVector, candidates: &[NodeId]) -> Result<Vec<f64>> {
        self.q_values(state, candidates)
    }
}

/// Independent uniform scores: the argmax is a uniform random candidate.
pub struct RandomScorer(pub SimRng);

impl MoveScorer for RandomScorer {
    fn scores(&mut self, _state: &StateVector, candidates: &[NodeId]) -> Result<Vec<f64>> {
        Ok(candidates.iter().map(|_| self.0.random::<f64>()).collect())
    }
}

/// `Q − penalty · 1[candidate tested by another agent]`.
pub fn penalized_q(q: f64, tested_by_other: bool, overlap_penalty: f64) -> f64 {
    if tested_by_other {
        q - overlap_penalty
    } else {
        q
    }
}

/// An agent's best penalized move.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BestMove {
    pub agent: usize,
    pub node: NodeId,
    pub penalized_q: f64,
    /// Another agent already tested `node`.
    pub taken: bool,
}

/// Scheduler state shared by all agents.
pub struct AgentLinkHub {
    pub agents: Vec<AgentState>,
    /// Number of agents whose tested set contains each node.
    tested_by: Vec<u32>,
    last_mover: Option<usize>,
    overlap_penalty: f64,
    max_consecutive: u32,
}

impl AgentLinkHub {
    pub fn new(node_count: usize, overlap_penalty: f64, max_consecutive: u32) -> Self {
        Self {
            agents: Vec::new(),
            tested_by: vec![0; node_count],
            last_mover: None,
            overlap_penalty,
            max_consecutive,
        }
    }

    pub fn tested_by_any(&self, v: NodeId) -> bool {
        self.tested_by[v.index()] > 0
    }

    /// Record that `agent` tested `v` (a no-op if it already had).
    pub fn mark(&mut self, agent: usize, graph: &KnowledgeGraph, table: &EmbeddingTable, v: NodeId) -> Result<()> {
        if self.agents[agent].front.test(graph, table, v)? {
            self.tested_by[v.index()] += 1;
        }
        Ok(())
    }

    pub fn add_agent(&mut self, graph: &KnowledgeGraph, table: &EmbeddingTable, start: NodeId) -> Result<usize> {
        let id = self.agents.len();
        self.agents.push(AgentState {
            id,
            front: SearchFront::new(graph, table, start)?,
            consecutive_moves: 0,
            reward_accrued: 0.0,
            queries_used: 0,
            steps: 0,
        });
        self.tested_by[start.index()] += 1;
        Ok(id)
    }

    /// Best penalized move of every agent that has a candidate.
    pub fn best_moves(
        &self,
        scorer: &mut dyn MoveScorer,
        budget_frac: f64,
        horizon: usize,
    ) -> Result<Vec<BestMove>> {
        let mut out = Vec::with_capacity(self.agents.len());
        for a in &self.agents {
            let cands = a.front.candidate_vec();
            if cands.is_empty() {
                continue;
            }
            let q = scorer.scores(&a.state(budget_frac, horizon), &cands)?;
            let pen: Vec<f64> = cands
                .iter()
                .zip(&q)
                .map(|(&c, &q)| penalized_q(q, self.tested_by_any(c), self.overlap_penalty))
                .collect();
            let node = argmax_candidate(&cands, &pen).expect("non-empty candidates");
            let k = cands.iter().position(|&c| c == node).expect("chosen from candidates");
            out.push(BestMove {
                agent: a.id,
                node,
                penalized_q: pen[k],
                taken: self.tested_by_any(node),
            });
        }
        Ok(out)
    }

    /// Pick the mover for this tick from precomputed best moves; `None`
    /// when no agent has a candidate.
    ///
    /// The agent with the highest penalized Q moves unless it has moved
    /// `max_consecutive` times in a row or its best move is a node another
    /// agent already tested. Then the most efficient agent (reward per
    /// query) whose best move is untaken moves instead. If there is none,
    /// the top agent moves anyway; its target is already in the shared
    /// cache and costs nothing. Ties go to the smaller agent id.
    pub fn choose(&self, moves: &[BestMove]) -> Option<BestMove> {
        let top = *moves.iter().reduce(|best, m| {
            if m.penalized_q > best.penalized_q || (m.penalized_q == best.penalized_q && m.agent < best.agent) {
                m
            } else {
                best
            }
        })?;
        let saturated = self.agents[top.agent].consecutive_moves >= self.max_consecutive;
        if !saturated && !top.taken {
            return Some(top);
        }
        let mut ranked: Vec<&BestMove> = moves
            .iter()
            .filter(|m| !m.taken && !(saturated && m.agent == top.agent))
            .collect();
        ranked.sort_by(|a, b| {
            let (ea, eb) = (self.agents[a.agent].efficiency(), self.agents[b.agent].efficiency());
            eb.total_cmp(&ea).then(a.agent.cmp(&b.agent))
        });
        Some(ranked.first().map_or(top, |m| **m))
    }

    /// Bookkeeping for a scheduled move by `agent`.
    fn note_move(&mut self, agent: usize) {
        if self.last_mover != Some(agent) {
            if let Some(prev) = self.last_mover {
                self.agents[prev].consecutive_moves = 0;
            }
            self.agents[agent].consecutive_moves = 0;
        }
        self.agents[agent].consecutive_moves += 1;
        self.agents[agent].steps += 1;
        self.last_mover = Some(agent);
    }
}

/// One scheduler event. Starts and restarts have no `from`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u64,
    pub agent: usize,
    pub from: Option<NodeId>,
    pub to: NodeId,
    pub label: bool,
    pub penalized_q: Option<f64>,
    pub budget_left: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetExhausted,
    NoMove,
}

#[derive(Clone, Debug)]
pub struct InferenceRun {
    pub found: BiasNodeSet,
    pub metrics: RunMetrics,
    pub trace: Vec<TraceRecord>,
    pub stop: StopReason,
    /// Distinct nodes queried, in first-query order.
    pub queried: Vec<NodeId>,
}

#[derive(Serialize)]
struct FinalRecord<'a> {
    #[serde(rename = "final")]
    is_final: bool,
    stop: StopReason,
    found: &'a BiasNodeSet,
    metrics: &'a RunMetrics,
}

impl InferenceRun {
    /// Trace records followed by one summary record.
    pub fn write_trace(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_trace_to(&mut w).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_trace_to(&self, w: &mut impl Write) -> Result<()> {
        let io = |e| Error::io("<trace>", e);
        for r in &self.trace {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n").map_err(io)?;
        }
        let last = FinalRecord {
            is_final: true,
            stop: self.stop,
            found: &self.found,
            metrics: &self.metrics,
        };
        serde_json::to_writer(&mut *w, &last)?;
        w.write_all(b"\n").map_err(io)
    }
}

struct Run<'a, O: Oracle> {
    graph: &'a KnowledgeGraph,
    table: &'a EmbeddingTable,
    oracle: O,
    config: &'a SwarmConfig,
    hub: AgentLinkHub,
    queried: Vec<bool>,
    queried_order: Vec<NodeId>,
    found: BiasNodeSet,
    trace: Vec<TraceRecord>,
    tick: u64,
    rng: SimRng,
}

impl<O: Oracle> Run<'_, O> {
    fn budget_frac(&self) -> f64 {
        (self.oracle.spent() as f64 / self.oracle.limit() as f64).min(1.0)
    }

    /// Query `v`; `None` when the budget cannot pay for it.
    fn query(&mut self, v: NodeId) -> Result<Option<(bool, bool)>> {
        let fresh = !self.oracle.is_cached(v);
        match self.oracle.query(v) {
            Ok(r) => {
                if fresh {
                    self.queried[v.index()] = true;
                    self.queried_order.push(v);
                }
                Ok(Some((r.label, fresh)))
            }
            Err(Error::BudgetExhausted { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn random_unqueried(&mut self) -> Option<NodeId> {
        let open: Vec<usize> = (0..self.queried.len()).filter(|&i| !self.queried[i]).collect();
        if open.is_empty() {
            None
        } else {
            Some(NodeId::from(open[self.rng.random_range(0..open.len())]))
        }
    }

    fn account(&mut self, agent: usize, label: bool, fresh: bool, v: NodeId) {
        let p = self.config.reward;
        let a = &mut self.hub.agents[agent];
        if fresh {
            a.queries_used += 1;
            a.reward_accrued -= p.alpha;
        }
        if label && !self.found.contains(v) {
            a.reward_accrued += p.beta;
            self.found.found.push(FoundNode {
                node: v,
                tick: self.tick,
                agent,
            });
        }
    }

    fn record(&mut self, agent: usize, from: Option<NodeId>, to: NodeId, label: bool, pq: Option<f64>) {
        self.trace.push(TraceRecord {
            tick: self.tick,
            agent,
            from,
            to,
            label,
            penalized_q: pq,
            budget_left: self.oracle.remaining(),
        });
        self.tick += 1;
    }

    /// Start (or restart) an agent at random never-queried nodes until it
    /// stands on an unbiased one. `agent == None` creates a new agent.
    /// Returns `false` once the budget or the graph is exhausted.
    fn place(&mut self, mut agent: Option<usize>) -> Result<bool> {
        loop {
            let Some(start) = self.random_unqueried() else {
                return Ok(false);
            };
            let Some((label, fresh)) = self.query(start)? else {
                return Ok(false);
            };
            let id = match agent {
                Some(id) => {
                    self.hub.mark(id, self.graph, self.table, start)?;
                    id
                }
                None => self.hub.add_agent(self.graph, self.table, start)?,
            };
            agent = Some(id);
            {
                let a = &mut self.hub.agents[id];
                a.steps = 0;
                a.consecutive_moves = 0;
            }
            let new_bias = label && !self.found.contains(start);
            self.account(id, label, fresh, start);
            self.record(id, None, start, label, None);
            if !new_bias {
                return Ok(true);
            }
        }
    }
}

/// Run the swarm until the budget is spent or no agent can move.
pub fn infer<O: Oracle>(
    graph: &KnowledgeGraph,
    oracle: O,
    table: &EmbeddingTable,
    scorer: &mut dyn MoveScorer,
    config: &SwarmConfig,
) -> Result<InferenceRun> {
    config.validate()?;
    if oracle.limit() != config.q_limit {
        return Err(Error::Config(format!(
            "oracle budget {} differs from configured query limit {}",
            oracle.limit(),
            config.q_limit
        )));
    }
    let started = Instant::now();
    let mut run = Run {
        graph,
        table,
        oracle,
        config,
        hub: AgentLinkHub::new(graph.node_count(), config.overlap_penalty, config.max_consecutive),
        queried: vec![false; graph.node_count()],
        queried_order: Vec::new(),
        found: BiasNodeSet::default(),
        trace: Vec::new(),
        tick: 0,
        rng: rng::stream(config.seed, "swarm-starts"),
    };
    let mut stop = StopReason::NoMove;
    for _ in 0..config.n_agents {
        if !run.place(None)? {
            stop = StopReason::BudgetExhausted;
            break;
        }
    }
    if !run.hub.agents.is_empty() && stop == StopReason::NoMove {
        loop {
            if !run.oracle.can_afford_new() {
                stop = StopReason::BudgetExhausted;
                break;
            }
            let moves = run.hub.best_moves(scorer, run.budget_frac(), config.horizon)?;
            let Some(m) = run.hub.choose(&moves) else {
                stop = StopReason::NoMove;
                break;
            };
            let from = run.hub.agents[m.agent].current();
            let Some((label, fresh)) = run.query(m.node)? else {
                stop = StopReason::BudgetExhausted;
                break;
            };
            run.hub.note_move(m.agent);
            run.hub.mark(m.agent, graph, table, m.node)?;
            let new_bias = label && !run.found.contains(m.node);
            run.account(m.agent, label, fresh, m.node);
            run.record(m.agent, Some(from), m.node, label, Some(m.penalized_q));
            if new_bias {
                // A failed restart leaves the agent where it is; the budget
                // check above ends the run if that was the cause.
                run.place(Some(m.agent))?;
            }
        }
    }
    let metrics = RunMetrics::from_run(graph, &run.found, run.oracle.spent(), config.seed, started.elapsed());
    Ok(InferenceRun {
        found: run.found,
        metrics,
        trace: run.trace,
        stop,
        queried: run.queried_order,
    })
}
