mod common;

use std::collections::HashSet;
use std::sync::Arc;

use common::*;
use kgbs_core::embedding::EmbeddingTable;
use kgbs_core::policy::{argmax_candidate, QNetwork, SearchFront, StateVector};
use kgbs_core::swarm::{infer, penalized_q, AgentLinkHub, MoveScorer, StopReason, SwarmConfig};
use kgbs_core::{FeatureTable, KnowledgeGraph, NodeId, Result, SimulatedOracle};
use proptest::prelude::*;
use rand::Rng;

/// Scores each candidate by a fixed per-node value.
struct Fixed(Vec<f64>);

impl MoveScorer for Fixed {
    fn scores(&mut self, _: &StateVector, candidates: &[NodeId]) -> Result<Vec<f64>> {
        Ok(candidates.iter().map(|c| self.0[c.index()]).collect())
    }
}

struct World {
    graph: KnowledgeGraph,
    labels: Arc<Vec<bool>>,
    features: Arc<FeatureTable>,
    table: EmbeddingTable,
}

impl World {
    fn new(graph: KnowledgeGraph, labels: Vec<bool>, seed: u64) -> Self {
        let n = graph.node_count();
        let mut r = rng(seed);
        let features = Arc::new(FeatureTable::from_array(random_matrix(n, 3, &mut r)));
        let table = EmbeddingTable::from_embeddings(features.clone(), random_matrix(n, 4, &mut r));
        let graph = graph.with_labels(labels.clone()).unwrap();
        Self { graph, labels: Arc::new(labels), features, table }
    }

    fn random(n: usize, p_bias: f64, seed: u64) -> Self {
        let mut r = rng(seed ^ 0x5eed);
        let g = random_graph(n, &mut r);
        let labels = (0..n).map(|_| r.random_bool(p_bias)).collect();
        Self::new(g, labels, seed)
    }

    fn oracle(&self, limit: u64) -> SimulatedOracle {
        SimulatedOracle::new(self.labels.clone(), self.features.clone(), limit).unwrap()
    }
}

fn edges(n: usize, e: &[(u32, u32)]) -> KnowledgeGraph {
    KnowledgeGraph::from_edges(n, e.iter().map(|&(a, b)| (NodeId(a), NodeId(b)))).unwrap()
}

#[test]
fn penalty_examples() {
    assert_eq!(penalized_q(0.8, false, 1.0), 0.8);
    assert!((penalized_q(0.8, true, 0.5) - 0.3).abs() < 1e-12);
    assert_eq!(penalized_q(0.8, true, 0.0), 0.8);
}

#[test]
fn hub_prefers_the_higher_value() {
    let w = World::new(edges(4, &[(0, 1), (2, 3)]), vec![false; 4], 1);
    let mut hub = AgentLinkHub::new(4, 1.0, 5);
    hub.add_agent(&w.graph, &w.table, NodeId(0)).unwrap();
    hub.add_agent(&w.graph, &w.table, NodeId(2)).unwrap();
    let moves = hub.best_moves(&mut Fixed(vec![0.0, 0.9, 0.0, 0.4]), 0.0, 10).unwrap();
    let m = hub.choose(&moves).unwrap();
    assert_eq!((m.agent, m.node), (0, NodeId(1)));
    assert!((m.penalized_q - 0.9).abs() < 1e-15);
}

/// Path 0–1–2–3; agent 0 sits on 0, agent 1 has tested 2 and 1.
fn four_node_hub(eff: [f64; 2]) -> (World, AgentLinkHub) {
    let w = World::new(edges(4, &[(0, 1), (1, 2), (2, 3)]), vec![false; 4], 2);
    let mut hub = AgentLinkHub::new(4, 0.5, 5);
    hub.add_agent(&w.graph, &w.table, NodeId(0)).unwrap();
    hub.add_agent(&w.graph, &w.table, NodeId(2)).unwrap();
    hub.mark(1, &w.graph, &w.table, NodeId(1)).unwrap();
    for (a, e) in hub.agents.iter_mut().zip(eff) {
        a.queries_used = 4;
        a.reward_accrued = 4.0 * e;
    }
    (w, hub)
}

#[test]
fn taken_top_move_falls_back_to_an_efficient_agent() {
    // Agent 0's only candidate (1) is taken; it still ranks first at 2.0 − 0.5.
    let (_, hub) = four_node_hub([0.5, 2.0]);
    let q = Fixed(vec![0.0, 2.0, 0.0, 0.1]);
    let moves = hub.best_moves(&mut { q }, 0.0, 10).unwrap();
    assert_eq!(moves.len(), 2);
    assert!(moves[0].taken && (moves[0].penalized_q - 1.5).abs() < 1e-12);
    assert_eq!((moves[1].node, moves[1].taken), (NodeId(3), false));
    let m = hub.choose(&moves).unwrap();
    assert_eq!((m.agent, m.node), (1, NodeId(3)));
    assert_eq!(hub.agents[m.agent].efficiency(), 2.0);

    // When the penalty already pushes it below, the other agent is simply top.
    let moves = hub.best_moves(&mut Fixed(vec![0.0, 0.3, 0.0, 0.1]), 0.0, 10).unwrap();
    assert_eq!(hub.choose(&moves).unwrap().agent, 1);
}

#[test]
fn saturated_top_agent_yields_to_the_most_efficient() {
    let w = World::new(edges(6, &[(0, 1), (2, 3), (4, 5)]), vec![false; 6], 3);
    let mut hub = AgentLinkHub::new(6, 1.0, 5);
    for s in [0, 2, 4] {
        hub.add_agent(&w.graph, &w.table, NodeId(s)).unwrap();
    }
    let q = vec![0.0, 0.9, 0.0, 0.5, 0.0, 0.1];
    hub.agents[0].consecutive_moves = 5;
    for (a, e) in [(1, 0.5), (2, 2.0)] {
        hub.agents[a].queries_used = 2;
        hub.agents[a].reward_accrued = 2.0 * e;
    }
    let moves = hub.best_moves(&mut Fixed(q.clone()), 0.0, 10).unwrap();
    assert_eq!(hub.choose(&moves).unwrap().agent, 2);

    // Equal efficiency: the smaller id wins.
    hub.agents[2].reward_accrued = 1.0;
    let moves = hub.best_moves(&mut Fixed(q.clone()), 0.0, 10).unwrap();
    assert_eq!(hub.choose(&moves).unwrap().agent, 1);

    // Below the limit the top agent keeps moving.
    hub.agents[0].consecutive_moves = 4;
    let moves = hub.best_moves(&mut Fixed(q), 0.0, 10).unwrap();
    assert_eq!(hub.choose(&moves).unwrap().agent, 0);
}

#[test]
fn exhausted_agents_give_no_move() {
    let w = World::new(edges(2, &[]), vec![false; 2], 4);
    let mut hub = AgentLinkHub::new(2, 1.0, 5);
    hub.add_agent(&w.graph, &w.table, NodeId(0)).unwrap();
    hub.add_agent(&w.graph, &w.table, NodeId(1)).unwrap();
    let moves = hub.best_moves(&mut Fixed(vec![0.0; 2]), 0.0, 10).unwrap();
    assert!(moves.is_empty());
    assert_eq!(hub.choose(&moves), None);

    // Two agents on an edge swap into each other's node for free, then stop.
    let w = World::new(edges(2, &[(0, 1)]), vec![false; 2], 4);
    let cfg = SwarmConfig { n_agents: 2, q_limit: 3, ..SwarmConfig::default() };
    let run = infer(&w.graph, w.oracle(3), &w.table, &mut Fixed(vec![0.0; 2]), &cfg).unwrap();
    assert_eq!(run.stop, StopReason::NoMove);
    assert_eq!(run.metrics.interactions, 2);
}

#[test]
fn zero_bias_graph_spends_the_whole_budget() {
    let w = World::new(random_graph(100, &mut rng(5)), vec![false; 100], 5);
    let q = QNetwork::random(4, [8, 8], &mut rng(6));
    let cfg = SwarmConfig { n_agents: 3, q_limit: 20, seed: 7, ..SwarmConfig::default() };
    let run = infer(&w.graph, w.oracle(20), &w.table, &mut q.scorer(&w.table).unwrap(), &cfg).unwrap();
    assert!(run.found.is_empty());
    assert_eq!(run.metrics.interactions, 20);
    assert_eq!(run.stop, StopReason::BudgetExhausted);
    assert_eq!(run.metrics.bncr, None);
    assert!(!run.metrics.step_loss.is_finite());
}

#[test]
fn perfect_scores_find_the_biased_leaf_of_a_star() {
    let g = edges(6, &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)]);
    let mut labels = vec![false; 6];
    labels[3] = true;
    let w = World::new(g, labels, 8);
    let perfect: Vec<f64> = w.labels.iter().map(|&y| if y { 1.0 } else { 0.0 }).collect();
    let mut from_center = 0;
    for seed in 0..30 {
        let cfg = SwarmConfig { n_agents: 1, q_limit: 6, seed, ..SwarmConfig::default() };
        let run = infer(&w.graph, w.oracle(6), &w.table, &mut Fixed(perfect.clone()), &cfg).unwrap();
        assert_eq!(run.found.nodes(), vec![NodeId(3)]);
        let hit = run.trace.iter().position(|r| r.to == NodeId(3)).unwrap();
        let moves_before = run.trace[..=hit].iter().filter(|r| r.from.is_some()).count();
        assert!(moves_before <= 5);
        if run.trace[0].to == NodeId(0) {
            from_center += 1;
            assert_eq!(moves_before, 1);
        }
    }
    assert!(from_center > 0);
}

#[test]
fn single_agent_is_plain_greedy_inference() {
    let w = World::random(80, 0.08, 9);
    let q = QNetwork::random(4, [8, 8], &mut rng(10));
    for seed in 0..5 {
        let base = SwarmConfig { n_agents: 1, q_limit: 60, seed, ..SwarmConfig::default() };
        let run = infer(&w.graph, w.oracle(60), &w.table, &mut q.scorer(&w.table).unwrap(), &base).unwrap();
        let huge = SwarmConfig { overlap_penalty: 1e9, ..base.clone() };
        let again = infer(&w.graph, w.oracle(60), &w.table, &mut q.scorer(&w.table).unwrap(), &huge).unwrap();
        assert_eq!(run.trace, again.trace);
        assert!(run.trace.iter().all(|r| r.agent == 0));

        // Replay: every move is the argmax of Q over the cumulative frontier.
        let scorer = q.scorer(&w.table).unwrap();
        let mut front: Option<SearchFront> = None;
        let mut steps = 0usize;
        let mut budget_left = base.q_limit;
        for r in &run.trace {
            match r.from {
                None => {
                    match front.as_mut() {
                        None => front = Some(SearchFront::new(&w.graph, &w.table, r.to).unwrap()),
                        Some(f) => {
                            f.test(&w.graph, &w.table, r.to).unwrap();
                        }
                    }
                    steps = 0;
                }
                Some(from) => {
                    let f = front.as_mut().unwrap();
                    assert_eq!(f.current(), from);
                    let frac = (base.q_limit - budget_left) as f64 / base.q_limit as f64;
                    let state = f.state(frac, steps as f64 / base.horizon as f64);
                    let cands = f.candidate_vec();
                    let scores = scorer.q_values(&state, &cands).unwrap();
                    assert_eq!(argmax_candidate(&cands, &scores), Some(r.to));
                    f.test(&w.graph, &w.table, r.to).unwrap();
                    steps += 1;
                }
            }
            budget_left = r.budget_left;
        }
    }
}

#[test]
fn same_seed_gives_byte_identical_traces() {
    let w = World::random(120, 0.1, 11);
    let q = QNetwork::random(4, [8, 8], &mut rng(12));
    let cfg = SwarmConfig { n_agents: 4, q_limit: 70, seed: 13, ..SwarmConfig::default() };
    let run = || infer(&w.graph, w.oracle(70), &w.table, &mut q.scorer(&w.table).unwrap(), &cfg).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.found, b.found);
    assert_eq!(
        serde_json::to_string(&a.metrics).unwrap(),
        serde_json::to_string(&b.metrics).unwrap()
    );
    let (mut ba, mut bb) = (Vec::new(), Vec::new());
    a.write_trace_to(&mut ba).unwrap();
    b.write_trace_to(&mut bb).unwrap();
    assert_eq!(ba, bb);
    let t = tempfile::tempdir().unwrap();
    a.write_trace(&t.path().join("trace.jsonl")).unwrap();
    assert_eq!(std::fs::read(t.path().join("trace.jsonl")).unwrap(), ba);
}

#[test]
fn invalid_configs_are_rejected() {
    let w = World::random(10, 0.1, 1);
    let mut f = Fixed(vec![0.0; 10]);
    let bad = SwarmConfig { n_agents: 3, q_limit: 3, ..SwarmConfig::default() };
    assert!(infer(&w.graph, w.oracle(3), &w.table, &mut f, &bad).is_err());
    let bad = SwarmConfig { n_agents: 0, q_limit: 3, ..SwarmConfig::default() };
    assert!(infer(&w.graph, w.oracle(3), &w.table, &mut f, &bad).is_err());
    let mismatch = SwarmConfig { n_agents: 1, q_limit: 5, ..SwarmConfig::default() };
    assert!(infer(&w.graph, w.oracle(6), &w.table, &mut f, &mismatch).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn huge_penalty_keeps_agents_apart(seed in any::<u64>(), n in 10usize..80, agents in 2usize..6) {
        let w = World::random(n, 0.1, seed);
        let q = QNetwork::random(4, [6, 6], &mut rng(seed));
        let limit = (n as u64).max(agents as u64 + 1);
        let cfg = SwarmConfig { n_agents: agents, q_limit: limit, overlap_penalty: 1e9, seed, ..SwarmConfig::default() };
        let run = infer(&w.graph, w.oracle(limit), &w.table, &mut q.scorer(&w.table).unwrap(), &cfg).unwrap();
        let mut tested: Vec<HashSet<NodeId>> = vec![HashSet::new(); agents];
        for r in &run.trace {
            if r.from.is_some() {
                let others = |v: &NodeId| tested.iter().enumerate().any(|(i, s)| i != r.agent && s.contains(v));
                if others(&r.to) {
                    let mine = &tested[r.agent];
                    let open: Vec<NodeId> = mine.iter()
                        .flat_map(|&v| w.graph.neighbors(v).unwrap().iter().copied())
                        .filter(|u| !mine.contains(u))
                        .collect();
                    prop_assert!(open.iter().all(others), "agent {} re-entered {:?} with free candidates", r.agent, r.to);
                }
            }
            tested[r.agent].insert(r.to);
        }
    }

    #[test]
    fn budget_is_exact_and_discoveries_are_real(seed in any::<u64>(), n in 10usize..80, agents in 1usize..6, cost in 1u64..3) {
        let w = World::random(n, 0.15, seed);
        let q = QNetwork::random(4, [6, 6], &mut rng(seed));
        let limit = cost * (n as u64 / 2) + agents as u64 + 1;
        let cfg = SwarmConfig { n_agents: agents, q_limit: limit, seed, ..SwarmConfig::default() };
        let oracle = w.oracle(limit).with_per_node_cost(cost);
        let run = infer(&w.graph, oracle, &w.table, &mut q.scorer(&w.table).unwrap(), &cfg).unwrap();
        let distinct: HashSet<NodeId> = run.trace.iter().map(|r| r.to).collect();
        prop_assert_eq!(distinct.len(), run.queried.len());
        prop_assert_eq!(run.metrics.interactions, cost * distinct.len() as u64);
        prop_assert!(run.metrics.interactions <= limit);
        let found: HashSet<NodeId> = run.found.nodes().into_iter().collect();
        prop_assert_eq!(found.len(), run.found.len());
        for v in &found {
            prop_assert!(w.labels[v.index()]);
        }
        let hits: HashSet<NodeId> = distinct.iter().copied().filter(|v| w.labels[v.index()]).collect();
        prop_assert_eq!(found, hits);
        if let Some(b) = run.metrics.bncr {
            prop_assert!((0.0..=1.0).contains(&b));
        }
        // One scheduler event per tick.
        for (i, r) in run.trace.iter().enumerate() {
            prop_assert_eq!(r.tick, i as u64);
        }
    }
}
