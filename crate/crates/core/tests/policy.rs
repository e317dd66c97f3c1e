mod common;

use std::sync::Arc;

use common::*;
use kgbs_core::embedding::EmbeddingTable;
use kgbs_core::policy::{
    build_state, epsilon_at, select_action, QNetwork, StateVector, TabularQ, Transition, DEFAULT_EPS0,
    DEFAULT_EPS_DECAY, DEFAULT_EPS_FLOOR,
};
use kgbs_core::{FeatureTable, NodeId, NodeSet};
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

fn eps(e: u64) -> f64 {
    epsilon_at(e, DEFAULT_EPS0, DEFAULT_EPS_DECAY, DEFAULT_EPS_FLOOR)
}

#[test]
fn epsilon_examples() {
    assert_eq!(eps(0), 1.0);
    assert!((eps(100) - 0.994f64.powi(100)).abs() < 1e-12);
    assert!((eps(100) - 0.5478).abs() < 1e-4);
    assert_eq!(eps(268), 0.2);
    assert!(eps(267) > 0.2);
    assert_eq!(eps(u64::MAX), 0.2);
}

/// A table of one-dimensional embeddings `h(v) = values[v]`.
fn scalar_table(values: &[f64]) -> EmbeddingTable {
    let n = values.len();
    let h = Array2::from_shape_vec((n, 1), values.to_vec()).unwrap();
    EmbeddingTable::from_embeddings(Arc::new(FeatureTable::from_array(Array2::zeros((n, 1)))), h)
}

/// Q(s, a) = relu(h(a)) through one hidden unit per layer.
fn pass_through_net() -> QNetwork {
    let mut q = QNetwork::zeros(1, [1, 1]);
    // Input layout: [frontier, candidates, budget, step, action].
    q.w1[[0, 4]] = 1.0;
    q.w2[[0, 0]] = 1.0;
    q.w3[0] = 1.0;
    q
}

fn state1() -> StateVector {
    StateVector {
        frontier_summary: array![0.0],
        candidate_summary: array![0.0],
        budget_frac: 0.0,
        step_frac: 0.0,
    }
}

#[test]
fn greedy_picks_the_higher_hand_set_value() {
    let table = scalar_table(&[0.0, 0.3, 0.7]);
    let q = pass_through_net();
    let s = state1();
    let cands = [NodeId(1), NodeId(2)];
    assert!((q.q_value(&s, table.get(NodeId(1)).unwrap()).unwrap() - 0.3).abs() < 1e-15);
    assert!((q.q_value(&s, table.get(NodeId(2)).unwrap()).unwrap() - 0.7).abs() < 1e-15);
    let got = select_action(&q, &s, &cands, &table, 0.0, &mut rng(1)).unwrap();
    assert_eq!(got, Some(NodeId(2)));
    let got = select_action(&q, &s, &[NodeId(1)], &table, 0.0, &mut rng(1)).unwrap();
    assert_eq!(got, Some(NodeId(1)));
    assert_eq!(select_action(&q, &s, &[], &table, 0.0, &mut rng(1)).unwrap(), None);
}

#[test]
fn full_exploration_is_reproducible() {
    let table = scalar_table(&[0.0; 10]);
    let q = QNetwork::zeros(1, [2, 2]);
    let cands: Vec<NodeId> = (0..10).map(NodeId).collect();
    let picks = |seed| {
        let mut r = rng(seed);
        (0..20)
            .map(|_| select_action(&q, &state1(), &cands, &table, 1.0, &mut r).unwrap().unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(picks(3), picks(3));
    assert_ne!(picks(3), picks(4));
}

#[test]
fn tabular_examples() {
    let tr = |reward: f64, terminal: bool| Transition {
        state: state1(),
        from: NodeId(0),
        action: NodeId(1),
        reward,
        next_state: state1(),
        next_candidates: vec![NodeId(2)],
        terminal,
    };
    let mut t = TabularQ::new();
    t.td_update(&[tr(1.0, false)], 0.1, 0.97).unwrap();
    assert!((t.get(NodeId(0), NodeId(1)) - 0.1).abs() < 1e-12);

    let mut t = TabularQ::new();
    t.td_update(&[tr(0.0, true)], 0.1, 0.97).unwrap();
    assert_eq!(t.get(NodeId(0), NodeId(1)), 0.0);
}

fn random_transition(d_out: usize, n: usize, r: &mut kgbs_core::rng::SimRng) -> Transition {
    Transition {
        state: random_state(d_out, r),
        from: NodeId::from(r.random_range(0..n)),
        action: NodeId::from(r.random_range(0..n)),
        reward: r.random_range(-1.0..1.0),
        next_state: random_state(d_out, r),
        next_candidates: (0..3).map(|_| NodeId::from(r.random_range(0..n))).collect(),
        terminal: r.random_bool(0.3),
    }
}

fn random_table(n: usize, d_out: usize, r: &mut kgbs_core::rng::SimRng) -> EmbeddingTable {
    EmbeddingTable::from_embeddings(
        Arc::new(FeatureTable::from_array(Array2::zeros((n, 1)))),
        random_matrix(n, d_out, r),
    )
}

#[test]
fn duplicated_transition_equals_doubled_step() {
    let mut r = rng(8);
    for _ in 0..10 {
        let table = random_table(6, 3, &mut r);
        let q0 = QNetwork::random(3, [5, 4], &mut r);
        let tr = random_transition(3, 6, &mut r);
        let mut a = q0.clone();
        a.td_update(&[tr.clone(), tr.clone()], &table, 0.01, 0.97).unwrap();
        let mut b = q0.clone();
        b.td_update(std::slice::from_ref(&tr), &table, 0.02, 0.97).unwrap();
        for (x, y) in a.to_flat().iter().zip(b.to_flat()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn terminal_zero_reward_at_zero_value_leaves_network_unchanged() {
    let mut r = rng(2);
    let table = random_table(4, 2, &mut r);
    let mut q = QNetwork::zeros(2, [3, 3]);
    let mut tr = random_transition(2, 4, &mut r);
    tr.reward = 0.0;
    tr.terminal = true;
    let before = q.to_flat();
    assert_eq!(q.td_update(&[tr], &table, 0.1, 0.97).unwrap(), 0.0);
    assert_eq!(q.to_flat(), before);
}

#[test]
fn td_update_reports_error_before_the_step() {
    let table = scalar_table(&[0.0, 0.5, 0.2]);
    let mut q = pass_through_net();
    let tr = Transition {
        state: state1(),
        from: NodeId(0),
        action: NodeId(1),
        reward: 1.0,
        next_state: state1(),
        next_candidates: vec![NodeId(1), NodeId(2)],
        terminal: false,
    };
    // target = 1 + 0.9·max(0.5, 0.2); current = 0.5
    let err = q.td_update(&[tr], &table, 0.0, 0.9).unwrap();
    assert!((err - (1.0 + 0.45 - 0.5)).abs() < 1e-12);
}

#[test]
fn empty_next_candidates_count_as_dead_end() {
    let table = scalar_table(&[0.0, 0.5]);
    let mut q = pass_through_net();
    let tr = Transition {
        state: state1(),
        from: NodeId(0),
        action: NodeId(1),
        reward: 1.0,
        next_state: state1(),
        next_candidates: vec![],
        terminal: false,
    };
    let err = q.td_update(&[tr], &table, 0.0, 0.9).unwrap();
    assert!((err - 0.5).abs() < 1e-12);
}

#[test]
fn qnet_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let err = qnet_fd_max_rel_err(seed);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

proptest! {
    #[test]
    fn epsilon_is_monotone_and_bounded(e in 0u64..100_000, de in 0u64..1000) {
        let (a, b) = (eps(e), eps(e + de));
        prop_assert!(b <= a);
        prop_assert!((DEFAULT_EPS_FLOOR..=DEFAULT_EPS0).contains(&a));
    }

    #[test]
    fn greedy_choice_is_pure_and_shift_invariant(seed in any::<u64>(), shift in -5.0f64..5.0, k in 1usize..8) {
        let mut r = rng(seed);
        let table = random_table(10, 3, &mut r);
        let q = QNetwork::random(3, [6, 6], &mut r);
        let s = random_state(3, &mut r);
        let cands: Vec<NodeId> = (0..k).map(|_| NodeId::from(r.random_range(0..10))).collect();
        let a = select_action(&q, &s, &cands, &table, 0.0, &mut rng(1)).unwrap();
        let b = select_action(&q, &s, &cands, &table, 0.0, &mut rng(999)).unwrap();
        prop_assert_eq!(a, b);
        let mut shifted = q.clone();
        shifted.b3 += shift;
        let c = select_action(&shifted, &s, &cands, &table, 0.0, &mut rng(1)).unwrap();
        prop_assert_eq!(a, c);
    }

    #[test]
    fn tabular_update_is_the_recurrence(
        q in -5.0f64..5.0, reward in -2.0f64..2.0, gamma in 0.01f64..=1.0, eta in 0.0f64..1.0,
        next in prop::collection::vec(-5.0f64..5.0, 0..4), terminal in any::<bool>(),
    ) {
        let mut t = TabularQ::new();
        t.set(NodeId(0), NodeId(1), q);
        let cands: Vec<NodeId> = (0..next.len()).map(|i| NodeId::from(10 + i)).collect();
        for (c, v) in cands.iter().zip(&next) {
            t.set(NodeId(1), *c, *v);
        }
        let tr = Transition {
            state: state1(), from: NodeId(0), action: NodeId(1), reward,
            next_state: state1(), next_candidates: cands, terminal,
        };
        t.td_update(&[tr], eta, gamma).unwrap();
        let max_next = if terminal || next.is_empty() { 0.0 } else { next.iter().copied().fold(f64::MIN, f64::max) };
        let want = q + eta * (reward + gamma * max_next - q);
        prop_assert!((t.get(NodeId(0), NodeId(1)) - want).abs() <= 1e-9);
    }

    #[test]
    fn state_means_match_scratch(seed in any::<u64>(), n in 2usize..12, k in 1usize..6) {
        let mut r = rng(seed);
        let g = random_graph(n, &mut r);
        let table = random_table(n, 3, &mut r);
        let frontier: Vec<NodeId> = (0..k.min(n)).map(NodeId::from).collect();
        let set = NodeSet::from_nodes(n, frontier.iter().copied());
        let s = build_state(&set, &g, &table, 0.25, 0.5).unwrap();

        let h = table.as_array();
        let mean = |nodes: &[usize]| -> Array1<f64> {
            if nodes.is_empty() {
                return Array1::zeros(3);
            }
            let mut m = Array1::zeros(3);
            for &v in nodes { m += &h.row(v); }
            m / nodes.len() as f64
        };
        let front: Vec<usize> = set.iter().map(|v| v.index()).collect();
        let mut cand: Vec<usize> = front.iter()
            .flat_map(|&v| g.neighbors(NodeId::from(v)).unwrap().iter().map(|u| u.index()))
            .filter(|u| !front.contains(u))
            .collect();
        cand.sort_unstable();
        cand.dedup();
        for (a, b) in s.frontier_summary.iter().zip(mean(&front).iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in s.candidate_summary.iter().zip(mean(&cand).iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert_eq!(s.dim(), StateVector::dim_for(3));
        prop_assert_eq!((s.budget_frac, s.step_frac), (0.25, 0.5));
    }
}
