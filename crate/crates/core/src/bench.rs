//! Metrics, baselines, ablations and the seeded comparison suite.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::datagen::{Dataset, GenParams};
use crate::embedding::{train_embeddings, AggregationMode, EmbeddingHyper, EmbeddingTable, TrainedEmbedding};
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, NodeId};
use crate::oracle::{FeatureTable, Oracle, SimulatedOracle};
use crate::policy::QNetwork;
use crate::rng::{self, derive_seed};
use crate::stats::{mean, stdev};
use crate::swarm::{infer, BiasNodeSet, FoundNode, InferenceRun, RandomScorer, StopReason, SwarmConfig, TraceRecord};
use crate::trainer::{train, write_jsonl, EpisodeLog, TrainConfig};

pub const DEFAULT_WIN_THRESHOLD: f64 = 0.8;

/// Recall of `planted` by `found`.
pub fn bncr(found: &[NodeId], planted: &[NodeId]) -> Result<f64> {
    if planted.is_empty() {
        return Err(Error::Domain("no planted bias nodes to recover".into()));
    }
    let planted: HashSet<NodeId> = planted.iter().copied().collect();
    let hits = found.iter().copied().collect::<HashSet<_>>().intersection(&planted).count();
    Ok(hits as f64 / planted.len() as f64)
}

/// Queries per discovered biased node; infinite when nothing was found.
/// Serialized as a number, or the string `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct StepLoss(pub f64);

impl StepLoss {
    pub fn new(queries: u64, found: usize) -> Self {
        if found == 0 {
            Self(f64::INFINITY)
        } else {
            Self(queries as f64 / found as f64)
        }
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

impl fmt::Display for StepLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_finite() {
            write!(f, "{}", self.0)
        } else {
            f.write_str("inf")
        }
    }
}

impl Serialize for StepLoss {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("inf")
        }
    }
}

impl<'de> Deserialize<'de> for StepLoss {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(StepLoss(x)),
            Raw::Text(t) if t == "inf" => Ok(StepLoss(f64::INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad step loss {t:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// `None` when the graph has no planted bias nodes.
    pub bncr: Option<f64>,
    /// Budget units spent.
    pub interactions: u64,
    pub found: usize,
    pub planted: usize,
    pub step_loss: StepLoss,
    pub win: bool,
    pub seed: u64,
    /// Seconds; left out of serialized output so repeated runs are
    /// byte-identical.
    #[serde(skip)]
    pub wall_time: f64,
}

impl RunMetrics {
    pub fn from_run(graph: &KnowledgeGraph, found: &BiasNodeSet, spent: u64, seed: u64, elapsed: Duration) -> Self {
        let planted = graph.bias_nodes();
        let recall = bncr(&found.nodes(), &planted).ok();
        Self {
            bncr: recall,
            interactions: spent,
            found: found.len(),
            planted: planted.len(),
            step_loss: StepLoss::new(spent, found.len()),
            win: recall.is_some_and(|b| b >= DEFAULT_WIN_THRESHOLD),
            seed,
            wall_time: elapsed.as_secs_f64(),
        }
    }

    pub fn with_win_threshold(mut self, threshold: f64) -> Self {
        self.win = self.bncr.is_some_and(|b| b >= threshold);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Attention embeddings, learned Q, overlap penalty, scheduler.
    Full,
    NoPenalty,
    /// One agent, no scheduling.
    GreedyQOnly,
    Dfs,
    Uniform,
    NoAttention,
    NoSage,
    Neither,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoPenalty,
        Variant::GreedyQOnly,
        Variant::Dfs,
        Variant::Uniform,
        Variant::NoAttention,
        Variant::NoSage,
        Variant::Neither,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPenalty => "no_penalty",
            Variant::GreedyQOnly => "greedy_q_only",
            Variant::Dfs => "dfs",
            Variant::Uniform => "uniform",
            Variant::NoAttention => "no_attention",
            Variant::NoSage => "no_sage",
            Variant::Neither => "neither",
        }
    }

    /// Embedding the variant's policy runs on; `None` for policies that
    /// ignore embeddings.
    pub fn embedding_mode(self) -> Option<AggregationMode> {
        match self {
            Variant::Full | Variant::NoPenalty | Variant::GreedyQOnly => Some(AggregationMode::Attention),
            Variant::NoAttention => Some(AggregationMode::Uniform),
            Variant::NoSage => Some(AggregationMode::SelfOnly),
            Variant::Neither => Some(AggregationMode::RawProjection),
            Variant::Dfs | Variant::Uniform => None,
        }
    }

    pub fn is_ablation(self) -> bool {
        matches!(self, Variant::NoAttention | Variant::NoSage | Variant::Neither)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

/// Stack-based depth-first traversal querying every node it visits,
/// restarting at a random unqueried node when a component is exhausted.
pub fn run_dfs<O: Oracle>(graph: &KnowledgeGraph, mut oracle: O, seed: u64) -> Result<InferenceRun> {
    let started = Instant::now();
    let mut rng = rng::stream(seed, "dfs");
    let n = graph.node_count();
    let mut visited = vec![false; n];
    let mut queried = Vec::new();
    let mut found = BiasNodeSet::default();
    let mut trace = Vec::new();
    let mut stack: Vec<NodeId> = Vec::new();
    let mut prev: Option<NodeId> = None;
    let mut stop = StopReason::NoMove;
    'outer: loop {
        if stack.is_empty() {
            let open: Vec<usize> = (0..n).filter(|&i| !visited[i]).collect();
            if open.is_empty() {
                break;
            }
            stack.push(NodeId::from(open[rng.random_range(0..open.len())]));
            prev = None;
        }
        while let Some(v) = stack.pop() {
            if visited[v.index()] {
                continue;
            }
            let label = match oracle.query(v) {
                Ok(r) => r.label,
                Err(Error::BudgetExhausted { .. }) => {
                    stop = StopReason::BudgetExhausted;
                    break 'outer;
                }
                Err(e) => return Err(e),
            };
            visited[v.index()] = true;
            queried.push(v);
            let tick = trace.len() as u64;
            if label {
                found.found.push(FoundNode { node: v, tick, agent: 0 });
            }
            trace.push(TraceRecord {
                tick,
                agent: 0,
                from: prev,
                to: v,
                label,
                penalized_q: None,
                budget_left: oracle.remaining(),
            });
            prev = Some(v);
            // Reverse order so the smallest neighbour is explored first.
            stack.extend(graph.nb(v).iter().rev().filter(|u| !visited[u.index()]));
        }
    }
    let metrics = RunMetrics::from_run(graph, &found, oracle.spent(), seed, started.elapsed());
    Ok(InferenceRun {
        found,
        metrics,
        trace,
        stop,
        queried,
    })
}

/// Runs a policy that does not depend on the embedding ablations.
pub fn run_baseline<O: Oracle>(
    kind: Variant,
    graph: &KnowledgeGraph,
    oracle: O,
    table: Option<&EmbeddingTable>,
    qnet: Option<&QNetwork>,
    config: &SwarmConfig,
) -> Result<InferenceRun> {
    let need = |what: &str| Error::Config(format!("variant {kind} needs a trained {what}"));
    match kind {
        Variant::Dfs => run_dfs(graph, oracle, config.seed),
        Variant::Uniform => {
            // Embeddings are ignored; any table of the right size will do.
            let table = table.ok_or_else(|| need("embedding table"))?;
            let mut scorer = RandomScorer(rng::stream(config.seed, "uniform-moves"));
            let cfg = SwarmConfig {
                overlap_penalty: 0.0,
                ..config.clone()
            };
            infer(graph, oracle, table, &mut scorer, &cfg)
        }
        Variant::Full | Variant::NoPenalty | Variant::GreedyQOnly => {
            let table = table.ok_or_else(|| need("embedding table"))?;
            let qnet = qnet.ok_or_else(|| need("Q-network"))?;
            let mut scorer = qnet.scorer(table)?;
            let cfg = match kind {
                Variant::NoPenalty => SwarmConfig {
                    overlap_penalty: 0.0,
                    ..config.clone()
                },
                Variant::GreedyQOnly => SwarmConfig {
                    n_agents: 1,
                    ..config.clone()
                },
                _ => config.clone(),
            };
            infer(graph, oracle, table, &mut scorer, &cfg)
        }
        other => Err(Error::Config(format!(
            "{other} is an embedding ablation; use run_ablation"
        ))),
    }
}

/// Everything the suite varies, with desk-scale defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub gen: GenParams,
    pub embedding: EmbeddingHyper,
    pub train: TrainConfig,
    pub swarm: SwarmConfig,
    /// Fraction of nodes whose labels the embedding classifier trains on.
    pub label_fraction: f64,
    pub win_threshold: f64,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    /// Agent counts for the scaling sweep (empty: no sweep).
    pub sweep_agents: Vec<usize>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            gen: GenParams {
                n_nodes: 1000,
                n_bias_seeds: 5,
                transmission_rate: 0.6,
                diffusion_hops: 2,
                ..GenParams::default()
            },
            embedding: EmbeddingHyper::default(),
            train: TrainConfig {
                n_episodes: 150,
                n_tries: 20,
                max_steps: 60,
                ..TrainConfig::default()
            },
            swarm: SwarmConfig::default(),
            label_fraction: 0.7,
            win_threshold: DEFAULT_WIN_THRESHOLD,
            seeds: (0..10).collect(),
            variants: vec![
                Variant::Full,
                Variant::Dfs,
                Variant::Uniform,
                Variant::NoAttention,
                Variant::Neither,
            ],
            sweep_agents: Vec::new(),
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()?;
        self.swarm.validate()?;
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "label_fraction {} outside (0, 1]",
                self.label_fraction
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("suite needs at least one seed".into()));
        }
        if let Some(&n) = self.sweep_agents.iter().find(|&&n| n == 0 || n as u64 >= self.swarm.q_limit) {
            return Err(Error::Config(format!(
                "sweep agent count {n} must be in 1..{}",
                self.swarm.q_limit
            )));
        }
        Ok(())
    }
}

/// Labelled examples for the embedding classifier: a seeded random
/// `fraction` of the nodes.
pub fn labelled_split(graph: &KnowledgeGraph, fraction: f64, seed: u64) -> Result<Vec<(NodeId, bool)>> {
    let labels = graph
        .labels()
        .ok_or_else(|| Error::State("splitting needs a labelled graph".into()))?;
    let mut nodes: Vec<NodeId> = graph.nodes().collect();
    nodes.shuffle(&mut rng::stream(seed, "label-split"));
    let keep = ((nodes.len() as f64 * fraction).round() as usize).clamp(1, nodes.len());
    let mut picked: Vec<(NodeId, bool)> = nodes[..keep].iter().map(|&v| (v, labels[v.index()])).collect();
    picked.sort_by_key(|p| p.0);
    Ok(picked)
}

/// Trained embeddings plus a Q-network on top of them.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub embedding: TrainedEmbedding,
    pub qnet: QNetwork,
    pub train_log: Vec<EpisodeLog>,
}

/// One suite instance: a generated graph and the models trained on it.
pub struct Prepared {
    pub dataset: Dataset,
    pub seed: u64,
    labels: Arc<Vec<bool>>,
    features: Arc<FeatureTable>,
    pipelines: Vec<(AggregationMode, Pipeline)>,
}

impl Prepared {
    pub fn new(config: &SuiteConfig, seed: u64) -> Result<Self> {
        let dataset = Dataset::generate(&GenParams {
            seed,
            ..config.gen.clone()
        })?;
        Ok(Self {
            labels: Arc::new(dataset.labels().to_vec()),
            features: Arc::new(dataset.features.clone()),
            dataset,
            seed,
            pipelines: Vec::new(),
        })
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.dataset.graph
    }

    pub fn oracle(&self, limit: u64) -> SimulatedOracle {
        SimulatedOracle::new(self.labels.clone(), self.features.clone(), limit)
            .expect("dataset labels and features agree")
    }

    /// Train (once) the pipeline for `mode`.
    pub fn pipeline(&mut self, mode: AggregationMode, config: &SuiteConfig) -> Result<&Pipeline> {
        if let Some(i) = self.pipelines.iter().position(|(m, _)| *m == mode) {
            return Ok(&self.pipelines[i].1);
        }
        let p = train_pipeline(
            &self.dataset.graph,
            self.features.clone(),
            &self.oracle(u64::MAX),
            mode,
            config,
            self.seed,
        )?;
        self.pipelines.push((mode, p));
        Ok(&self.pipelines.last().expect("just pushed").1)
    }

    pub fn trained(&self, mode: AggregationMode) -> Option<&Pipeline> {
        self.pipelines.iter().find(|(m, _)| *m == mode).map(|(_, p)| p)
    }

    fn swarm_config(&self, config: &SuiteConfig) -> SwarmConfig {
        SwarmConfig {
            seed: derive_seed(self.seed, "inference"),
            ..config.swarm.clone()
        }
    }

    /// Run one variant on this instance with the suite's swarm settings.
    pub fn run(&mut self, variant: Variant, config: &SuiteConfig) -> Result<InferenceRun> {
        let swarm = self.swarm_config(config);
        self.run_with(variant, config, &swarm)
    }

    pub fn run_with(&mut self, variant: Variant, config: &SuiteConfig, swarm: &SwarmConfig) -> Result<InferenceRun> {
        let oracle = self.oracle(swarm.q_limit);
        let run = match variant.embedding_mode() {
            Some(mode) => {
                self.pipeline(mode, config)?;
                let p = self.trained(mode).expect("trained above");
                let kind = if variant.is_ablation() { Variant::Full } else { variant };
                run_baseline(kind, self.graph(), oracle, Some(&p.embedding.table), Some(&p.qnet), swarm)?
            }
            None => {
                // The walk bookkeeping wants a table; these policies never read it.
                let table = EmbeddingTable::from_embeddings(
                    self.features.clone(),
                    ndarray::Array2::zeros((self.graph().node_count(), 1)),
                );
                run_baseline(variant, self.graph(), oracle, Some(&table), None, swarm)?
            }
        };
        Ok(InferenceRun {
            metrics: run.metrics.clone().with_win_threshold(config.win_threshold),
            ..run
        })
    }
}

/// Embeddings on a labelled split, then Q-learning on the whole graph.
pub fn train_pipeline(
    graph: &KnowledgeGraph,
    features: Arc<FeatureTable>,
    oracle: &SimulatedOracle,
    mode: AggregationMode,
    config: &SuiteConfig,
    seed: u64,
) -> Result<Pipeline> {
    let examples = labelled_split(graph, config.label_fraction, seed)?;
    let hyper = EmbeddingHyper {
        mode,
        seed: derive_seed(seed, "embedding"),
        ..config.embedding.clone()
    };
    let embedding = train_embeddings(graph, features, &examples, &hyper)?;
    let train_cfg = TrainConfig {
        seed: derive_seed(seed, "q-training"),
        ..config.train.clone()
    };
    let limit = train_cfg.query_limit.unwrap_or(u64::MAX);
    let out = train(graph, |_| oracle.fresh(limit), &embedding.table, &train_cfg)?;
    Ok(Pipeline {
        embedding,
        qnet: out.qnet,
        train_log: out.log,
    })
}

/// Run an embedding ablation end to end: train the ablated embeddings and
/// a Q-network on them, then run the full swarm.
pub fn run_ablation(kind: Variant, prepared: &mut Prepared, config: &SuiteConfig) -> Result<InferenceRun> {
    if !kind.is_ablation() {
        return Err(Error::Config(format!("{kind} is not an embedding ablation")));
    }
    prepared.run(kind, config)
}

/// One suite row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub n_agents: usize,
    pub seed: u64,
    pub metrics: RunMetrics,
    pub q_limit: u64,
    pub per_node_cost: u64,
    /// Distinct nodes the run queried.
    pub distinct_queried: usize,
}

impl RunRecord {
    pub fn new(variant: Variant, n_agents: usize, seed: u64, q_limit: u64, run: &InferenceRun) -> Self {
        Self {
            variant,
            n_agents,
            seed,
            metrics: run.metrics.clone(),
            q_limit,
            per_node_cost: 1,
            distinct_queried: run.queried.len(),
        }
    }

    /// Spent budget equals cost × distinct queries and stays within limit.
    pub fn check_budget(&self) -> Result<()> {
        let expect = self.per_node_cost * self.distinct_queried as u64;
        if self.metrics.interactions != expect || self.metrics.interactions > self.q_limit {
            return Err(Error::Validation(format!(
                "{} seed {}: spent {} but {} distinct nodes at cost {} (limit {})",
                self.variant,
                self.seed,
                self.metrics.interactions,
                self.distinct_queried,
                self.per_node_cost,
                self.q_limit
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_agents: usize,
    pub runs: usize,
    pub mean_bncr: f64,
    pub mean_step_loss: StepLoss,
    pub win_rate: f64,
}

/// Aggregate per-seed sweep records for one agent count.
pub fn sweep_row(n_agents: usize, records: &[&RunRecord]) -> SweepRow {
    let bncrs: Vec<f64> = records.iter().filter_map(|r| r.metrics.bncr).collect();
    let losses: Vec<f64> = records.iter().map(|r| r.metrics.step_loss.0).collect();
    let wins = records.iter().filter(|r| r.metrics.win).count();
    SweepRow {
        n_agents,
        runs: records.len(),
        mean_bncr: mean(&bncrs).unwrap_or(0.0),
        mean_step_loss: StepLoss(mean(&losses).unwrap_or(f64::INFINITY)),
        win_rate: if records.is_empty() {
            0.0
        } else {
            wins as f64 / records.len() as f64
        },
    }
}

/// Average the full model over seeds for each agent count.
pub fn sweep_agents(
    n_agents_list: &[usize],
    instances: &mut [Prepared],
    config: &SuiteConfig,
) -> Result<(Vec<SweepRow>, Vec<RunRecord>)> {
    let mut records = Vec::new();
    for &n in n_agents_list {
        for inst in instances.iter_mut() {
            let swarm = SwarmConfig {
                n_agents: n,
                ..inst.swarm_config(config)
            };
            let run = inst.run_with(Variant::Full, config, &swarm)?;
            records.push(RunRecord::new(Variant::Full, n, inst.seed, swarm.q_limit, &run));
        }
    }
    let rows = n_agents_list
        .iter()
        .map(|&n| {
            let rs: Vec<&RunRecord> = records.iter().filter(|r| r.n_agents == n).collect();
            sweep_row(n, &rs)
        })
        .collect();
    Ok((rows, records))
}

#[derive(Clone, Debug)]
pub struct SuiteResults {
    pub records: Vec<RunRecord>,
    pub sweep: Vec<SweepRow>,
    pub sweep_records: Vec<RunRecord>,
    /// Full-model training curves, one per seed.
    pub training: Vec<(u64, Vec<EpisodeLog>)>,
}

impl SuiteResults {
    pub fn mean_bncr(&self, variant: Variant) -> Option<f64> {
        let xs: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.variant == variant)
            .filter_map(|r| r.metrics.bncr)
            .collect();
        mean(&xs)
    }
}

/// Run every configured variant on every seed, then the agent sweep.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteResults> {
    config.validate()?;
    let mut instances = Vec::with_capacity(config.seeds.len());
    let mut records = Vec::new();
    for &seed in &config.seeds {
        let mut inst = Prepared::new(config, seed)?;
        for &v in &config.variants {
            let run = inst.run(v, config)?;
            let n_agents = if v == Variant::GreedyQOnly || v == Variant::Dfs { 1 } else { config.swarm.n_agents };
            records.push(RunRecord::new(v, n_agents, seed, config.swarm.q_limit, &run));
            log::info!("seed {seed} {v}: bncr {:?}", run.metrics.bncr);
        }
        instances.push(inst);
    }
    let (sweep, sweep_records) = if config.sweep_agents.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        sweep_agents(&config.sweep_agents, &mut instances, config)?
    };
    let training = instances
        .iter()
        .filter_map(|i| i.trained(AggregationMode::Attention).map(|p| (i.seed, p.train_log.clone())))
        .collect();
    Ok(SuiteResults {
        records,
        sweep,
        sweep_records,
        training,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{}: {other:?}", path.display())),
    }
}

/// Write `results.jsonl`, `results.csv` and plot tables under `plots/`.
pub fn write_results(dir: &Path, results: &SuiteResults) -> Result<()> {
    fs::create_dir_all(dir.join("plots")).map_err(|e| Error::io(dir, e))?;
    let all: Vec<RunRecord> = results.records.iter().chain(&results.sweep_records).cloned().collect();
    write_jsonl(&dir.join("results.jsonl"), &all)?;

    let path = dir.join("results.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["variant", "n_agents", "seed", "bncr", "interactions", "step_loss", "win"])
        .map_err(csv_err(&path))?;
    for r in &all {
        w.write_record([
            r.variant.name().to_string(),
            r.n_agents.to_string(),
            r.seed.to_string(),
            r.metrics.bncr.map_or(String::new(), |b| b.to_string()),
            r.metrics.interactions.to_string(),
            r.metrics.step_loss.to_string(),
            r.metrics.win.to_string(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let mut by_variant = String::from("variant\truns\tmean_bncr\tstdev_bncr\n");
    let mut seen = Vec::new();
    for r in &results.records {
        if seen.contains(&r.variant) {
            continue;
        }
        seen.push(r.variant);
        let xs: Vec<f64> = results
            .records
            .iter()
            .filter(|x| x.variant == r.variant)
            .filter_map(|x| x.metrics.bncr)
            .collect();
        by_variant.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.variant,
            xs.len(),
            fmt_opt(mean(&xs)),
            fmt_opt(Some(stdev(&xs)).filter(|_| xs.len() > 1))
        ));
    }
    write_text(&dir.join("plots/bncr_by_variant.tsv"), &by_variant)?;

    if !results.sweep.is_empty() {
        let mut t = String::from("n_agents\truns\tmean_bncr\tmean_step_loss\twin_rate\n");
        for row in &results.sweep {
            t.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                row.n_agents, row.runs, row.mean_bncr, row.mean_step_loss, row.win_rate
            ));
        }
        write_text(&dir.join("plots/agents_sweep.tsv"), &t)?;
    }

    if let Some((_, first)) = results.training.first() {
        let mut t = String::from("episode\tepsilon\tmean_steps_to_bias\tsuccess_rate\tqueries\n");
        for (e, log) in first.iter().enumerate() {
            let at = |f: fn(&EpisodeLog) -> f64| {
                let xs: Vec<f64> = results.training.iter().filter_map(|(_, l)| l.get(e)).map(f).collect();
                mean(&xs).unwrap_or(f64::NAN)
            };
            t.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e,
                log.epsilon,
                at(|l| l.mean_steps_to_bias),
                at(|l| l.success_rate),
                at(|l| l.queries as f64)
            ));
        }
        write_text(&dir.join("plots/training_curve.tsv"), &t)?;
    }
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
