use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use kgbs_core::bench::{labelled_split, run_suite, write_results};
use kgbs_core::datagen::{Dataset, DatasetFiles};
use kgbs_core::embedding::{train_embeddings, EmbeddingCheckpoint, EmbeddingHyper, EmbeddingTable};
use kgbs_core::graph::load_graph;
use kgbs_core::policy::{QCheckpoint, QMetadata};
use kgbs_core::rng::derive_seed;
use kgbs_core::swarm::{infer, SwarmConfig};
use kgbs_core::trainer::{train, write_jsonl, TrainConfig};
use kgbs_core::{FeatureTable, KnowledgeGraph, SimulatedOracle};
use log::info;
use serde::Serialize;

use crate::config::{RunConfig, RunManifest, MANIFEST_FILE};
use crate::CliError;

pub const EMBEDDING_FILE: &str = "embedding.json";
pub const QNET_FILE: &str = "qnet.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

fn write_manifest(dir: &Path, command: &str, config: &RunConfig) -> Result<()> {
    let m = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
    };
    write_json(&dir.join(MANIFEST_FILE), &m)
}

/// Create `dir` and make sure none of `outputs` would be clobbered.
fn prepare_out(dir: &Path, outputs: &[&str], force: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.to_path_buf(), source: e })?;
    if !force {
        if let Some(p) = outputs.iter().map(|f| dir.join(f)).find(|p| p.exists()) {
            return Err(CliError::Exists(p).into());
        }
    }
    Ok(())
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::Config(format!("missing {flag}")).into())
}

/// A dataset directory as written by `gen-data`.
pub struct LoadedData {
    pub graph: KnowledgeGraph,
    pub features: Arc<FeatureTable>,
    pub labels: Arc<Vec<bool>>,
}

pub fn load_data(dir: &Path) -> Result<LoadedData> {
    let files = DatasetFiles::default();
    let edges = dir.join(&files.edges);
    let labels = dir.join(&files.labels);
    for p in [&edges, &labels] {
        if !p.exists() {
            return Err(CliError::Missing { path: p.clone(), hint: "generate a dataset with `kgbs gen-data`" }.into());
        }
    }
    let graph = load_graph(&edges, Some(&labels), None)?;
    let features = FeatureTable::read_tsv(&dir.join(&files.features), graph.node_count())?;
    let labels = graph
        .labels()
        .expect("loaded with a labels file")
        .to_vec();
    Ok(LoadedData {
        graph,
        features: Arc::new(features),
        labels: Arc::new(labels),
    })
}

pub fn gen_data(config: &RunConfig, force: bool) -> Result<()> {
    let out = required(&config.paths.out, "--out")?;
    let params = &config.gen;
    params.validate()?;
    let ds = Dataset::generate(params)?;
    if !force && out.join(MANIFEST_FILE).exists() {
        return Err(CliError::Exists(out.join(MANIFEST_FILE)).into());
    }
    let manifest = ds.write(out, force)?;
    write_manifest(out, "gen-data", config)?;
    println!(
        "wrote {} nodes, {} edges, {} biased to {}",
        manifest.n_nodes,
        manifest.n_edges,
        manifest.n_biased,
        out.display()
    );
    Ok(())
}

pub fn train_cmd(config: &RunConfig, force: bool) -> Result<()> {
    let data_dir = required(&config.paths.data, "--data")?;
    let out = required(&config.paths.out, "--out")?;
    config.train.validate()?;
    prepare_out(out, &[EMBEDDING_FILE, QNET_FILE, "train_log.jsonl", MANIFEST_FILE], force)?;
    let data = load_data(data_dir)?;

    let (model, embedding_seed, loss_curve) = match &config.paths.resume_embedding {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Missing { path: path.clone(), hint: "train without --resume-embedding first" }.into());
            }
            let text = fs::read_to_string(path).map_err(|e| CliError::Io { path: path.clone(), source: e })?;
            let ckpt: EmbeddingCheckpoint =
                serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()))?;
            let seed = ckpt.seed;
            info!("reusing embedding checkpoint {}", path.display());
            (ckpt.into_model()?, seed, Vec::new())
        }
        None => {
            let examples = labelled_split(&data.graph, config.label_fraction, config.seed)?;
            let hyper = EmbeddingHyper {
                seed: derive_seed(config.seed, "embedding"),
                ..config.embedding.clone()
            };
            let trained = train_embeddings(&data.graph, data.features.clone(), &examples, &hyper)?;
            info!(
                "embedding loss {:.4} -> {:.4}",
                trained.loss_curve.first().copied().unwrap_or(f64::NAN),
                trained.loss_curve.last().copied().unwrap_or(f64::NAN)
            );
            (trained.model, hyper.seed, trained.loss_curve)
        }
    };
    let table = EmbeddingTable::build(&model, &data.graph, data.features.clone())?;

    let train_cfg = TrainConfig {
        seed: derive_seed(config.seed, "q-training"),
        ..config.train.clone()
    };
    let oracle = SimulatedOracle::new(data.labels.clone(), data.features.clone(), u64::MAX)?;
    let limit = train_cfg.query_limit.unwrap_or(u64::MAX);
    let outcome = train(&data.graph, |_| oracle.fresh(limit), &table, &train_cfg)?;

    write_json(&out.join(EMBEDDING_FILE), &model.to_checkpoint(embedding_seed))?;
    let meta: QMetadata = outcome.metadata(&train_cfg);
    outcome.qnet.to_checkpoint(meta).save(&out.join(QNET_FILE))?;
    write_jsonl(&out.join("train_log.jsonl"), &outcome.log)?;
    if !loss_curve.is_empty() {
        let mut t = String::from("epoch\tloss\n");
        for (i, l) in loss_curve.iter().enumerate() {
            t.push_str(&format!("{i}\t{l}\n"));
        }
        fs::write(out.join("embedding_loss.tsv"), t).map_err(|e| CliError::Io { path: out.join("embedding_loss.tsv"), source: e })?;
    }
    write_manifest(out, "train", config)?;

    let tail = outcome.log.len().saturating_sub(30);
    let steps: Vec<f64> = outcome.log[tail..].iter().map(|l| l.mean_steps_to_bias).collect();
    println!(
        "trained {} episodes; last-30 mean steps to bias {}; checkpoints in {}",
        outcome.log.len(),
        kgbs_core::stats::mean(&steps).map_or("n/a".to_string(), |m| format!("{m:.2}")),
        out.display()
    );
    Ok(())
}

pub fn infer_cmd(config: &RunConfig, force: bool) -> Result<()> {
    let data_dir = required(&config.paths.data, "--data")?;
    let model_dir = required(&config.paths.model, "--model")?;
    let out = required(&config.paths.out, "--out")?;
    prepare_out(out, &["trace.jsonl", "metrics.json", MANIFEST_FILE], force)?;
    let data = load_data(data_dir)?;

    let emb_path = model_dir.join(EMBEDDING_FILE);
    let q_path = model_dir.join(QNET_FILE);
    for p in [&emb_path, &q_path] {
        if !p.exists() {
            return Err(CliError::Missing { path: p.clone(), hint: "run `kgbs train --out <model dir>` first" }.into());
        }
    }
    let text = fs::read_to_string(&emb_path).map_err(|e| CliError::Io { path: emb_path.clone(), source: e })?;
    let ckpt: EmbeddingCheckpoint =
        serde_json::from_str(&text).with_context(|| format!("reading {}", emb_path.display()))?;
    let model = ckpt.into_model()?;
    let table = EmbeddingTable::build(&model, &data.graph, data.features.clone())?;
    let qnet = QCheckpoint::load(&q_path)?.into_network()?;
    let mut scorer = qnet.scorer(&table)?;

    let swarm = SwarmConfig {
        seed: derive_seed(config.seed, "inference"),
        ..config.swarm.clone()
    };
    let oracle = SimulatedOracle::new(data.labels.clone(), data.features.clone(), swarm.q_limit)?;
    let run = infer(&data.graph, oracle, &table, &mut scorer, &swarm)?;
    let metrics = run.metrics.clone().with_win_threshold(config.bench.win_threshold);
    run.write_trace(&out.join("trace.jsonl"))?;
    write_json(&out.join("metrics.json"), &metrics)?;
    write_manifest(out, "infer", config)?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

pub fn bench_cmd(command: &str, config: &RunConfig, force: bool) -> Result<()> {
    let out = required(&config.paths.out, "--out")?;
    config.bench.validate()?;
    prepare_out(out, &["results.jsonl", "results.csv", MANIFEST_FILE], force)?;
    let results = run_suite(&config.bench)?;
    for r in results.records.iter().chain(&results.sweep_records) {
        r.check_budget()?;
    }
    write_results(out, &results)?;
    write_manifest(out, command, config)?;
    for v in &config.bench.variants {
        if let Some(b) = results.mean_bncr(*v) {
            println!("{:<14} mean bncr {b:.3}", v.name());
        }
    }
    for row in &results.sweep {
        println!(
            "agents {:<3} mean step loss {} win rate {:.2}",
            row.n_agents, row.mean_step_loss, row.win_rate
        );
    }
    Ok(())
}
