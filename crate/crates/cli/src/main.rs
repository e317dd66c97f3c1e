//! `kgbs`: generate synthetic knowledge graphs, train the embedding and
//! Q-networks, run swarm inference and benchmark suites.
//!
//! Settings resolve as flags > `--config` file > built-in defaults, and
//! every command writes `run_manifest.json` with the resolved config.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use kgbs_core::bench::Variant;
use kgbs_core::datagen::GenParams;
use thiserror::Error;

use crate::config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{} already exists (pass --force to overwrite)", .0.display())]
    Exists(PathBuf),
    #[error("{} not found; {hint}", path.display())]
    Missing { path: PathBuf, hint: &'static str },
}

pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const IO: u8 = 3;
    pub const BUDGET: u8 = 4;
    pub const DIVERGED: u8 = 5;
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use kgbs_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::Validation(_) => exit::CONFIG,
                E::Io { .. } | E::Parse { .. } | E::Json(_) | E::Csv(_) => exit::IO,
                E::BudgetExhausted { .. } => exit::BUDGET,
                E::Diverged { .. } => exit::DIVERGED,
                _ => exit::OTHER,
            };
        }
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Config(_) => exit::CONFIG,
                CliError::Io { .. } | CliError::Exists(_) | CliError::Missing { .. } => exit::IO,
            };
        }
        if cause.is::<serde_json::Error>() || cause.is::<std::io::Error>() {
            return exit::IO;
        }
    }
    exit::OTHER
}

#[derive(Debug, Parser)]
#[command(name = "kgbs", version, about = "Bias-boundary search on knowledge graphs")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML or JSON config file (a previous run_manifest.json works too).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic labelled graph with node features.
    GenData(GenArgs),
    /// Train embeddings and the Q-network on a dataset.
    Train(TrainArgs),
    /// Run multi-agent inference with trained checkpoints.
    Infer(InferArgs),
    /// Run the seeded benchmark suite.
    Bench(BenchArgs),
    /// Run the embedding ablations (bench with ablation variants).
    Ablate(BenchArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Topic preset: economy, education, immigration, politics, ai, culture.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    bias_seeds: Option<usize>,
    #[arg(long)]
    transmission: Option<f64>,
    #[arg(long)]
    hops: Option<u32>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    signal: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    tries: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Q-network step size.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Embedding training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Embedding learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    label_fraction: Option<f64>,
    /// Reuse this embedding checkpoint instead of training embeddings.
    #[arg(long)]
    resume_embedding: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SwarmArgs {
    #[arg(long)]
    agents: Option<usize>,
    /// Oracle query budget.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    overlap_penalty: Option<f64>,
    #[arg(long)]
    max_consecutive: Option<u32>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory holding embedding.json and qnet.json.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    swarm: SwarmArgs,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated variants, e.g. full,dfs,uniform.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    /// Number of seeded graphs, starting at --seed.
    #[arg(long)]
    seeds: Option<u64>,
    /// Comma-separated agent counts for the scaling sweep.
    #[arg(long, value_delimiter = ',')]
    sweep_agents: Option<Vec<usize>>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    tries: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[command(flatten)]
    swarm: SwarmArgs,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl SwarmArgs {
    fn apply(self, s: &mut kgbs_core::swarm::SwarmConfig) {
        set(&mut s.n_agents, self.agents);
        set(&mut s.q_limit, self.budget);
        set(&mut s.overlap_penalty, self.overlap_penalty);
        set(&mut s.max_consecutive, self.max_consecutive);
    }
}

fn resolve(cli: Cli) -> Result<(String, RunConfig, bool)> {
    let mut c = match &cli.global.config {
        Some(p) => config::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut c.seed, cli.global.seed);
    if cli.global.out.is_some() {
        c.paths.out = cli.global.out;
    }
    let name = match cli.command {
        Command::GenData(a) => {
            if let Some(task) = &a.task {
                let p = GenParams::preset(task)?;
                c.gen.n_bias_seeds = p.n_bias_seeds;
                c.gen.transmission_rate = p.transmission_rate;
            }
            set(&mut c.gen.n_nodes, a.nodes);
            set(&mut c.gen.n_bias_seeds, a.bias_seeds);
            set(&mut c.gen.transmission_rate, a.transmission);
            set(&mut c.gen.diffusion_hops, a.hops);
            set(&mut c.gen.feature_dim, a.feature_dim);
            set(&mut c.gen.signal, a.signal);
            set(&mut c.gen.noise, a.noise);
            c.gen.seed = c.seed;
            "gen-data"
        }
        Command::Train(a) => {
            if a.data.is_some() {
                c.paths.data = a.data;
            }
            if a.resume_embedding.is_some() {
                c.paths.resume_embedding = a.resume_embedding;
            }
            set(&mut c.train.n_episodes, a.episodes);
            set(&mut c.train.n_tries, a.tries);
            set(&mut c.train.max_steps, a.max_steps);
            set(&mut c.train.eta, a.eta);
            set(&mut c.train.gamma, a.gamma);
            set(&mut c.embedding.epochs, a.epochs);
            set(&mut c.embedding.learning_rate, a.lr);
            set(&mut c.label_fraction, a.label_fraction);
            "train"
        }
        Command::Infer(a) => {
            if a.data.is_some() {
                c.paths.data = a.data;
            }
            if a.model.is_some() {
                c.paths.model = a.model;
            }
            a.swarm.apply(&mut c.swarm);
            c.swarm.validate()?;
            "infer"
        }
        Command::Bench(a) => {
            apply_bench(&mut c, a, cli.global.seed);
            "bench"
        }
        Command::Ablate(a) => {
            if a.variants.is_none() {
                c.bench.variants = vec![Variant::Full, Variant::NoAttention, Variant::NoSage, Variant::Neither];
            }
            apply_bench(&mut c, a, cli.global.seed);
            "ablate"
        }
    };
    Ok((name.to_string(), c, cli.global.force))
}

fn apply_bench(c: &mut RunConfig, a: BenchArgs, seed_flag: Option<u64>) {
    let b = &mut c.bench;
    set(&mut b.variants, a.variants);
    set(&mut b.sweep_agents, a.sweep_agents);
    if a.seeds.is_some() || seed_flag.is_some() {
        let n = a.seeds.unwrap_or(b.seeds.len() as u64);
        b.seeds = (c.seed..c.seed + n).collect();
    }
    set(&mut b.gen.n_nodes, a.nodes);
    set(&mut b.train.n_episodes, a.episodes);
    set(&mut b.train.n_tries, a.tries);
    set(&mut b.train.max_steps, a.max_steps);
    a.swarm.apply(&mut b.swarm);
}

fn run(cli: Cli) -> Result<()> {
    let (name, config, force) = resolve(cli)?;
    match name.as_str() {
        "gen-data" => commands::gen_data(&config, force),
        "train" => commands::train_cmd(&config, force),
        "infer" => commands::infer_cmd(&config, force),
        _ => commands::bench_cmd(&name, &config, force),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KGBS_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
