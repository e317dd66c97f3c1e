use std::path::{Path, PathBuf};

use kgbs_core::bench::SuiteConfig;
use kgbs_core::datagen::GenParams;
use kgbs_core::embedding::EmbeddingHyper;
use kgbs_core::swarm::SwarmConfig;
use kgbs_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a subcommand can be configured with. Each section falls back
/// to the library defaults, so a config file only needs the keys it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every component derives its own stream from it.
    pub seed: u64,
    pub gen: GenParams,
    pub embedding: EmbeddingHyper,
    pub train: TrainConfig,
    /// Fraction of nodes whose labels the embedding classifier sees.
    pub label_fraction: f64,
    pub swarm: SwarmConfig,
    pub bench: SuiteConfig,
    pub paths: Paths,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Embedding checkpoint to reuse instead of training one.
    pub resume_embedding: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bench = SuiteConfig::default();
        Self {
            seed: 0,
            gen: GenParams::default(),
            embedding: EmbeddingHyper::default(),
            train: TrainConfig::default(),
            label_fraction: bench.label_fraction,
            swarm: SwarmConfig::default(),
            bench,
            paths: Paths::default(),
        }
    }
}

/// What every run writes next to its outputs. Passing it back through
/// `--config` reproduces the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
}

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Load a TOML or JSON config (by extension; JSON otherwise). A run
/// manifest is accepted too and yields the config it recorded.
pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    let bad = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    let value: serde_json::Value = if is_toml {
        let t: toml::Value = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
        serde_json::to_value(t).map_err(|e| bad(e.to_string()))?
    } else {
        serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?
    };
    let value = match value {
        serde_json::Value::Object(mut m) if m.contains_key("command") && m.contains_key("config") => {
            m.remove("config").expect("checked above")
        }
        v => v,
    };
    serde_json::from_value(value).map_err(|e| bad(e.to_string()))
}
