//! File-backed experiment configuration. Unknown keys are rejected so stale
//! configs fail loudly; command-line flags override scalar fields only.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mopo_core::geometry::{AggregationSpec, MultiGroupSpec};
use mopo_core::mopo::{GoalSpec, RunMode};
use mopo_core::oracle::OracleBudget;
use mopo_core::world::WorldConfig;

use crate::CliError;

/// Full experiment description for `run`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFileConfig {
    /// Path to a world JSON file (relative paths resolve against the config).
    pub world: String,
    pub goal: GoalSpec,
    pub t_iters: usize,
    pub mode: RunMode,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_m")]
    pub m_per_objective: usize,
    #[serde(default)]
    pub use_true_rewards: bool,
    pub seeds: Vec<u64>,
    /// Attach an oracle solve of the same goal and report per-seed gaps.
    #[serde(default)]
    pub oracle: Option<OracleBudget>,
    #[serde(default)]
    pub out_dir: Option<String>,
}

fn default_m() -> usize {
    200
}

impl RunFileConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds must be non-empty"));
        }
        if self.t_iters < 1 {
            return Err(CliError::config("t_iters must be >= 1"));
        }
        self.goal
            .validate()
            .map_err(|e| CliError::config(format!("goal: {e}")))?;
        Ok(())
    }
}

/// Comparison sweep for `compare`: one generated world per seed, the fixed
/// weight grid, and the four method columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareFileConfig {
    /// World generation parameters (the per-seed worlds override `seed`).
    pub world: WorldConfig,
    pub p: f64,
    pub c: f64,
    #[serde(default = "default_t_practical")]
    pub t_iters: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub oracle: Option<OracleBudget>,
    #[serde(default)]
    pub out_dir: Option<String>,
}

fn default_t_practical() -> usize {
    7
}

impl CompareFileConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds must be non-empty"));
        }
        if self.world.n_objectives != 2 {
            return Err(CliError::config("compare requires two objectives"));
        }
        if !(self.p <= 1.0) {
            return Err(CliError::config("p must be <= 1"));
        }
        if !(self.c >= 0.0) {
            return Err(CliError::config("c must be >= 0"));
        }
        Ok(())
    }
}

/// Target description for `oracle`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleTarget {
    Consensus { sets: Vec<AggregationSpec> },
    Malfare { mg: MultiGroupSpec },
    MaxMin,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleFileConfig {
    pub world: String,
    pub target: OracleTarget,
    #[serde(default)]
    pub budget: Option<OracleBudget>,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
}

/// Resolves a possibly relative data path against the config's directory.
pub fn resolve_relative(config_path: &Path, target: &str) -> PathBuf {
    let p = Path::new(target);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}

/// Output directory resolution order: flag, config field, MOPO_OUT_DIR,
/// current directory.
pub fn resolve_out_dir(flag: Option<&str>, from_config: Option<&str>) -> PathBuf {
    if let Some(f) = flag {
        return PathBuf::from(f);
    }
    if let Some(c) = from_config {
        return PathBuf::from(c);
    }
    if let Ok(env) = std::env::var("MOPO_OUT_DIR") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from(".")
}
