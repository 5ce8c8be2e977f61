//! Run configuration: built-in defaults, overridden by a TOML file,
//! overridden again by CLI flags.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use pipeplan_core::cql::CqlConfig;
use pipeplan_core::dqn::DqnConfig;
use pipeplan_core::env::EnvConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Evaluation episodes per pipe; averages sudden-failure variance out.
    pub episodes_per_pipe: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            episodes_per_pipe: 30,
        }
    }
}

/// Full experiment configuration. Every field has a default matching the
/// bundled `configs/paper.toml`; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; propagated to the training configs on resolve.
    pub seed: u64,
    /// Pipe roster CSV path.
    pub roster: PathBuf,
    pub env: EnvConfig,
    pub dqn: DqnConfig,
    pub cql: CqlConfig,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            roster: PathBuf::from("data/pipes.csv"),
            env: EnvConfig::default(),
            dqn: DqnConfig::default(),
            cql: CqlConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl RunConfig {
    /// Push the master seed down into the training configs.
    pub fn resolve_seed(&mut self, flag: Option<u64>) {
        if let Some(seed) = flag {
            self.seed = seed;
        }
        self.dqn.seed = self.seed;
        self.cql.seed = self.seed;
    }
}

/// TOML keys with their defaults, appended to `--help`.
pub fn config_key_help() -> String {
    let rendered =
        toml::to_string_pretty(&RunConfig::default()).expect("default config always serializes");
    format!(
        "Configuration keys (TOML via --config) and their defaults:\n\n{rendered}\n\
         Precedence: built-in defaults < config file < command-line flags."
    )
}
