//! Experiment harness around `shaped-ucbvi-core`: configuration, the five
//! commands (`run`, `sweep`, `prune`, `modelsel`, `decay`), and
//! deterministic data emission.

use thiserror::Error;

pub mod config;
pub mod jobs;
pub mod output;

pub use config::{resolve, BonusFamily, FileConfig, Overrides, ResolvedConfig};
pub use jobs::{cmd_decay, cmd_modelsel, cmd_prune, cmd_run, cmd_sweep};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for runtime ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Runtime(_) => 3,
        }
    }
}
