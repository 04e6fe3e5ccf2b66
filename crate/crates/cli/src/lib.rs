//! Batch entry points for the tool-augmented GRPO pipeline: taxonomy and data
//! generation, SFT, GRPO training, evaluation, ablations and trace linting.

pub mod ablation;
pub mod commands;
pub mod config;
pub mod pipeline;

use std::path::Path;

use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("lint failed: {0}")]
    Lint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Lint(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Lint(m) | CliError::Config(m) | CliError::Io(m) | CliError::Numerical(m) => m.clone(),
        }
    }
}
