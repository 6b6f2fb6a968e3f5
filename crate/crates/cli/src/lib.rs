//! Command implementations behind the `cat2vec` binary. Each command reads
//! its inputs from disk, writes its artifacts and returns a summary for the
//! caller to print.

pub mod commands;
pub mod config;

use std::path::PathBuf;

pub use commands::{
    dump_embeddings, eval, gradcheck, prepare, synth, train, GradCheckSummary, Manifest, SupportEntry,
    TrainOutcome,
};
pub use config::{EpisodeConfig, EvalConfig, PartitionConfig, RunConfig, VocabConfig, CONFIG_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] cat2vec_core::Error),
    #[error("gradient check failed: {objective} reached relative error {error:e} (tolerance {tolerance:e})")]
    GradCheck {
        objective: cat2vec_core::Objective,
        error: f64,
        tolerance: f64,
    },
}

impl CliError {
    /// 1 for usage and I/O problems, 2 for everything the model or data
    /// rejected.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 1,
            CliError::Core(e) if e.is_io() => 1,
            CliError::Core(_) | CliError::GradCheck { .. } => 2,
        }
    }
}
