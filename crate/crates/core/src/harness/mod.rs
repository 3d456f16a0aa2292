//! Command implementations behind the `convsynth` binary: annotation,
//! two-stage EmGPT training, flow-matching training, synthesis, evaluation
//! and corpus statistics.

pub mod cli;
mod commands;
pub mod config;
pub mod data;
mod log;

pub use commands::{
    checkpoint_path, cmd_annotate, cmd_eval, cmd_stats, cmd_synth, cmd_train_cfm, cmd_train_emgpt, stats_table, AnnotateArgs,
    AnnotateSummary, EvalArgs, LlmChoice, SynthArgs, SynthOutput, TrainArgs, TrainSummary, training_targets, train_session_ids,
};
pub use config::{HistoryCaptions, RunConfig};
pub use log::{ExperimentLog, LogEvent};

pub(crate) use crate::emcap::derive_seed;

/// Failure classes mapped onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("runtime: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            HarnessError::Data(_) => 3,
            HarnessError::Runtime(_) => 4,
        }
    }
}
