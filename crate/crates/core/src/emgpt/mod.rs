//! Decoder-only model that predicts the target turn's caption and then its
//! speech codes from the framed dialogue context.

mod decode;
mod loss;
mod model;
mod train;

pub use decode::{
    caption_phase_allows, code_phase_allows, generate_caption, generate_chain, generate_codes, sample_token, ChainOutput,
    SamplingConfig, StopReason,
};
pub use loss::{chain_loss, target_log_likelihood, ChainLoss};
pub use model::{EmGPT, EmGPTConfig, ModelInput};
pub use train::{
    load_checkpoint, load_optimizer, loss_and_grads, save_checkpoint, teacher_forcing_accuracy, write_metrics_csv,
    CheckpointMeta, StepRecord, Trainer,
};

#[derive(Debug, thiserror::Error)]
pub enum EmgptError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    Overlength { len: usize, max: usize },
    #[error("caption and speech masks are both empty")]
    EmptyMasks,
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}
