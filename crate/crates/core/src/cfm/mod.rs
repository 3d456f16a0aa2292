//! Conditional flow matching over log-mel frames: optimal-transport
//! interpolant, regression loss, Euler sampler, and the conditioned field network.

mod field;
mod flow;
mod train;
mod vocoder;

pub use field::{embed_caption, BoundField, CFMConfig, ConditioningBundle, FieldNet};
pub use flow::{
    cfm_loss, cfm_loss_with_draws, draw_flow, euler_integrate, flow_sample, ot_flow, standard_normal, target_field,
    CfmLossOutput, ConditionalField, FlowSample, LossNorm, VectorField,
};
pub use train::{
    batch_loss, euler_solve, fit_normalization, load_cfm, load_cfm_optimizer, save_cfm, synthesize, CfmCheckpointMeta,
    CfmExample, CfmStepRecord, CfmTrainer,
};
pub use vocoder::{griffin_lim, mel_to_power};

#[derive(Debug, thiserror::Error)]
pub enum CfmError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("time {0} outside [0, 1]")]
    Time(f64),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}
