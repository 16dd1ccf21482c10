//! Synthetic planted-interest data, a small CTR model around the encoders,
//! training, evaluation, ablation grids and timing suites.

pub mod ablation;
pub mod bench;
pub mod encoders;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod train;

use thiserror::Error;

use crate::attention::AttentionError;
use crate::tensor::TensorError;

pub use ablation::{eval_ablations, AblationCell, AblationGrid, CellResult};
pub use bench::{linear_fit, BenchOptions, BenchReport, LinearFit, Suite};
pub use metrics::{auc, bce_loss, bce_with_logit, logloss, sigmoid};
pub use model::{CtrConfig, CtrModel, EncoderKind, EncoderParams, ModelInput, Prediction};
pub use synth::{generate_user, Corpus, HistoryEvent, HistoryLen, Sample, SampleKind, SampleMeta, SynthConfig, TargetItem};
pub use train::{evaluate, predict_all, train, EvalReport, OptimizerKind, TracePoint, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("AUC needs both classes")]
    SingleClass,
    #[error("training diverged at step {step}: loss {loss}, gradient norm {grad_norm}")]
    Diverged { step: usize, loss: f64, grad_norm: f64 },
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
