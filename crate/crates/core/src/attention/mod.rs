//! Segmented sigmoid-gated target attention with global refinement
//! ("compress, then refine").
//!
//! The history `H ∈ R^{L×d}` is cut into `L/w` windows. Each window is
//! collapsed into one vector by gating its tokens against the target with
//! independent sigmoids, so a window with nothing relevant can go silent.
//! The compressed rows pass through an FFN + layer norm, then `M` stacked
//! softmax target-attention layers update the target through residuals.
//! The final representation fuses the global vector with a max-pool over
//! segments and the most recent segments.

pub mod checkpoint;
pub mod config;
pub mod fusion;
pub mod gradcheck;
pub mod gsta;
pub mod model;
pub mod params;
pub mod refine;
pub mod sta;

use thiserror::Error;

use crate::tensor::TensorError;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use config::{GateKind, LaserConfig};
pub use fusion::{fuse, FusionOutput};
pub use gradcheck::{finite_diff_grad, finite_diff_params};
pub use gsta::{gsta_forward, GstaOutput};
pub use model::{laser_backward, laser_forward, laser_forward_cached, ForwardCache, LaserGradients, LaserSession};
pub use params::{GstaLayerParams, LaserParams, Parameters, RecencyTable, StaParams, TensorView};
pub use refine::segment_refine;
pub use sta::{apply_recency, split_seq, sta_naive, sta_vectorized, SequenceBatchInput, StaOutput};

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("every segment is masked")]
    AllSegmentsMasked,
    #[error("backward called without a cached forward pass")]
    NoForwardCache,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
