//! Attention-gated residual CNN with hand-written forward and backward passes.
//!
//! Feature maps are `H×W×C` [`RealTensor`](crate::tensors::RealTensor)s.
//! Gradients of every parameter are returned in the order given by
//! [`AgCnnModel::parameters`].

mod adam;
mod checkpoint;
mod conv;
mod gate;
mod loss;
mod model;
mod train;

use thiserror::Error;

use crate::tensors::{FormatError, ShapeError};

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, ParamEntry, SIDECAR};
pub use conv::{Conv2d, ConvGrad, DepthwiseConv, Init};
pub use gate::{AttentionGate, DepthwiseSeparableConv, GateCache, GateGrad, SeparableGrad};
pub use loss::{loss, LossValue};
pub use model::{AgCnnModel, ForwardCache, Gradients, ModelConfig, GATE_FILTERS};
pub use train::{
    deblur, mean_loss, percentile_scale, train, EpochRecord, Sample, TrainConfig, TrainLog,
    Trainer, TrainerState, NORM_PERCENTILE,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("expected shape {expected}, got {got:?}")]
    Shape { expected: String, got: Vec<usize> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Tensor(#[from] ShapeError),
    #[error("checkpoint sidecar: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
