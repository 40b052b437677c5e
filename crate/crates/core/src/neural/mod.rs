//! Embedding-based feed-forward network and tabular transformer encoder.

mod embednet;
mod training;
mod transformer;

use thiserror::Error;

use crate::dataset::DataError;
use crate::nd::NdError;

pub use embednet::{embedding_dim, EmbedNetArch, EmbedNetConfig, EmbedNetModel};
pub use training::{Batch, TrainingHistory, TARGET_SCALE};
pub use transformer::{TabTransformerConfig, TabTransformerModel, TransformerArch};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("categorical feature `{0}` has an empty vocabulary")]
    EmptyVocab(String),
    #[error("rows were encoded with schema {found:016x}, model expects {expected:016x}")]
    IncompatibleSchema { expected: u64, found: u64 },
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("stored parameters do not match the architecture: {0}")]
    ParameterMismatch(String),
}
