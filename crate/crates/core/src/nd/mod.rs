//! Dense tensors, a reverse-mode tape, Adam and weight initializers.
//!
//! Everything is `f64` and single-threaded. Stochastic helpers take the
//! caller's RNG; nothing here owns random state.

pub(crate) mod gemm;
pub mod gradcheck;
mod init;
mod optim;
mod param;
mod tape;
mod tensor;


use thiserror::Error;

pub use init::{kaiming_bound, kaiming_uniform, uniform};
pub use optim::Adam;
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{mse, Gradients, Tape, Var};
pub use tensor::Tensor;

/// LayerNorm epsilon used by both network families.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NdError {
    #[error("invalid tensor shape {shape:?}: every dimension must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not match {len} data values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a matrix, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },
    #[error("{op}: empty dimension")]
    EmptyDimension { op: &'static str },
    #[error("index {index} out of vocabulary of size {vocab}")]
    OutOfVocabulary { index: usize, vocab: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("backward needs a single-element loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("cannot split {rows}x{width} into {tokens} tokens with {heads} heads")]
    HeadLayout {
        rows: usize,
        width: usize,
        tokens: usize,
        heads: usize,
    },
}
