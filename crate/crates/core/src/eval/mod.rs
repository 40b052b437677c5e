//! Metrics, feature importance and the five-model comparison.

mod compare;
mod importance;
mod metrics;

use thiserror::Error;

use crate::dataset::DataError;
use crate::model::ModelError;

pub use compare::{
    fit_seed, run_comparison, split_seed, AgeResults, ComparisonConfig, EvalReport, ImportanceEntry, MetricCell,
    ModelOutcome,
};
pub use importance::{
    intrinsic_importance, normalize_importance, permutation_importance, Importance,
    ImportanceMethod, DEFAULT_REPEATS,
};
pub use metrics::{mae, mape, r2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{actual} actual values but {predicted} predictions")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("{n} rows, need at least {needed}")]
    TooFewRows { n: usize, needed: usize },
    #[error("R² is undefined for constant actual values")]
    ConstantActuals,
    #[error("actual value at index {index} is not positive")]
    NonPositiveActual { index: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}
