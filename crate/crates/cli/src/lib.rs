//! Configuration, model persistence and the `generate`, `train`, `compare`
//! and `predict` commands behind the `ccs` binary.

pub mod commands;
pub mod config;
pub mod container;

use std::io;
use std::path::{Path, PathBuf};

use ccs_core::dataset::DataError;
use ccs_core::eval::EvalError;
use ccs_core::model::ModelError;
use thiserror::Error;

pub use commands::{cmd_compare, cmd_generate, cmd_predict, cmd_train, CompareSummary, TrainSummary};
pub use config::{RunConfig, OUTPUT_DIR_ENV};
pub use container::ModelContainer;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("model file format error: {0}")]
    Format(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{} model run(s) failed: {}", .0.len(), .0.join("; "))]
    ModelFailures(Vec<String>),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}
