//! Feature schema, CSV ingestion, encoding, splitting, standardization and
//! the synthetic data generator.

mod csvio;
mod encoded;
mod schema;
pub mod synth;

use thiserror::Error;

pub use csvio::{encode_unlabeled, load_csv, read_labeled, write_csv, ColumnMap, LoadedCsv, VocabMode};
pub use encoded::{
    one_hot, one_hot_groups, split_80_20, DenseMatrix, EncodedDataset, FeatureRows, Split,
    StandardizationStats,
};
pub use schema::*;
pub use synth::{generate_synthetic, GeneratorConfig, Marginal, SyntheticData, FIELD_MARGINALS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),
    #[error("value `{value}` is not in the vocabulary of `{column}`")]
    OutOfVocabulary { column: String, value: String },
    #[error("row {row}: missing or unparseable value in column `{column}`")]
    BadField { row: usize, column: String },
    #[error("dataset has no usable rows")]
    EmptyDataset,
    #[error("need at least {needed} rows, got {n}")]
    TooFewRows { n: usize, needed: usize },
    #[error("numeric column `{0}` is constant on the training rows")]
    ConstantColumn(String),
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error("incompatible schema: {0}")]
    IncompatibleSchema(String),
    #[error("generator config error: {0}")]
    Config(String),
    #[error("invalid age `{0}` (expected 7 or 28)")]
    InvalidAge(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        DataError::Csv(e.to_string())
    }
}
