//! Linear regression, a greedy regression tree and a bagged forest.

mod forest;
mod linear;
mod tree;

use thiserror::Error;

use crate::dataset::FeatureRows;

pub use forest::{fit_forest, ForestConfig, ForestModel};
pub use linear::{fit_linear, LinearConfig, LinearFit, LinearModel, DEFAULT_RIDGE};
pub use tree::{
    best_split, fit_tree, RegressionTree, SplitChoice, SplitRule, TreeConfig, TreeData, TreeModel,
    TreeNode,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassicalError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("linear solver failed: {0}")]
    Solver(String),
    #[error("rows were encoded with schema {found:016x}, model expects {expected:016x}")]
    IncompatibleSchema { expected: u64, found: u64 },
    #[error("{n} training rows, need at least {needed}")]
    TooFewRows { n: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub(crate) fn check_schema(expected: u64, rows: &FeatureRows) -> Result<(), ClassicalError> {
    let found = rows.schema().fingerprint();
    if found == expected {
        Ok(())
    } else {
        Err(ClassicalError::IncompatibleSchema { expected, found })
    }
}

/// Serde form of an optional depth limit: an integer, or `"none"` for no
/// limit (a missing key would fall back to the default instead).
pub(crate) mod depth_limit {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(d) => s.serialize_u64(*d as u64),
            None => s.serialize_str("none"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Depth(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Depth(v) => Ok(Some(v)),
            Raw::Word(w) if w == "none" => Ok(None),
            Raw::Word(w) => Err(de::Error::custom(format!(
                "expected a depth or \"none\", got \"{w}\""
            ))),
        }
    }
}
