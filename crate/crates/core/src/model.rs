//! The common fit/predict contract over all five model families.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classical::{
    ClassicalError, ForestConfig, ForestModel, LinearConfig, LinearModel, TreeConfig, TreeModel,
};
use crate::dataset::{EncodedDataset, FeatureRows};
use crate::neural::{
    EmbedNetConfig, EmbedNetModel, NeuralError, TabTransformerConfig, TabTransformerModel,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Tree,
    Forest,
    Transformer,
    #[serde(rename = "embednet")]
    EmbedNet,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Linear,
        ModelKind::Tree,
        ModelKind::Forest,
        ModelKind::Transformer,
        ModelKind::EmbedNet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Tree => "tree",
            ModelKind::Forest => "forest",
            ModelKind::Transformer => "transformer",
            ModelKind::EmbedNet => "embednet",
        }
    }

    /// Row label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Linear => "Linear Regression",
            ModelKind::Tree => "Decision Tree",
            ModelKind::Forest => "Random Forest",
            ModelKind::Transformer => "Transformer",
            ModelKind::EmbedNet => "Embedding NN",
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown model kind `{0}` (valid kinds: linear, tree, forest, transformer, embednet)")]
pub struct UnknownModelKind(pub String);

impl FromStr for ModelKind {
    type Err = UnknownModelKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownModelKind(s.to_string()))
    }
}

/// Hyperparameters for every family.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfigs {
    pub linear: LinearConfig,
    pub tree: TreeConfig,
    pub forest: ForestConfig,
    pub transformer: TabTransformerConfig,
    pub embednet: EmbedNetConfig,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Classical(#[from] ClassicalError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Anything that maps feature rows to strengths in psi.
pub trait Regressor {
    fn predict(&self, rows: &FeatureRows) -> Result<Vec<f64>, ModelError>;
}

#[derive(Clone, Debug)]
pub enum TrainedModel {
    Linear(LinearModel),
    Tree(TreeModel),
    Forest(ForestModel),
    Transformer(TabTransformerModel),
    EmbedNet(EmbedNetModel),
}

impl TrainedModel {
    /// Fits `kind` on raw (unstandardized) training rows.
    pub fn fit(
        kind: ModelKind,
        train: &EncodedDataset,
        cfg: &ModelConfigs,
        seed: u64,
    ) -> Result<Self, ModelError> {
        Ok(match kind {
            ModelKind::Linear => Self::Linear(LinearModel::fit(train, &cfg.linear)?),
            ModelKind::Tree => Self::Tree(TreeModel::fit(train, &cfg.tree)?),
            ModelKind::Forest => Self::Forest(ForestModel::fit(train, &cfg.forest, seed)?),
            ModelKind::Transformer => {
                Self::Transformer(TabTransformerModel::fit(train, &cfg.transformer, seed)?)
            }
            ModelKind::EmbedNet => Self::EmbedNet(EmbedNetModel::fit(train, &cfg.embednet, seed)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Linear(_) => ModelKind::Linear,
            Self::Tree(_) => ModelKind::Tree,
            Self::Forest(_) => ModelKind::Forest,
            Self::Transformer(_) => ModelKind::Transformer,
            Self::EmbedNet(_) => ModelKind::EmbedNet,
        }
    }

    pub fn schema_hash(&self) -> u64 {
        match self {
            Self::Linear(m) => m.schema_hash,
            Self::Tree(m) => m.schema_hash,
            Self::Forest(m) => m.schema_hash,
            Self::Transformer(m) => m.schema_hash(),
            Self::EmbedNet(m) => m.schema_hash(),
        }
    }
}

impl Regressor for TrainedModel {
    fn predict(&self, rows: &FeatureRows) -> Result<Vec<f64>, ModelError> {
        Ok(match self {
            Self::Linear(m) => m.predict(rows)?,
            Self::Tree(m) => m.predict(rows)?,
            Self::Forest(m) => m.predict(rows)?,
            Self::Transformer(m) => m.predict(rows)?,
            Self::EmbedNet(m) => m.predict(rows)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
            assert_eq!(ModelKind::from_tag(k.tag()), Some(k));
        }
        let err = "svm".parse::<ModelKind>().unwrap_err();
        assert!(err.to_string().contains("embednet"));
    }
}
