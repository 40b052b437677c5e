//! Intrinsic and permutation feature importance over the original features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{one_hot_groups, EncodedDataset, FeatureSchema};
use crate::model::{Regressor, TrainedModel};
use crate::seed::derive_seed;

use super::{mae, EvalError};

pub const DEFAULT_REPEATS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceMethod {
    Intrinsic,
    Permutation,
}

/// Importance per original feature, in schema order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub method: ImportanceMethod,
    /// Non-negative, summing to one.
    pub values: Vec<f64>,
    /// Values before normalization.
    pub raw: Vec<f64>,
    /// Set when every raw value was zero and `values` is uniform.
    pub uniform_fallback: bool,
}

/// Scales non-negative scores to sum to one; all-zero input becomes uniform
/// and is flagged.
pub fn normalize_importance(raw: &[f64]) -> (Vec<f64>, bool) {
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        (raw.iter().map(|v| v / total).collect(), false)
    } else {
        let p = raw.len().max(1) as f64;
        (vec![1.0 / p; raw.len()], true)
    }
}

fn build(method: ImportanceMethod, raw: Vec<f64>) -> Importance {
    let (values, uniform_fallback) = normalize_importance(&raw);
    Importance {
        method,
        values,
        raw,
        uniform_fallback,
    }
}

/// Mean increase in test MAE when a feature's column is shuffled, clipped
/// at zero. A categorical feature is shuffled as a whole column, so its
/// one-hot group moves jointly.
pub fn permutation_importance(
    model: &dyn Regressor,
    test: &EncodedDataset,
    repeats: usize,
    seed: u64,
) -> Result<Importance, EvalError> {
    let n = test.n_rows();
    if n < 10 {
        return Err(EvalError::TooFewRows { n, needed: 10 });
    }
    let repeats = repeats.max(1);
    let actual = test.targets();
    let baseline = mae(actual, &model.predict(test.features())?)?;
    let p = test.schema().n_features();
    let mut raw = Vec::with_capacity(p);
    for f in 0..p {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, f as u64));
        let mut total = 0.0;
        for _ in 0..repeats {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut rows = test.features().clone();
            rows.permute_feature(f, &order);
            total += mae(actual, &model.predict(&rows)?)? - baseline;
        }
        raw.push((total / repeats as f64).max(0.0));
    }
    Ok(build(ImportanceMethod::Permutation, raw))
}

/// Importance read from the fitted model itself, or `None` for the neural
/// families. Linear: `|β|·std` of each design column, summed per feature.
/// Tree: SSE reduction per feature. Forest: per-tree normalized SSE
/// reduction averaged over trees.
pub fn intrinsic_importance(model: &TrainedModel, schema: &FeatureSchema) -> Option<Importance> {
    let raw = match model {
        TrainedModel::Linear(m) => {
            let mut out = vec![0.0; schema.n_features()];
            let fit = &m.fit;
            for ((g, b), s) in one_hot_groups(schema).iter().zip(&fit.coefficients).zip(&fit.column_std) {
                out[*g] += b.abs() * s;
            }
            out
        }
        TrainedModel::Tree(m) => m.tree.importance(),
        TrainedModel::Forest(m) => m.importance(),
        TrainedModel::Transformer(_) | TrainedModel::EmbedNet(_) => return None,
    };
    Some(build(ImportanceMethod::Intrinsic, raw))
}
