//! Bagged random forest of regression trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{EncodedDataset, FeatureRows};
use crate::seed::derive_seed;

use super::tree::{grow, RegressionTree, TreeConfig, TreeData};
use super::ClassicalError;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features searched per node; `None` means `max(1, p / 3)`.
    pub m_try: Option<usize>,
    #[serde(with = "super::depth_limit")]
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            m_try: None,
            max_depth: None,
            min_samples_leaf: 1,
            min_samples_split: 2,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    pub fn tree_limits(&self) -> TreeConfig {
        TreeConfig {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            min_samples_split: self.min_samples_split,
        }
    }

    pub fn resolved_m_try(&self, p: usize) -> usize {
        self.m_try.unwrap_or((p / 3).max(1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForestModel {
    pub schema_hash: u64,
    pub trees: Vec<RegressionTree>,
    pub tree_seeds: Vec<u64>,
    pub m_try: usize,
    pub bootstrap: bool,
}

/// Fits `cfg.n_trees` trees. Tree `i` draws everything (bootstrap rows and
/// per-node feature subsets) from `derive_seed(seed, i)`, so the result is
/// the same for any thread count.
pub fn fit_forest(
    data: &TreeData,
    cfg: &ForestConfig,
    seed: u64,
) -> Result<Vec<(RegressionTree, u64)>, ClassicalError> {
    let limits = cfg.tree_limits();
    limits.validate()?;
    let p = data.n_features();
    let m_try = cfg.resolved_m_try(p);
    if cfg.n_trees == 0 {
        return Err(ClassicalError::InvalidConfig("n_trees must be >= 1".into()));
    }
    if m_try == 0 || m_try > p {
        return Err(ClassicalError::InvalidConfig(format!(
            "m_try must be in [1, {p}], got {m_try}"
        )));
    }
    let n = data.n_rows();
    if n < 2 {
        return Err(ClassicalError::TooFewRows { n, needed: 2 });
    }
    Ok((0..cfg.n_trees)
        .into_par_iter()
        .map(|i| {
            let tree_seed = derive_seed(seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            (grow(data, rows, &limits, Some((&mut rng, m_try))), tree_seed)
        })
        .collect())
}

/// Mean of per-tree predictions. Values are summed in sorted order so the
/// result does not depend on the order of the trees.
pub(crate) fn aggregate(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

impl ForestModel {
    pub fn fit(train: &EncodedDataset, cfg: &ForestConfig, seed: u64) -> Result<Self, ClassicalError> {
        let data = TreeData::from_dataset(train);
        let fitted = fit_forest(&data, cfg, seed)?;
        let (trees, tree_seeds) = fitted.into_iter().unzip();
        Ok(Self {
            schema_hash: train.schema().fingerprint(),
            trees,
            tree_seeds,
            m_try: cfg.resolved_m_try(data.n_features()),
            bootstrap: cfg.bootstrap,
        })
    }

    pub fn predict_row(&self, numeric: &[f64], categorical: &[u32]) -> f64 {
        let mut values: Vec<f64> = self
            .trees
            .iter()
            .map(|t| t.predict_row(numeric, categorical))
            .collect();
        aggregate(&mut values)
    }

    pub fn predict(&self, rows: &FeatureRows) -> Result<Vec<f64>, ClassicalError> {
        super::check_schema(self.schema_hash, rows)?;
        Ok((0..rows.n_rows())
            .into_par_iter()
            .map(|i| self.predict_row(rows.numeric_row(i), rows.categorical_row(i)))
            .collect())
    }

    /// Per-tree SSE-reduction importance, each tree normalized to sum to one,
    /// averaged over trees. Trees without splits contribute nothing.
    pub fn importance(&self) -> Vec<f64> {
        let p = self.trees[0].n_features;
        let mut total = vec![0.0; p];
        for tree in &self.trees {
            let imp = tree.importance();
            let s: f64 = imp.iter().sum();
            if s > 0.0 {
                total.iter_mut().zip(&imp).for_each(|(t, v)| *t += v / s);
            }
        }
        let n = self.trees.len() as f64;
        total.iter_mut().for_each(|t| *t /= n);
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_ignores_order() {
        let mut a = [0.1, 0.7, 1e16, -1e16, 0.3];
        let mut b = [-1e16, 0.3, 0.1, 1e16, 0.7];
        assert_eq!(aggregate(&mut a), aggregate(&mut b));
    }

    #[test]
    fn rejects_bad_configs() {
        let d = TreeData::from_columns(vec![vec![1.0, 2.0, 3.0]], vec![], vec![1.0, 2.0, 3.0]);
        let bad = |cfg: ForestConfig| fit_forest(&d, &cfg, 0).is_err();
        assert!(bad(ForestConfig { n_trees: 0, ..Default::default() }));
        assert!(bad(ForestConfig { m_try: Some(2), ..Default::default() }));
        assert!(bad(ForestConfig { m_try: Some(0), ..Default::default() }));
        let one = TreeData::from_columns(vec![vec![1.0]], vec![], vec![1.0]);
        assert_eq!(
            fit_forest(&one, &ForestConfig::default(), 0).unwrap_err(),
            ClassicalError::TooFewRows { n: 1, needed: 2 }
        );
    }
}
