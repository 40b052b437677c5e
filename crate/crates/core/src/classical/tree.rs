//! Greedy binary regression tree with variance-reduction splits.

use rand::seq::index::sample;
use rand::Rng;

use crate::dataset::{EncodedDataset, FeatureRows};

use super::ClassicalError;

/// Column-major view of a training set as consumed by tree growth. Features
/// are numbered numeric first, then categorical, as in the schema.
#[derive(Clone, Debug)]
pub struct TreeData {
    numeric: Vec<Vec<f64>>,
    categorical: Vec<Vec<u32>>,
    cardinality: Vec<usize>,
    targets: Vec<f64>,
}

impl TreeData {
    pub fn new(rows: &FeatureRows, targets: &[f64]) -> Self {
        assert_eq!(rows.n_rows(), targets.len(), "one target per row");
        let schema = rows.schema();
        Self {
            numeric: (0..rows.p_num()).map(|j| rows.numeric_column(j)).collect(),
            categorical: (0..rows.p_cat()).map(|j| rows.categorical_column(j)).collect(),
            cardinality: schema.categorical.iter().map(|c| c.cardinality()).collect(),
            targets: targets.to_vec(),
        }
    }

    pub fn from_dataset(ds: &EncodedDataset) -> Self {
        Self::new(ds.features(), ds.targets())
    }

    /// Builds data directly from columns. Categorical columns carry their
    /// cardinality; every column must have one value per target.
    pub fn from_columns(
        numeric: Vec<Vec<f64>>,
        categorical: Vec<(Vec<u32>, usize)>,
        targets: Vec<f64>,
    ) -> Self {
        let n = targets.len();
        assert!(numeric.iter().all(|c| c.len() == n));
        assert!(categorical
            .iter()
            .all(|(c, k)| c.len() == n && c.iter().all(|&v| (v as usize) < *k)));
        let (categorical, cardinality) = categorical.into_iter().unzip();
        Self {
            numeric,
            categorical,
            cardinality,
            targets,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn p_num(&self) -> usize {
        self.numeric.len()
    }

    pub fn n_features(&self) -> usize {
        self.numeric.len() + self.categorical.len()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn numeric_row(&self, i: usize) -> Vec<f64> {
        self.numeric.iter().map(|c| c[i]).collect()
    }

    pub fn categorical_row(&self, i: usize) -> Vec<u32> {
        self.categorical.iter().map(|c| c[i]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitRule {
    /// Rows with `x <= t` go left.
    Threshold(f64),
    /// Rows in this category go left, all others right.
    Category(u32),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub rule: SplitRule,
    /// `Var(parent) − (n_L/n)·Var(L) − (n_R/n)·Var(R)`.
    pub delta_var: f64,
    /// The same reduction expressed as a sum of squares, `n·ΔVar`.
    pub sse_reduction: f64,
}

/// Best variance-reducing split of `rows` over `features`, or `None` when
/// no admissible split reduces variance. Each child must keep at least
/// `min_leaf` rows. Ties go to the lowest feature, then the lowest
/// threshold or category.
pub fn best_split(
    data: &TreeData,
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = rows.len();
    let min_leaf = min_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    let y0 = data.targets[rows[0]];
    if rows.iter().all(|&r| data.targets[r] == y0) {
        return None;
    }
    let nf = n as f64;
    let mean = rows.iter().map(|&r| data.targets[r]).sum::<f64>() / nf;
    let (mut s_tot, mut q_tot) = (0.0, 0.0);
    for &r in rows {
        let d = data.targets[r] - mean;
        s_tot += d;
        q_tot += d * d;
    }
    let parent_sse = q_tot - s_tot * s_tot / nf;
    if !(parent_sse > 0.0) {
        return None;
    }
    let floor = parent_sse * 1e-12;

    let mut best: Option<(usize, SplitRule, f64)> = None;
    let mut consider = |feature: usize, rule: SplitRule, reduction: f64| {
        if reduction > floor && best.is_none_or(|(_, _, b)| reduction > b) {
            best = Some((feature, rule, reduction));
        }
    };
    let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &f in features {
        if f < data.p_num() {
            let col = &data.numeric[f];
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (col[r], r)));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let (mut s, mut q) = (0.0, 0.0);
            for k in 1..n {
                let d = data.targets[pairs[k - 1].1] - mean;
                s += d;
                q += d * d;
                if k < min_leaf || n - k < min_leaf || pairs[k - 1].0 == pairs[k].0 {
                    continue;
                }
                let (kl, kr) = (k as f64, (n - k) as f64);
                let (sr, qr) = (s_tot - s, q_tot - q);
                let reduction = parent_sse - (q - s * s / kl) - (qr - sr * sr / kr);
                let t = pairs[k - 1].0 + (pairs[k].0 - pairs[k - 1].0) / 2.0;
                consider(f, SplitRule::Threshold(t), reduction);
            }
        } else {
            let j = f - data.p_num();
            let col = &data.categorical[j];
            let k = data.cardinality[j];
            let mut count = vec![0usize; k];
            let mut sum = vec![0.0; k];
            let mut sq = vec![0.0; k];
            for &r in rows {
                let c = col[r] as usize;
                let d = data.targets[r] - mean;
                count[c] += 1;
                sum[c] += d;
                sq[c] += d * d;
            }
            for c in 0..k {
                let nl = count[c];
                if nl < min_leaf || n - nl < min_leaf {
                    continue;
                }
                let (kl, kr) = (nl as f64, (n - nl) as f64);
                let (sr, qr) = (s_tot - sum[c], q_tot - sq[c]);
                let reduction = parent_sse - (sq[c] - sum[c] * sum[c] / kl) - (qr - sr * sr / kr);
                consider(f, SplitRule::Category(c as u32), reduction);
            }
        }
    }
    best.map(|(feature, rule, reduction)| SplitChoice {
        feature,
        rule,
        delta_var: reduction / nf,
        sse_reduction: reduction,
    })
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeConfig {
    /// `None` grows until the other limits stop it.
    #[serde(with = "super::depth_limit")]
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: Some(12),
            min_samples_leaf: 5,
            min_samples_split: 10,
        }
    }
}

impl TreeConfig {
    pub fn unlimited() -> Self {
        Self {
            max_depth: None,
            min_samples_leaf: 1,
            min_samples_split: 2,
        }
    }

    pub fn validate(&self) -> Result<(), ClassicalError> {
        if self.min_samples_leaf == 0 {
            return Err(ClassicalError::InvalidConfig("min_samples_leaf must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(ClassicalError::InvalidConfig("min_samples_split must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode {
    Leaf {
        value: f64,
        samples: u32,
    },
    Internal {
        feature: u32,
        rule: SplitRule,
        left: u32,
        right: u32,
        samples: u32,
        sse_reduction: f64,
    },
}

/// Arena-stored tree; node 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
    pub p_num: usize,
    pub n_features: usize,
}

impl RegressionTree {
    pub fn predict_row(&self, numeric: &[f64], categorical: &[u32]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Internal {
                    feature,
                    rule,
                    left,
                    right,
                    ..
                } => {
                    let f = *feature as usize;
                    let go_left = match *rule {
                        SplitRule::Threshold(t) => numeric[f] <= t,
                        SplitRule::Category(c) => categorical[f - self.p_num] == c,
                    };
                    at = if go_left { *left } else { *right } as usize;
                }
            }
        }
    }

    pub fn predict(&self, rows: &FeatureRows) -> Vec<f64> {
        (0..rows.n_rows())
            .map(|i| self.predict_row(rows.numeric_row(i), rows.categorical_row(i)))
            .collect()
    }

    /// Total SSE reduction contributed by splits on each feature.
    pub fn importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        for node in &self.nodes {
            if let TreeNode::Internal {
                feature,
                sse_reduction,
                ..
            } = node
            {
                imp[*feature as usize] += sse_reduction;
            }
        }
        imp
    }

    pub fn depth(&self) -> usize {
        let mut deepest = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((at, d)) = stack.pop() {
            deepest = deepest.max(d);
            if let TreeNode::Internal { left, right, .. } = &self.nodes[at] {
                stack.push((*left as usize, d + 1));
                stack.push((*right as usize, d + 1));
            }
        }
        deepest
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}

/// Grows a tree on every row of `data`, in row order, considering every
/// feature at every node.
pub fn fit_tree(data: &TreeData, cfg: &TreeConfig) -> Result<RegressionTree, ClassicalError> {
    cfg.validate()?;
    if data.n_rows() == 0 {
        return Err(ClassicalError::EmptyTrainingSet);
    }
    Ok(grow::<rand_chacha::ChaCha8Rng>(
        data,
        (0..data.n_rows()).collect(),
        cfg,
        None,
    ))
}

/// Grows a tree on `rows` (duplicates allowed). With a sampler, each node
/// searches `m_try` features drawn without replacement from its RNG.
pub(crate) fn grow<R: Rng>(
    data: &TreeData,
    mut rows: Vec<usize>,
    cfg: &TreeConfig,
    mut sampler: Option<(&mut R, usize)>,
) -> RegressionTree {
    let p = data.n_features();
    let all_features: Vec<usize> = (0..p).collect();
    let mut nodes = vec![TreeNode::Leaf {
        value: 0.0,
        samples: 0,
    }];
    let mut stack = vec![(0usize, 0usize, rows.len(), 0usize)];
    let mut left_buf = Vec::new();
    let mut right_buf = Vec::new();
    while let Some((at, lo, hi, depth)) = stack.pop() {
        let here = &rows[lo..hi];
        let n = here.len();
        let value = here.iter().map(|&r| data.targets[r]).sum::<f64>() / n as f64;
        let leaf = TreeNode::Leaf {
            value,
            samples: n as u32,
        };
        let stop = cfg.max_depth.is_some_and(|d| depth >= d)
            || n < cfg.min_samples_split
            || n < 2 * cfg.min_samples_leaf;
        if stop {
            nodes[at] = leaf;
            continue;
        }
        let sampled;
        let features: &[usize] = match sampler.as_mut() {
            Some((rng, m_try)) if *m_try < p => {
                let mut idx = sample(&mut **rng, p, *m_try).into_vec();
                idx.sort_unstable();
                sampled = idx;
                &sampled
            }
            _ => &all_features,
        };
        let Some(choice) = best_split(data, here, features, cfg.min_samples_leaf) else {
            nodes[at] = leaf;
            continue;
        };
        left_buf.clear();
        right_buf.clear();
        for &r in here {
            let go_left = match choice.rule {
                SplitRule::Threshold(t) => data.numeric[choice.feature][r] <= t,
                SplitRule::Category(c) => {
                    data.categorical[choice.feature - data.p_num()][r] == c
                }
            };
            if go_left {
                left_buf.push(r);
            } else {
                right_buf.push(r);
            }
        }
        let mid = lo + left_buf.len();
        rows[lo..mid].copy_from_slice(&left_buf);
        rows[mid..hi].copy_from_slice(&right_buf);
        let left = nodes.len();
        nodes.push(leaf.clone());
        nodes.push(leaf);
        nodes[at] = TreeNode::Internal {
            feature: choice.feature as u32,
            rule: choice.rule,
            left: left as u32,
            right: left as u32 + 1,
            samples: n as u32,
            sse_reduction: choice.sse_reduction,
        };
        stack.push((left + 1, mid, hi, depth + 1));
        stack.push((left, lo, mid, depth + 1));
    }
    RegressionTree {
        nodes,
        p_num: data.p_num(),
        n_features: p,
    }
}

/// Single decision tree bound to its training schema.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeModel {
    pub schema_hash: u64,
    pub tree: RegressionTree,
}

impl TreeModel {
    pub fn fit(train: &EncodedDataset, cfg: &TreeConfig) -> Result<Self, ClassicalError> {
        Ok(Self {
            schema_hash: train.schema().fingerprint(),
            tree: fit_tree(&TreeData::from_dataset(train), cfg)?,
        })
    }

    pub fn predict(&self, rows: &FeatureRows) -> Result<Vec<f64>, ClassicalError> {
        super::check_schema(self.schema_hash, rows)?;
        Ok(self.tree.predict(rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand() -> TreeData {
        TreeData::from_columns(
            vec![vec![1.0, 2.0, 3.0, 4.0]],
            vec![],
            vec![0.0, 0.0, 10.0, 10.0],
        )
    }

    #[test]
    fn hand_split() {
        let s = best_split(&hand(), &[0, 1, 2, 3], &[0], 1).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.rule, SplitRule::Threshold(2.5));
        assert!((s.delta_var - 25.0).abs() < 1e-12);
    }

    #[test]
    fn constant_targets_do_not_split() {
        let d = TreeData::from_columns(vec![vec![1.0, 2.0, 3.0]], vec![], vec![7.0; 3]);
        assert_eq!(best_split(&d, &[0, 1, 2], &[0], 1), None);
    }

    #[test]
    fn hand_tree_has_depth_one() {
        let t = fit_tree(&hand(), &TreeConfig::unlimited()).unwrap();
        assert_eq!(t.depth(), 1);
        assert_eq!(t.predict_row(&[1.5], &[]), 0.0);
        assert_eq!(t.predict_row(&[3.5], &[]), 10.0);
    }

    #[test]
    fn depth_zero_is_mean_leaf() {
        let cfg = TreeConfig {
            max_depth: Some(0),
            ..TreeConfig::unlimited()
        };
        let t = fit_tree(&hand(), &cfg).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict_row(&[4.0], &[]), 5.0);
    }

    #[test]
    fn category_split_is_one_vs_rest() {
        let d = TreeData::from_columns(
            vec![],
            vec![(vec![0, 1, 2, 1, 0, 2], 3)],
            vec![1.0, 9.0, 1.0, 9.0, 1.0, 1.0],
        );
        let s = best_split(&d, &[0, 1, 2, 3, 4, 5], &[0], 1).unwrap();
        assert_eq!(s.rule, SplitRule::Category(1));
    }

    #[test]
    fn min_leaf_is_respected() {
        let s = best_split(&hand(), &[0, 1, 2, 3], &[0], 2).unwrap();
        assert_eq!(s.rule, SplitRule::Threshold(2.5));
        assert_eq!(best_split(&hand(), &[0, 1, 2, 3], &[0], 3), None);
    }

    #[test]
    fn xor_targets_stop_growth() {
        // no single split reduces variance, so growth stops at the root
        let d = TreeData::from_columns(
            vec![vec![0.0, 0.0, 1.0, 1.0], vec![0.0, 1.0, 0.0, 1.0]],
            vec![],
            vec![0.0, 1.0, 1.0, 0.0],
        );
        let t = fit_tree(&d, &TreeConfig::unlimited()).unwrap();
        assert_eq!(t.nodes.len(), 1);
    }
}
