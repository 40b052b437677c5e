use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Age, DataError, FeatureSchema};

/// Input rows encoded against a schema: a row-major numeric block
/// `[n × p_num]` and a row-major block of vocabulary indices `[n × p_cat]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRows {
    schema: Arc<FeatureSchema>,
    n: usize,
    numeric: Vec<f64>,
    categorical: Vec<u32>,
}

impl FeatureRows {
    pub fn new(
        schema: Arc<FeatureSchema>,
        numeric: Vec<f64>,
        categorical: Vec<u32>,
    ) -> Result<Self, DataError> {
        let (p_num, p_cat) = (schema.p_num(), schema.p_cat());
        let n = if p_num > 0 {
            numeric.len() / p_num
        } else if p_cat > 0 {
            categorical.len() / p_cat
        } else {
            return Err(DataError::Schema("schema has no input features".into()));
        };
        if numeric.len() != n * p_num || categorical.len() != n * p_cat {
            return Err(DataError::Inconsistent(format!(
                "numeric block has {} values and categorical block {} for {p_num}+{p_cat} columns",
                numeric.len(),
                categorical.len()
            )));
        }
        for (i, &ix) in categorical.iter().enumerate() {
            let spec = &schema.categorical[i % p_cat];
            if ix as usize >= spec.cardinality() {
                return Err(DataError::Inconsistent(format!(
                    "index {ix} out of range for `{}` (K = {})",
                    spec.name,
                    spec.cardinality()
                )));
            }
        }
        if let Some(v) = numeric.iter().find(|v| !v.is_finite()) {
            return Err(DataError::Inconsistent(format!("non-finite numeric value {v}")));
        }
        Ok(Self {
            schema,
            n,
            numeric,
            categorical,
        })
    }

    pub fn schema(&self) -> &Arc<FeatureSchema> {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn p_num(&self) -> usize {
        self.schema.p_num()
    }

    pub fn p_cat(&self) -> usize {
        self.schema.p_cat()
    }

    pub fn numeric(&self) -> &[f64] {
        &self.numeric
    }

    pub fn categorical(&self) -> &[u32] {
        &self.categorical
    }

    pub fn numeric_row(&self, i: usize) -> &[f64] {
        let p = self.p_num();
        &self.numeric[i * p..(i + 1) * p]
    }

    pub fn categorical_row(&self, i: usize) -> &[u32] {
        let p = self.p_cat();
        &self.categorical[i * p..(i + 1) * p]
    }

    pub fn numeric_column(&self, j: usize) -> Vec<f64> {
        let p = self.p_num();
        (0..self.n).map(|i| self.numeric[i * p + j]).collect()
    }

    pub fn categorical_column(&self, j: usize) -> Vec<u32> {
        let p = self.p_cat();
        (0..self.n).map(|i| self.categorical[i * p + j]).collect()
    }

    /// Value of original feature `f` (numerical first, then categorical
    /// indices cast to `f64`).
    pub fn feature_value(&self, i: usize, f: usize) -> f64 {
        let p = self.p_num();
        if f < p {
            self.numeric[i * p + f]
        } else {
            f64::from(self.categorical[i * self.p_cat() + f - p])
        }
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let (p_num, p_cat) = (self.p_num(), self.p_cat());
        let mut numeric = Vec::with_capacity(rows.len() * p_num);
        let mut categorical = Vec::with_capacity(rows.len() * p_cat);
        for &r in rows {
            numeric.extend_from_slice(self.numeric_row(r));
            categorical.extend_from_slice(self.categorical_row(r));
        }
        Self {
            schema: Arc::clone(&self.schema),
            n: rows.len(),
            numeric,
            categorical,
        }
    }

    /// Replaces the numeric block, keeping the categorical one.
    pub fn with_numeric(&self, numeric: Vec<f64>) -> Result<Self, DataError> {
        Self::new(Arc::clone(&self.schema), numeric, self.categorical.clone())
    }

    /// Re-associates the rows with a schema whose vocabularies extend the
    /// current one; existing indices stay valid.
    pub fn with_schema(&self, schema: Arc<FeatureSchema>) -> Result<Self, DataError> {
        if !schema.extends(&self.schema) {
            return Err(DataError::IncompatibleSchema(
                "new schema does not extend the one the rows were encoded with".into(),
            ));
        }
        Ok(Self {
            schema,
            ..self.clone()
        })
    }

    /// Writes a permuted copy of original feature `f` into the rows.
    pub fn permute_feature(&mut self, f: usize, order: &[usize]) {
        let (p_num, p_cat) = (self.p_num(), self.p_cat());
        if f < p_num {
            let col = self.numeric_column(f);
            for (i, &src) in order.iter().enumerate() {
                self.numeric[i * p_num + f] = col[src];
            }
        } else {
            let j = f - p_num;
            let col = self.categorical_column(j);
            for (i, &src) in order.iter().enumerate() {
                self.categorical[i * p_cat + j] = col[src];
            }
        }
    }
}

/// Labeled rows for one curing age. Always non-empty, all targets positive.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDataset {
    features: FeatureRows,
    targets: Vec<f64>,
    age: Age,
}

impl EncodedDataset {
    pub fn new(features: FeatureRows, targets: Vec<f64>, age: Age) -> Result<Self, DataError> {
        if features.n_rows() == 0 {
            return Err(DataError::EmptyDataset);
        }
        if targets.len() != features.n_rows() {
            return Err(DataError::Inconsistent(format!(
                "{} targets for {} rows",
                targets.len(),
                features.n_rows()
            )));
        }
        if let Some(t) = targets.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(DataError::Inconsistent(format!(
                "strength targets must be positive, found {t}"
            )));
        }
        Ok(Self {
            features,
            targets,
            age,
        })
    }

    pub fn features(&self) -> &FeatureRows {
        &self.features
    }

    pub fn schema(&self) -> &Arc<FeatureSchema> {
        self.features.schema()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn age(&self) -> Age {
        self.age
    }

    pub fn n_rows(&self) -> usize {
        self.features.n_rows()
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self, DataError> {
        let targets = rows.iter().map(|&r| self.targets[r]).collect();
        Self::new(self.features.subset(rows), targets, self.age)
    }

    pub fn with_features(&self, features: FeatureRows) -> Result<Self, DataError> {
        Self::new(features, self.targets.clone(), self.age)
    }

    pub fn with_schema(&self, schema: Arc<FeatureSchema>) -> Result<Self, DataError> {
        self.with_features(self.features.with_schema(schema)?)
    }
}

/// Result of [`split_80_20`]: the two subsets and the row indices behind them.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: EncodedDataset,
    pub test: EncodedDataset,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Seeded random partition: the first `⌈0.8·n⌉` rows of a uniform
/// permutation go to training, the rest to test.
pub fn split_80_20(ds: &EncodedDataset, seed: u64) -> Result<Split, DataError> {
    let n = ds.n_rows();
    if n < 5 {
        return Err(DataError::TooFewRows { n, needed: 5 });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (4 * n).div_ceil(5);
    let test_rows = order.split_off(n_train);
    let train_rows = order;
    Ok(Split {
        train: ds.subset(&train_rows)?,
        test: ds.subset(&test_rows)?,
        train_rows,
        test_rows,
    })
}

/// Per-column mean and population standard deviation of the numeric block.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    /// Fits on training rows; constant columns are rejected.
    pub fn fit(rows: &FeatureRows) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        let n = rows.n_rows() as f64;
        let mut mean = Vec::with_capacity(rows.p_num());
        let mut std = Vec::with_capacity(rows.p_num());
        for j in 0..rows.p_num() {
            let col = rows.numeric_column(j);
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            if !(s > 1e-12 * m.abs().max(1.0)) {
                return Err(DataError::ConstantColumn(rows.schema().numerical[j].name.clone()));
            }
            mean.push(m);
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, rows: &FeatureRows) -> Result<FeatureRows, DataError> {
        let p = rows.p_num();
        if p != self.mean.len() {
            return Err(DataError::IncompatibleSchema(format!(
                "stats cover {} numeric columns, rows have {p}",
                self.mean.len()
            )));
        }
        let numeric = rows
            .numeric()
            .iter()
            .enumerate()
            .map(|(k, v)| (v - self.mean[k % p]) / self.std[k % p])
            .collect();
        rows.with_numeric(numeric)
    }

    pub fn invert(&self, rows: &FeatureRows) -> Result<FeatureRows, DataError> {
        let p = rows.p_num();
        let numeric = rows
            .numeric()
            .iter()
            .enumerate()
            .map(|(k, v)| v * self.std[k % p] + self.mean[k % p])
            .collect();
        rows.with_numeric(numeric)
    }
}

/// Row-major dense matrix used for one-hot designs.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }
}

/// Numeric block followed by one indicator column per vocabulary entry of
/// every categorical feature.
pub fn one_hot(rows: &FeatureRows) -> DenseMatrix {
    let schema = rows.schema();
    let width = schema.one_hot_width();
    let p_num = rows.p_num();
    let mut data = vec![0.0; rows.n_rows() * width];
    for i in 0..rows.n_rows() {
        let dst = &mut data[i * width..(i + 1) * width];
        dst[..p_num].copy_from_slice(rows.numeric_row(i));
        let mut offset = p_num;
        for (spec, &ix) in schema.categorical.iter().zip(rows.categorical_row(i)) {
            dst[offset + ix as usize] = 1.0;
            offset += spec.cardinality();
        }
    }
    DenseMatrix {
        rows: rows.n_rows(),
        cols: width,
        data,
    }
}

/// For every one-hot column, the original feature it belongs to.
pub fn one_hot_groups(schema: &FeatureSchema) -> Vec<usize> {
    let mut groups: Vec<usize> = (0..schema.p_num()).collect();
    for (j, spec) in schema.categorical.iter().enumerate() {
        groups.extend(std::iter::repeat_n(schema.p_num() + j, spec.cardinality()));
    }
    groups
}
