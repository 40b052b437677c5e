//! Feed-forward network over numeric inputs and learned category embeddings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{EncodedDataset, FeatureRows, FeatureSchema, StandardizationStats};
use crate::nd::{
    kaiming_uniform, uniform, NdError, ParamId, ParamStore, Tape, Tensor, Var, LAYER_NORM_EPS,
};

use super::training::{self, predict_scaled, Batch, Network, Prepared, Schedule, TrainingHistory};
use super::{NeuralError, TARGET_SCALE};

/// Embedding width `2⌈log₂K⌉`; a single-value vocabulary still gets width 2.
pub fn embedding_dim(k: usize) -> Result<usize, NeuralError> {
    match k {
        0 => Err(NeuralError::EmptyVocab(String::new())),
        1 => Ok(2),
        _ => Ok(2 * (usize::BITS - (k - 1).leading_zeros()) as usize),
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedNetConfig {
    pub hidden: usize,
    pub blocks: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
}

impl Default for EmbedNetConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            blocks: 5,
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 300,
            validation_fraction: 0.1,
        }
    }
}

impl EmbedNetConfig {
    fn schedule(&self) -> Schedule {
        Schedule {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            validation_fraction: self.validation_fraction,
        }
    }
}

/// Shape of a network: everything needed to rebuild its parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedNetArch {
    pub numeric: usize,
    pub cardinalities: Vec<usize>,
    pub hidden: usize,
    pub blocks: usize,
}

impl EmbedNetArch {
    pub fn new(schema: &FeatureSchema, hidden: usize, blocks: usize) -> Result<Self, NeuralError> {
        if hidden == 0 || blocks == 0 {
            return Err(NeuralError::InvalidConfig("hidden width and block count must be >= 1".into()));
        }
        for c in &schema.categorical {
            if c.cardinality() == 0 {
                return Err(NeuralError::EmptyVocab(c.name.clone()));
            }
        }
        Ok(Self {
            numeric: schema.p_num(),
            cardinalities: schema.categorical.iter().map(|c| c.cardinality()).collect(),
            hidden,
            blocks,
        })
    }

    pub fn embedding_dims(&self) -> Vec<usize> {
        self.cardinalities
            .iter()
            .map(|&k| embedding_dim(k).expect("validated non-empty"))
            .collect()
    }

    /// Width of `[numeric ‖ emb₁ ‖ … ]`.
    pub fn input_width(&self) -> usize {
        self.numeric + self.embedding_dims().iter().sum::<usize>()
    }

    /// Number of scalar parameters, saturating on absurd sizes.
    pub fn parameter_count(&self) -> usize {
        let emb: usize = self
            .cardinalities
            .iter()
            .zip(self.embedding_dims())
            .map(|(&k, d)| k.saturating_mul(d))
            .fold(0, usize::saturating_add);
        let w = self.input_width();
        let h = self.hidden;
        let first = w.saturating_mul(h).saturating_add(3 * h);
        let rest = (h.saturating_mul(h).saturating_add(3 * h)).saturating_mul(self.blocks - 1);
        [emb, 2 * w, first, rest, h + 1].into_iter().fold(0, usize::saturating_add)
    }
}

#[derive(Clone, Debug)]
struct Block {
    w: ParamId,
    b: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    tables: Vec<ParamId>,
    in_gamma: ParamId,
    in_beta: ParamId,
    blocks: Vec<Block>,
    head_w: ParamId,
    head_b: ParamId,
}

#[derive(Clone, Debug)]
struct Net {
    arch: EmbedNetArch,
    store: ParamStore,
    layout: Layout,
}

impl Net {
    fn init(arch: &EmbedNetArch, head_bias: f64, rng: &mut ChaCha8Rng) -> Result<Self, NdError> {
        let mut store = ParamStore::new();
        let tables = arch
            .cardinalities
            .iter()
            .zip(arch.embedding_dims())
            .enumerate()
            .map(|(j, (&k, d))| Ok(store.add(format!("embedding.{j}"), uniform(&[k, d], -1.0, 1.0, rng)?)))
            .collect::<Result<Vec<_>, NdError>>()?;
        let width = arch.input_width();
        let in_gamma = store.add("input_norm.gamma", Tensor::full(&[width], 1.0)?);
        let in_beta = store.add("input_norm.beta", Tensor::zeros(&[width])?);
        let mut blocks = Vec::with_capacity(arch.blocks);
        let mut fan_in = width;
        for i in 0..arch.blocks {
            let h = arch.hidden;
            blocks.push(Block {
                w: store.add(format!("block.{i}.weight"), kaiming_uniform(&[h, fan_in], rng)?),
                b: store.add(format!("block.{i}.bias"), Tensor::zeros(&[h])?),
                gamma: store.add(format!("block.{i}.norm.gamma"), Tensor::full(&[h], 1.0)?),
                beta: store.add(format!("block.{i}.norm.beta"), Tensor::zeros(&[h])?),
            });
            fan_in = h;
        }
        let head_w = store.add("head.weight", kaiming_uniform(&[1, fan_in], rng)?);
        let head_b = store.add("head.bias", Tensor::full(&[1], head_bias)?);
        Ok(Self {
            arch: arch.clone(),
            store,
            layout: Layout {
                tables,
                in_gamma,
                in_beta,
                blocks,
                head_w,
                head_b,
            },
        })
    }
}

impl Network for Net {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<Var, NdError> {
        let s = &self.store;
        let l = &self.layout;
        let mut parts = Vec::with_capacity(1 + l.tables.len());
        if let Some(num) = &batch.numeric {
            parts.push(tape.input(num.clone()));
        }
        for (table, idx) in l.tables.iter().zip(&batch.categorical) {
            let t = tape.param(s, *table);
            parts.push(tape.embedding(t, idx)?);
        }
        let mut x = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
        let (g, b) = (tape.param(s, l.in_gamma), tape.param(s, l.in_beta));
        x = tape.layer_norm(x, g, b, LAYER_NORM_EPS)?;
        for block in &l.blocks {
            let (w, b) = (tape.param(s, block.w), tape.param(s, block.b));
            x = tape.linear(x, w, Some(b))?;
            let (g, bt) = (tape.param(s, block.gamma), tape.param(s, block.beta));
            x = tape.layer_norm(x, g, bt, LAYER_NORM_EPS)?;
            x = tape.gelu(x)?;
        }
        let (w, b) = (tape.param(s, l.head_w), tape.param(s, l.head_b));
        let out = tape.linear(x, w, Some(b))?;
        tape.relu(out)
    }
}

/// Trained embedding network with the standardization it was trained under.
#[derive(Clone, Debug)]
pub struct EmbedNetModel {
    schema_hash: u64,
    stats: StandardizationStats,
    net: Net,
    history: TrainingHistory,
}

impl EmbedNetModel {
    /// Trains on `train`, holding out `validation_fraction` of it for
    /// best-epoch selection.
    pub fn fit(train: &EncodedDataset, cfg: &EmbedNetConfig, seed: u64) -> Result<Self, NeuralError> {
        Self::fit_with_validation(train, None, cfg, seed)
    }

    /// Trains with an explicit validation set when one is given.
    pub fn fit_with_validation(
        train: &EncodedDataset,
        validation: Option<&EncodedDataset>,
        cfg: &EmbedNetConfig,
        seed: u64,
    ) -> Result<Self, NeuralError> {
        let schedule = cfg.schedule();
        schedule.validate()?;
        let arch = EmbedNetArch::new(train.schema(), cfg.hidden, cfg.blocks)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Prepared = training::prepare(train, validation, cfg.validation_fraction, &mut rng)?;
        let mean = data.fit_targets.iter().sum::<f64>() / data.fit_targets.len() as f64;
        let mut net = Net::init(&arch, mean, &mut rng)?;
        let history = training::train(&mut net, &data, &schedule, &mut rng)?;
        Ok(Self {
            schema_hash: train.schema().fingerprint(),
            stats: data.stats,
            net,
            history,
        })
    }

    /// Rebuilds a model from stored parameters, which must match the
    /// architecture's layout by name and shape.
    pub fn from_parameters(
        schema_hash: u64,
        arch: EmbedNetArch,
        stats: StandardizationStats,
        values: Vec<(String, Tensor)>,
    ) -> Result<Self, NeuralError> {
        let mut net = Net::init(&arch, 0.0, &mut ChaCha8Rng::seed_from_u64(0))?;
        load_values(&mut net.store, values)?;
        Ok(Self {
            schema_hash,
            stats,
            net,
            history: TrainingHistory::default(),
        })
    }

    pub fn predict(&self, rows: &FeatureRows) -> Result<Vec<f64>, NeuralError> {
        check_schema(self.schema_hash, rows)?;
        let z = self.stats.apply(rows)?;
        Ok(predict_scaled(&self.net, &z)?
            .into_iter()
            .map(|v| v * TARGET_SCALE)
            .collect())
    }

    pub fn schema_hash(&self) -> u64 {
        self.schema_hash
    }

    pub fn arch(&self) -> &EmbedNetArch {
        &self.net.arch
    }

    pub fn stats(&self) -> &StandardizationStats {
        &self.stats
    }

    pub fn parameters(&self) -> &ParamStore {
        &self.net.store
    }

    pub fn parameters_mut(&mut self) -> &mut ParamStore {
        &mut self.net.store
    }

    pub fn history(&self) -> &TrainingHistory {
        &self.history
    }

    /// Records a forward pass on standardized rows for inspection.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<Var, NdError> {
        self.net.forward(tape, batch)
    }
}

pub(crate) fn check_schema(expected: u64, rows: &FeatureRows) -> Result<(), NeuralError> {
    let found = rows.schema().fingerprint();
    if found == expected {
        Ok(())
    } else {
        Err(NeuralError::IncompatibleSchema { expected, found })
    }
}

pub(crate) fn load_values(store: &mut ParamStore, values: Vec<(String, Tensor)>) -> Result<(), NeuralError> {
    if values.len() != store.len() {
        return Err(NeuralError::ParameterMismatch(format!(
            "expected {} tensors, got {}",
            store.len(),
            values.len()
        )));
    }
    let ids: Vec<(ParamId, String, Vec<usize>)> = store
        .iter()
        .map(|p| (p.id(), p.name().to_string(), p.value().shape().to_vec()))
        .collect();
    for ((id, name, shape), (got_name, value)) in ids.into_iter().zip(values) {
        if name != got_name || shape != value.shape() {
            return Err(NeuralError::ParameterMismatch(format!(
                "expected `{name}` {shape:?}, got `{got_name}` {:?}",
                value.shape()
            )));
        }
        store.set_value(id, value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_dims() {
        assert_eq!(embedding_dim(142).unwrap(), 16);
        assert_eq!(embedding_dim(6).unwrap(), 6);
        assert_eq!(embedding_dim(2).unwrap(), 2);
        assert_eq!(embedding_dim(1).unwrap(), 2);
        assert_eq!(embedding_dim(3).unwrap(), 4);
        assert_eq!(embedding_dim(4).unwrap(), 4);
        assert_eq!(embedding_dim(5).unwrap(), 6);
        assert!(embedding_dim(0).is_err());
        let dims: Vec<usize> = (1..600).map(|k| embedding_dim(k).unwrap()).collect();
        assert!(dims.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn unified_width_for_concrete_schema() {
        let mut schema = FeatureSchema::concrete();
        schema.categorical[0].vocab = (0..142).map(|i| format!("c{i}")).collect();
        schema.categorical[1].vocab = (0..6).map(|i| format!("f{i}")).collect();
        let arch = EmbedNetArch::new(&schema, 128, 5).unwrap();
        assert_eq!(arch.embedding_dims(), vec![16, 6]);
        assert_eq!(arch.input_width(), 29);
    }
}
