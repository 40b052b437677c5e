//! Tabular transformer encoder: one token per input feature.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{EncodedDataset, FeatureRows, FeatureSchema, StandardizationStats};
use crate::nd::{
    kaiming_bound, kaiming_uniform, uniform, NdError, ParamId, ParamStore, Tape, Tensor, Var,
    LAYER_NORM_EPS,
};

use super::embednet::{check_schema, load_values};
use super::training::{self, predict_scaled, Batch, Network, Schedule, TrainingHistory};
use super::{NeuralError, TARGET_SCALE};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TabTransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    /// Feed-forward width; `None` means `4·d_model`.
    pub ffn: Option<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
}

impl Default for TabTransformerConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            layers: 2,
            ffn: None,
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 300,
            validation_fraction: 0.1,
        }
    }
}

impl TabTransformerConfig {
    fn schedule(&self) -> Schedule {
        Schedule {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            validation_fraction: self.validation_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerArch {
    pub numeric: usize,
    pub cardinalities: Vec<usize>,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
}

impl TransformerArch {
    pub fn new(schema: &FeatureSchema, cfg: &TabTransformerConfig) -> Result<Self, NeuralError> {
        let ffn = cfg.ffn.unwrap_or(4 * cfg.d_model);
        if cfg.d_model == 0 || cfg.heads == 0 || !cfg.d_model.is_multiple_of(cfg.heads) {
            return Err(NeuralError::InvalidConfig(format!(
                "d_model {} must be a positive multiple of heads {}",
                cfg.d_model, cfg.heads
            )));
        }
        if ffn == 0 {
            return Err(NeuralError::InvalidConfig("ffn width must be >= 1".into()));
        }
        for c in &schema.categorical {
            if c.cardinality() == 0 {
                return Err(NeuralError::EmptyVocab(c.name.clone()));
            }
        }
        Ok(Self {
            numeric: schema.p_num(),
            cardinalities: schema.categorical.iter().map(|c| c.cardinality()).collect(),
            d_model: cfg.d_model,
            heads: cfg.heads,
            layers: cfg.layers,
            ffn,
        })
    }

    pub fn tokens(&self) -> usize {
        self.numeric + self.cardinalities.len()
    }

    /// Number of scalar parameters, saturating on absurd sizes.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let groups = self
            .cardinalities
            .iter()
            .map(|&k| k.saturating_add(1).saturating_mul(d))
            .fold(0, usize::saturating_add);
        let per_layer = [
            d.saturating_mul(d).saturating_add(d).saturating_mul(4),
            self.ffn.saturating_mul(d).saturating_mul(2),
            self.ffn,
            5 * d,
        ]
        .into_iter()
        .fold(0, usize::saturating_add);
        [
            2 * self.numeric * d,
            groups,
            self.tokens().saturating_mul(d),
            per_layer.saturating_mul(self.layers),
            d + 1,
        ]
        .into_iter()
        .fold(0, usize::saturating_add)
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    norm1: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
    norm2: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
struct Layout {
    numeric: Option<(ParamId, ParamId)>,
    /// One-hot group projections, stored as `[K×d]` so that applying them
    /// to a one-hot row is a row lookup.
    groups: Vec<(ParamId, ParamId)>,
    identity: ParamId,
    layers: Vec<EncoderLayer>,
    head_w: ParamId,
    head_b: ParamId,
}

#[derive(Clone, Debug)]
struct Net {
    arch: TransformerArch,
    store: ParamStore,
    layout: Layout,
}

fn affine(
    store: &mut ParamStore,
    name: &str,
    out: usize,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(ParamId, ParamId), NdError> {
    Ok((
        store.add(format!("{name}.weight"), kaiming_uniform(&[out, fan_in], rng)?),
        store.add(format!("{name}.bias"), Tensor::zeros(&[out])?),
    ))
}

fn norm(store: &mut ParamStore, name: &str, d: usize) -> Result<(ParamId, ParamId), NdError> {
    Ok((
        store.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0)?),
        store.add(format!("{name}.beta"), Tensor::zeros(&[d])?),
    ))
}

impl Net {
    fn init(arch: &TransformerArch, head_bias: f64, rng: &mut ChaCha8Rng) -> Result<Self, NdError> {
        let d = arch.d_model;
        let mut store = ParamStore::new();
        let numeric = if arch.numeric > 0 {
            let p = arch.numeric;
            // each scalar token is an affine map from one input, fan_in 1
            Some((
                store.add("tokens.numeric.weight", uniform(&[p, d], -kaiming_bound(1), kaiming_bound(1), rng)?),
                store.add("tokens.numeric.bias", Tensor::zeros(&[p, d])?),
            ))
        } else {
            None
        };
        let mut groups = Vec::with_capacity(arch.cardinalities.len());
        for (j, &k) in arch.cardinalities.iter().enumerate() {
            let bound = kaiming_bound(k);
            groups.push((
                store.add(format!("tokens.group.{j}.weight"), uniform(&[k, d], -bound, bound, rng)?),
                store.add(format!("tokens.group.{j}.bias"), Tensor::zeros(&[d])?),
            ));
        }
        let identity = store.add("tokens.identity", uniform(&[arch.tokens(), d], -0.1, 0.1, rng)?);
        let mut layers = Vec::with_capacity(arch.layers);
        for i in 0..arch.layers {
            let pre = format!("layer.{i}");
            let (wq, bq) = affine(&mut store, &format!("{pre}.query"), d, d, rng)?;
            let (wk, bk) = affine(&mut store, &format!("{pre}.key"), d, d, rng)?;
            let (wv, bv) = affine(&mut store, &format!("{pre}.value"), d, d, rng)?;
            let (wo, bo) = affine(&mut store, &format!("{pre}.output"), d, d, rng)?;
            let norm1 = norm(&mut store, &format!("{pre}.norm1"), d)?;
            let ff1 = affine(&mut store, &format!("{pre}.ff1"), arch.ffn, d, rng)?;
            let ff2 = affine(&mut store, &format!("{pre}.ff2"), d, arch.ffn, rng)?;
            let norm2 = norm(&mut store, &format!("{pre}.norm2"), d)?;
            layers.push(EncoderLayer {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                norm1,
                ff1,
                ff2,
                norm2,
            });
        }
        let head_w = store.add("head.weight", kaiming_uniform(&[1, d], rng)?);
        let head_b = store.add("head.bias", Tensor::full(&[1], head_bias)?);
        Ok(Self {
            arch: arch.clone(),
            store,
            layout: Layout {
                numeric,
                groups,
                identity,
                layers,
                head_w,
                head_b,
            },
        })
    }

    /// Forward pass; when `attention` is given, the post-softmax attention
    /// node of every layer is appended to it.
    fn run(&self, tape: &mut Tape, batch: &Batch, mut attention: Option<&mut Vec<Var>>) -> Result<Var, NdError> {
        let s = &self.store;
        let l = &self.layout;
        let (d, t, h) = (self.arch.d_model, self.arch.tokens(), self.arch.heads);
        let m = batch.m;
        let mut parts = Vec::with_capacity(1 + l.groups.len());
        if let (Some((w, b)), Some(num)) = (l.numeric, &batch.numeric) {
            let x = tape.input(num.clone());
            let (w, b) = (tape.param(s, w), tape.param(s, b));
            parts.push(tape.scalar_tokens(x, w, b)?);
        }
        for ((w, b), idx) in l.groups.iter().zip(&batch.categorical) {
            let table = tape.param(s, *w);
            let e = tape.embedding(table, idx)?;
            let b = tape.param(s, *b);
            parts.push(tape.add_bias(e, b)?);
        }
        let wide = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
        let tokens = tape.reshape(wide, &[m * t, d])?;
        let ident = tape.param(s, l.identity);
        let mut x = tape.add_tiled(tokens, ident)?;
        for layer in &l.layers {
            let lin = |tape: &mut Tape, x: Var, w: ParamId, b: ParamId| -> Result<Var, NdError> {
                let (w, b) = (tape.param(s, w), tape.param(s, b));
                tape.linear(x, w, Some(b))
            };
            let q = lin(tape, x, layer.wq, layer.bq)?;
            let k = lin(tape, x, layer.wk, layer.bk)?;
            let v = lin(tape, x, layer.wv, layer.bv)?;
            let scores = tape.head_scores(q, k, t, h)?;
            let probs = tape.softmax_rows(scores)?;
            if let Some(out) = attention.as_deref_mut() {
                out.push(probs);
            }
            let mixed = tape.head_mix(probs, v, t, h)?;
            let attn = lin(tape, mixed, layer.wo, layer.bo)?;
            let res = tape.add(x, attn)?;
            let (g, b) = (tape.param(s, layer.norm1.0), tape.param(s, layer.norm1.1));
            x = tape.layer_norm(res, g, b, LAYER_NORM_EPS)?;
            let f = lin(tape, x, layer.ff1.0, layer.ff1.1)?;
            let f = tape.gelu(f)?;
            let f = lin(tape, f, layer.ff2.0, layer.ff2.1)?;
            let res = tape.add(x, f)?;
            let (g, b) = (tape.param(s, layer.norm2.0), tape.param(s, layer.norm2.1));
            x = tape.layer_norm(res, g, b, LAYER_NORM_EPS)?;
        }
        let pooled = tape.mean_pool(x, t)?;
        let (w, b) = (tape.param(s, l.head_w), tape.param(s, l.head_b));
        tape.linear(pooled, w, Some(b))
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
        self.run(tape, batch, None)
    }
}

#[derive(Clone, Debug)]
pub struct TabTransformerModel {
    schema_hash: u64,
    stats: StandardizationStats,
    net: Net,
    history: TrainingHistory,
}

impl TabTransformerModel {
    pub fn fit(train: &EncodedDataset, cfg: &TabTransformerConfig, seed: u64) -> Result<Self, NeuralError> {
        Self::fit_with_validation(train, None, cfg, seed)
    }

    pub fn fit_with_validation(
        train: &EncodedDataset,
        validation: Option<&EncodedDataset>,
        cfg: &TabTransformerConfig,
        seed: u64,
    ) -> Result<Self, NeuralError> {
        let schedule = cfg.schedule();
        schedule.validate()?;
        let arch = TransformerArch::new(train.schema(), cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = training::prepare(train, validation, cfg.validation_fraction, &mut rng)?;
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

    pub fn from_parameters(
        schema_hash: u64,
        arch: TransformerArch,
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

    /// Attention probabilities of every layer for the given rows, each
    /// `[(m·heads·T)×T]` with row `(b·heads + h)·T + i` holding token `i`'s
    /// weights under head `h` for sample `b`.
    pub fn attention(&self, rows: &FeatureRows) -> Result<Vec<Tensor>, NeuralError> {
        check_schema(self.schema_hash, rows)?;
        let z = self.stats.apply(rows)?;
        let idx: Vec<usize> = (0..z.n_rows()).collect();
        let batch = Batch::gather(&z, &idx)?;
        let mut tape = Tape::new();
        let mut probs = Vec::new();
        self.net.run(&mut tape, &batch, Some(&mut probs))?;
        Ok(probs.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    pub fn schema_hash(&self) -> u64 {
        self.schema_hash
    }

    pub fn arch(&self) -> &TransformerArch {
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
