//! Binary model file: a fixed header, the schema snapshot, standardization
//! statistics and a per-family payload. All numbers are little-endian.
//!
//! ```text
//! magic "CCSMODEL" | version u32 | kind u8 | schema hash u64 | seed u64
//! schema TOML      (u32 length + UTF-8)
//! stats            u8 present, then u32 p + p means + p stds
//! payload          per model kind, see `write_payload`
//! ```

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ccs_core::classical::{
    ForestModel, LinearFit, LinearModel, RegressionTree, SplitRule, TreeModel, TreeNode,
};
use ccs_core::dataset::{FeatureSchema, StandardizationStats};
use ccs_core::model::{ModelKind, TrainedModel};
use ccs_core::nd::{ParamStore, Tensor};
use ccs_core::neural::{
    EmbedNetArch, EmbedNetModel, TabTransformerConfig, TabTransformerModel, TransformerArch,
};

use crate::CliError;

pub const MAGIC: &[u8; 8] = b"CCSMODEL";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model together with the schema it was fitted under.
#[derive(Clone, Debug)]
pub struct ModelContainer {
    pub schema: Arc<FeatureSchema>,
    /// Seed the model was fitted with.
    pub seed: u64,
    pub model: TrainedModel,
}

impl ModelContainer {
    pub fn new(schema: Arc<FeatureSchema>, seed: u64, model: TrainedModel) -> Result<Self, CliError> {
        if schema.fingerprint() != model.schema_hash() {
            return Err(CliError::Format(format!(
                "model schema hash {:016x} does not match the schema ({:016x})",
                model.schema_hash(),
                schema.fingerprint()
            )));
        }
        Ok(Self { schema, seed, model })
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u8(self.kind().tag());
        w.u64(self.model.schema_hash());
        w.u64(self.seed);
        w.str(&self.schema.to_toml());
        match stats(&self.model) {
            Some(s) => {
                w.u8(1);
                w.len(s.mean.len());
                w.f64s(&s.mean);
                w.f64s(&s.std);
            }
            None => w.u8(0),
        }
        write_payload(&mut w, &self.model);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let mut r = Reader { buf: bytes, at: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(CliError::Format("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CliError::Format(format!("unsupported format version {version}")));
        }
        let tag = r.u8()?;
        let kind = ModelKind::from_tag(tag)
            .ok_or_else(|| CliError::Format(format!("unknown model kind tag {tag}")))?;
        let schema_hash = r.u64()?;
        let seed = r.u64()?;
        let schema = FeatureSchema::from_toml(&r.str()?)
            .map_err(|e| CliError::Format(format!("embedded schema: {e}")))?;
        if schema.fingerprint() != schema_hash {
            return Err(CliError::Format(
                "schema hash in header does not match the embedded schema".into(),
            ));
        }
        let stats = match r.u8()? {
            0 => None,
            1 => {
                let p = r.len()?;
                Some(StandardizationStats {
                    mean: r.f64s(p)?,
                    std: r.f64s(p)?,
                })
            }
            other => return Err(CliError::Format(format!("bad stats flag {other}"))),
        };
        let model = read_payload(&mut r, kind, &schema, schema_hash, stats)?;
        if r.at != bytes.len() {
            return Err(CliError::Format(format!(
                "{} trailing bytes after the payload",
                bytes.len() - r.at
            )));
        }
        Ok(Self {
            schema: Arc::new(schema),
            seed,
            model,
        })
    }

    /// Writes through a temporary file so a failed write leaves no partial
    /// model behind.
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn stats(model: &TrainedModel) -> Option<&StandardizationStats> {
    match model {
        TrainedModel::Transformer(m) => Some(m.stats()),
        TrainedModel::EmbedNet(m) => Some(m.stats()),
        _ => None,
    }
}

fn write_payload(w: &mut Writer, model: &TrainedModel) {
    match model {
        TrainedModel::Linear(m) => {
            w.f64(m.fit.intercept);
            w.len(m.fit.coefficients.len());
            w.f64s(&m.fit.coefficients);
            w.f64s(&m.fit.column_std);
        }
        TrainedModel::Tree(m) => write_tree(w, &m.tree),
        TrainedModel::Forest(m) => {
            w.len(m.m_try);
            w.u8(m.bootstrap as u8);
            w.len(m.trees.len());
            for (tree, seed) in m.trees.iter().zip(&m.tree_seeds) {
                w.u64(*seed);
                write_tree(w, tree);
            }
        }
        TrainedModel::Transformer(m) => {
            let a = m.arch();
            for v in [a.d_model, a.heads, a.layers, a.ffn] {
                w.len(v);
            }
            write_tensors(w, m.parameters());
        }
        TrainedModel::EmbedNet(m) => {
            let a = m.arch();
            w.len(a.hidden);
            w.len(a.blocks);
            write_tensors(w, m.parameters());
        }
    }
}

fn read_payload(
    r: &mut Reader,
    kind: ModelKind,
    schema: &FeatureSchema,
    schema_hash: u64,
    stats: Option<StandardizationStats>,
) -> Result<TrainedModel, CliError> {
    let need_stats = matches!(kind, ModelKind::Transformer | ModelKind::EmbedNet);
    if need_stats != stats.is_some() {
        return Err(CliError::Format(format!("stats block does not fit a {kind} model")));
    }
    if let Some(s) = &stats {
        if s.mean.len() != schema.p_num() {
            return Err(CliError::Format("stats width does not match the schema".into()));
        }
    }
    let bad = |e: ccs_core::neural::NeuralError| CliError::Format(e.to_string());
    Ok(match kind {
        ModelKind::Linear => {
            let intercept = r.f64()?;
            let n = r.len()?;
            if n != schema.one_hot_width() {
                return Err(CliError::Format("coefficient count does not match the schema".into()));
            }
            TrainedModel::Linear(LinearModel {
                schema_hash,
                fit: LinearFit {
                    intercept,
                    coefficients: r.f64s(n)?,
                    column_std: r.f64s(n)?,
                },
            })
        }
        ModelKind::Tree => TrainedModel::Tree(TreeModel {
            schema_hash,
            tree: read_tree(r, schema)?,
        }),
        ModelKind::Forest => {
            let m_try = r.len()?;
            let bootstrap = match r.u8()? {
                0 => false,
                1 => true,
                other => return Err(CliError::Format(format!("bad bootstrap flag {other}"))),
            };
            let n = r.len()?;
            if n == 0 {
                return Err(CliError::Format("forest without trees".into()));
            }
            let mut trees = Vec::with_capacity(n.min(1 << 16));
            let mut tree_seeds = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                tree_seeds.push(r.u64()?);
                trees.push(read_tree(r, schema)?);
            }
            TrainedModel::Forest(ForestModel {
                schema_hash,
                trees,
                tree_seeds,
                m_try,
                bootstrap,
            })
        }
        ModelKind::Transformer => {
            let cfg = TabTransformerConfig {
                d_model: r.len()?,
                heads: r.len()?,
                layers: r.len()?,
                ffn: Some(r.len()?),
                ..Default::default()
            };
            let arch = TransformerArch::new(schema, &cfg).map_err(bad)?;
            let values = read_tensors(r)?;
            check_count(arch.parameter_count(), &values)?;
            let stats = stats.expect("checked above");
            TrainedModel::Transformer(
                TabTransformerModel::from_parameters(schema_hash, arch, stats, values).map_err(bad)?,
            )
        }
        ModelKind::EmbedNet => {
            let hidden = r.len()?;
            let blocks = r.len()?;
            let arch = EmbedNetArch::new(schema, hidden, blocks).map_err(bad)?;
            let values = read_tensors(r)?;
            check_count(arch.parameter_count(), &values)?;
            let stats = stats.expect("checked above");
            TrainedModel::EmbedNet(
                EmbedNetModel::from_parameters(schema_hash, arch, stats, values).map_err(bad)?,
            )
        }
    })
}

const LEAF: u8 = 0;
const THRESHOLD: u8 = 1;
const CATEGORY: u8 = 2;

fn write_tree(w: &mut Writer, tree: &RegressionTree) {
    w.len(tree.nodes.len());
    for node in &tree.nodes {
        match node {
            TreeNode::Leaf { value, samples } => {
                w.u8(LEAF);
                w.f64(*value);
                w.u32(*samples);
            }
            TreeNode::Internal {
                feature,
                rule,
                left,
                right,
                samples,
                sse_reduction,
            } => {
                match rule {
                    SplitRule::Threshold(t) => {
                        w.u8(THRESHOLD);
                        w.f64(*t);
                    }
                    SplitRule::Category(c) => {
                        w.u8(CATEGORY);
                        w.u32(*c);
                    }
                }
                w.u32(*feature);
                w.u32(*left);
                w.u32(*right);
                w.u32(*samples);
                w.f64(*sse_reduction);
            }
        }
    }
}

/// Reads one tree and checks that every node reference and feature index
/// is in range and that children come after their parent, so prediction
/// cannot loop or index out of bounds.
fn read_tree(r: &mut Reader, schema: &FeatureSchema) -> Result<RegressionTree, CliError> {
    let n = r.len()?;
    if n == 0 {
        return Err(CliError::Format("tree without nodes".into()));
    }
    let p_num = schema.p_num();
    let n_features = schema.n_features();
    let mut nodes = Vec::with_capacity(n.min(1 << 20));
    for i in 0..n {
        let node = match r.u8()? {
            LEAF => TreeNode::Leaf {
                value: r.f64()?,
                samples: r.u32()?,
            },
            tag @ (THRESHOLD | CATEGORY) => {
                let rule = if tag == THRESHOLD {
                    SplitRule::Threshold(r.f64()?)
                } else {
                    SplitRule::Category(r.u32()?)
                };
                let feature = r.u32()?;
                let left = r.u32()?;
                let right = r.u32()?;
                let f = feature as usize;
                let valid_feature = match rule {
                    SplitRule::Threshold(_) => f < p_num,
                    SplitRule::Category(c) => {
                        f >= p_num
                            && f < n_features
                            && (c as usize) < schema.categorical[f - p_num].cardinality()
                    }
                };
                let valid_children = [left, right].iter().all(|&c| (c as usize) > i && (c as usize) < n);
                if !valid_feature || !valid_children {
                    return Err(CliError::Format(format!("invalid split at tree node {i}")));
                }
                TreeNode::Internal {
                    feature,
                    rule,
                    left,
                    right,
                    samples: r.u32()?,
                    sse_reduction: r.f64()?,
                }
            }
            other => return Err(CliError::Format(format!("unknown tree node tag {other}"))),
        };
        nodes.push(node);
    }
    Ok(RegressionTree {
        nodes,
        p_num,
        n_features,
    })
}

fn write_tensors(w: &mut Writer, store: &ParamStore) {
    w.len(store.len());
    for p in store.iter() {
        w.str(p.name());
        let shape = p.value().shape();
        w.len(shape.len());
        for &d in shape {
            w.len(d);
        }
        w.f64s(p.value().data());
    }
}

/// Rejects a parameter directory whose size disagrees with the stored
/// architecture before any network is allocated for it.
fn check_count(expected: usize, values: &[(String, Tensor)]) -> Result<(), CliError> {
    let found: usize = values.iter().map(|(_, t)| t.len()).sum();
    if found == expected {
        Ok(())
    } else {
        Err(CliError::Format(format!(
            "architecture needs {expected} parameters, file holds {found}"
        )))
    }
}

fn read_tensors(r: &mut Reader) -> Result<Vec<(String, Tensor)>, CliError> {
    let n = r.len()?;
    let mut out = Vec::with_capacity(n.min(1 << 12));
    for _ in 0..n {
        let name = r.str()?;
        let rank = r.len()?;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CliError::Format(format!("tensor `{name}` is too large")))?;
        let data = r.f64s(count)?;
        let tensor = Tensor::new(shape, data)
            .map_err(|e| CliError::Format(format!("tensor `{name}`: {e}")))?;
        out.push((name, tensor));
    }
    Ok(out)
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    fn len(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("length fits in u32"));
    }

    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|x| self.f64(*x));
    }

    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CliError::Format(format!("truncated at byte {}", self.at)))?;
        let out = &self.buf[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CliError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, CliError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn len(&mut self) -> Result<usize, CliError> {
        Ok(self.u32()? as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CliError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| CliError::Format("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn str(&mut self) -> Result<String, CliError> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CliError::Format("invalid UTF-8".into()))
    }
}
