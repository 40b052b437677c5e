//! Operation tape for reverse-mode differentiation.
//!
//! Every operation appends one node holding its forward value and whatever
//! it needs for the backward pass. Nodes are only ever appended, so the
//! recording order is a topological order and `backward` can walk the tape
//! from the loss node towards the front, visiting each node once.

use super::gemm::{gemm, Layout};
use super::{NdError, ParamId, ParamStore, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    AddBias {
        x: Var,
        b: Var,
    },
    Add(Var, Var),
    Scale(Var, f64),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Relu(Var),
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    Softmax(Var),
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    Sum(Var),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    ScalarTokens {
        x: Var,
        w: Var,
        b: Var,
    },
    AddTiled {
        x: Var,
        tile: Var,
    },
    HeadScores {
        q: Var,
        k: Var,
        tokens: usize,
        heads: usize,
        scale: f64,
    },
    HeadMix {
        p: Var,
        v: Var,
        tokens: usize,
        heads: usize,
    },
    MeanPool {
        x: Var,
        tokens: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation so it can be differentiated.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`]: gradients of the loss per node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
    visits: usize,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Number of nodes the backward sweep processed.
    pub fn visits(&self) -> usize {
        self.visits
    }

    /// `(parameter, gradient)` pairs for every parameter node reached.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|&(id, node)| self.grads[node].as_ref().map(|g| (id, g)))
    }
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize), NdError> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        other => Err(NdError::NotMatrix {
            op,
            shape: other.to_vec(),
        }),
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NdError {
    NdError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub(crate) fn gelu_derivative(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant input; no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input whose gradient is retained by `backward`.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Input,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.get(id).value().clone(),
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var, NdError> {
        if !value.is_finite() {
            return Err(NdError::NonFinite { op: name });
        }
        let needs_grad = match &op {
            Op::Input | Op::Param(_) => unreachable!("leaves are pushed directly"),
            Op::MatMul(a, b) | Op::Add(a, b) => self.needs(*a) || self.needs(*b),
            Op::Linear { x, w, b } => {
                self.needs(*x) || self.needs(*w) || b.is_some_and(|b| self.needs(b))
            }
            Op::AddBias { x, b } => self.needs(*x) || self.needs(*b),
            Op::Scale(x, _)
            | Op::Gelu(x)
            | Op::Relu(x)
            | Op::Softmax(x)
            | Op::Sum(x)
            | Op::Reshape(x)
            | Op::MeanPool { x, .. } => self.needs(*x),
            Op::LayerNorm { x, gamma, beta, .. } => {
                self.needs(*x) || self.needs(*gamma) || self.needs(*beta)
            }
            Op::Embedding { table, .. } => self.needs(*table),
            Op::Mse { pred, .. } => self.needs(*pred),
            Op::ConcatCols(parts) => parts.iter().any(|p| self.needs(*p)),
            Op::ScalarTokens { x, w, b } => self.needs(*x) || self.needs(*w) || self.needs(*b),
            Op::AddTiled { x, tile } => self.needs(*x) || self.needs(*tile),
            Op::HeadScores { q, k, .. } => self.needs(*q) || self.needs(*k),
            Op::HeadMix { p, v, .. } => self.needs(*p) || self.needs(*v),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Matrix product `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = dims2(ta, "matmul")?;
        let (k2, n) = dims2(tb, "matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), Layout::Plain, tb.data(), Layout::Plain, 0.0, &mut out);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b))
    }

    /// Affine map `x[m×in] · wᵀ + b` with `w` stored as `[out×in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NdError> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (m, fan_in) = dims2(tx, "linear")?;
        let (fan_out, w_in) = dims2(tw, "linear")?;
        if fan_in != w_in {
            return Err(mismatch("linear", tx, tw));
        }
        let mut out = vec![0.0; m * fan_out];
        gemm(
            m,
            fan_in,
            fan_out,
            tx.data(),
            Layout::Plain,
            tw.data(),
            Layout::Transposed,
            0.0,
            &mut out,
        );
        if let Some(b) = b {
            let tb = self.value(b);
            if tb.len() != fan_out {
                return Err(mismatch("linear", tw, tb));
            }
            for row in out.chunks_exact_mut(fan_out) {
                row.iter_mut().zip(tb.data()).for_each(|(o, b)| *o += b);
            }
        }
        self.push(
            "linear",
            Tensor::from_parts(vec![m, fan_out], out),
            Op::Linear { x, w, b },
        )
    }

    /// Adds the vector `b[n]` to every row of `x[m×n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NdError> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (_, n) = dims2(tx, "add_bias")?;
        if tb.len() != n {
            return Err(mismatch("add_bias", tx, tb));
        }
        let mut out = tx.data().to_vec();
        for row in out.chunks_exact_mut(n) {
            row.iter_mut().zip(tb.data()).for_each(|(o, b)| *o += b);
        }
        let shape = tx.shape().to_vec();
        self.push("add_bias", Tensor::from_parts(shape, out), Op::AddBias { x, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta, tb));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        self.push("add", Tensor::from_parts(shape, out), Op::Add(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, NdError> {
        let tx = self.value(x);
        let out = tx.data().iter().map(|v| v * factor).collect();
        let shape = tx.shape().to_vec();
        self.push("scale", Tensor::from_parts(shape, out), Op::Scale(x, factor))
    }

    /// Row-wise layer normalization with learned scale `gamma` and shift `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, NdError> {
        let tx = self.value(x);
        let (m, d) = match tx.shape() {
            [m, d] => (*m, *d),
            _ => return Err(NdError::EmptyDimension { op: "layer_norm" }),
        };
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.len() != d {
            return Err(mismatch("layer_norm", tx, tg));
        }
        if tb.len() != d {
            return Err(mismatch("layer_norm", tx, tb));
        }
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[i] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[i * d + j] = h;
                out[i * d + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        self.push(
            "layer_norm",
            Tensor::from_parts(vec![m, d], out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var, NdError> {
        let tx = self.value(x);
        let out = tx.data().iter().map(|&v| gelu_scalar(v)).collect();
        let shape = tx.shape().to_vec();
        self.push("gelu", Tensor::from_parts(shape, out), Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NdError> {
        let tx = self.value(x);
        let out = tx.data().iter().map(|&v| v.max(0.0)).collect();
        let shape = tx.shape().to_vec();
        self.push("relu", Tensor::from_parts(shape, out), Op::Relu(x))
    }

    /// Gathers rows of `table[K×d]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var, NdError> {
        let tt = self.value(table);
        let (k, d) = dims2(tt, "embedding")?;
        if indices.is_empty() {
            return Err(NdError::EmptyBatch);
        }
        let mut out = Vec::with_capacity(indices.len() * d);
        for &ix in indices {
            if ix >= k {
                return Err(NdError::OutOfVocabulary { index: ix, vocab: k });
            }
            out.extend_from_slice(tt.row(ix));
        }
        self.push(
            "embedding",
            Tensor::from_parts(vec![indices.len(), d], out),
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    /// Max-subtracted softmax over each row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NdError> {
        let tx = self.value(x);
        let (m, n) = dims2(tx, "softmax_rows")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            softmax_into(tx.row(i), &mut out[i * n..(i + 1) * n]);
        }
        self.push("softmax_rows", Tensor::from_parts(vec![m, n], out), Op::Softmax(x))
    }

    /// Mean squared error against a constant target; returns a `[1]` node.
    pub fn mse_loss(&mut self, pred: Var, target: &[f64]) -> Result<Var, NdError> {
        let tp = self.value(pred);
        let loss = mse(tp.data(), target)?;
        self.push(
            "mse_loss",
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NdError> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NdError> {
        let first = parts.first().ok_or(NdError::EmptyDimension { op: "concat_cols" })?;
        let (m, _) = dims2(self.value(*first), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (rows, w) = dims2(self.value(p), "concat_cols")?;
            if rows != m {
                return Err(mismatch("concat_cols", self.value(*first), self.value(p)));
            }
            widths.push(w);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(
            "concat_cols",
            Tensor::from_parts(vec![m, total], out),
            Op::ConcatCols(parts.to_vec()),
        )
    }

    /// Reinterprets the row-major buffer under a new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NdError> {
        let tx = self.value(x);
        let value = Tensor::new(shape.to_vec(), tx.data().to_vec()).map_err(|_| NdError::ShapeMismatch {
            op: "reshape",
            lhs: tx.shape().to_vec(),
            rhs: shape.to_vec(),
        })?;
        self.push("reshape", value, Op::Reshape(x))
    }

    /// Maps each scalar `x[i,j]` to the token `x[i,j]·w[j] + b[j]`; the
    /// output row `i` is the concatenation of its `p` tokens.
    pub fn scalar_tokens(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NdError> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (m, p) = dims2(tx, "scalar_tokens")?;
        let (wp, d) = dims2(tw, "scalar_tokens")?;
        if wp != p {
            return Err(mismatch("scalar_tokens", tx, tw));
        }
        if tb.shape() != tw.shape() {
            return Err(mismatch("scalar_tokens", tw, tb));
        }
        let mut out = vec![0.0; m * p * d];
        for i in 0..m {
            for j in 0..p {
                let xv = tx.data()[i * p + j];
                let dst = &mut out[(i * p + j) * d..(i * p + j + 1) * d];
                for c in 0..d {
                    dst[c] = xv * tw.data()[j * d + c] + tb.data()[j * d + c];
                }
            }
        }
        self.push(
            "scalar_tokens",
            Tensor::from_parts(vec![m, p * d], out),
            Op::ScalarTokens { x, w, b },
        )
    }

    /// Adds `tile[T×d]` to every consecutive block of `T` rows of `x`.
    pub fn add_tiled(&mut self, x: Var, tile: Var) -> Result<Var, NdError> {
        let (tx, tt) = (self.value(x), self.value(tile));
        let (rows, d) = dims2(tx, "add_tiled")?;
        let (t, d2) = dims2(tt, "add_tiled")?;
        if d != d2 || rows % t != 0 {
            return Err(mismatch("add_tiled", tx, tt));
        }
        let block = t * d;
        let mut out = tx.data().to_vec();
        for chunk in out.chunks_exact_mut(block) {
            chunk.iter_mut().zip(tt.data()).for_each(|(o, v)| *o += v);
        }
        self.push(
            "add_tiled",
            Tensor::from_parts(vec![rows, d], out),
            Op::AddTiled { x, tile },
        )
    }

    /// Per-sample, per-head scaled dot products `q·kᵀ/√d_head`.
    ///
    /// `q` and `k` are `[(m·T)×D]` with `D = heads·d_head`; the result is
    /// `[(m·heads·T)×T]`, row `(b·heads + h)·T + i` holding the scores of
    /// token `i` of sample `b` against every token under head `h`.
    pub fn head_scores(&mut self, q: Var, k: Var, tokens: usize, heads: usize) -> Result<Var, NdError> {
        let (tq, tk) = (self.value(q), self.value(k));
        let (rows, width) = dims2(tq, "head_scores")?;
        if tq.shape() != tk.shape() {
            return Err(mismatch("head_scores", tq, tk));
        }
        if tokens == 0 || heads == 0 || rows % tokens != 0 || width % heads != 0 {
            return Err(NdError::HeadLayout {
                rows,
                width,
                tokens,
                heads,
            });
        }
        let m = rows / tokens;
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; m * heads * tokens * tokens];
        for b in 0..m {
            for h in 0..heads {
                for i in 0..tokens {
                    let qi = &tq.data()[(b * tokens + i) * width + h * dh..][..dh];
                    let orow = ((b * heads + h) * tokens + i) * tokens;
                    for j in 0..tokens {
                        let kj = &tk.data()[(b * tokens + j) * width + h * dh..][..dh];
                        let dot: f64 = qi.iter().zip(kj).map(|(a, c)| a * c).sum();
                        out[orow + j] = dot * scale;
                    }
                }
            }
        }
        self.push(
            "head_scores",
            Tensor::from_parts(vec![m * heads * tokens, tokens], out),
            Op::HeadScores {
                q,
                k,
                tokens,
                heads,
                scale,
            },
        )
    }

    /// Mixes value vectors with attention weights laid out as produced by
    /// [`Tape::head_scores`]; returns `[(m·T)×D]`.
    pub fn head_mix(&mut self, p: Var, v: Var, tokens: usize, heads: usize) -> Result<Var, NdError> {
        let (tp, tv) = (self.value(p), self.value(v));
        let (rows, width) = dims2(tv, "head_mix")?;
        let (prow, pcol) = dims2(tp, "head_mix")?;
        if tokens == 0 || heads == 0 || rows % tokens != 0 || width % heads != 0 {
            return Err(NdError::HeadLayout {
                rows,
                width,
                tokens,
                heads,
            });
        }
        let m = rows / tokens;
        if pcol != tokens || prow != m * heads * tokens {
            return Err(mismatch("head_mix", tp, tv));
        }
        let dh = width / heads;
        let mut out = vec![0.0; rows * width];
        for b in 0..m {
            for h in 0..heads {
                for i in 0..tokens {
                    let prow = &tp.data()[((b * heads + h) * tokens + i) * tokens..][..tokens];
                    let dst = (b * tokens + i) * width + h * dh;
                    for (j, &w) in prow.iter().enumerate() {
                        let vj = &tv.data()[(b * tokens + j) * width + h * dh..][..dh];
                        for c in 0..dh {
                            out[dst + c] += w * vj[c];
                        }
                    }
                }
            }
        }
        self.push(
            "head_mix",
            Tensor::from_parts(vec![rows, width], out),
            Op::HeadMix {
                p,
                v,
                tokens,
                heads,
            },
        )
    }

    /// Averages each consecutive block of `tokens` rows.
    pub fn mean_pool(&mut self, x: Var, tokens: usize) -> Result<Var, NdError> {
        let tx = self.value(x);
        let (rows, d) = dims2(tx, "mean_pool")?;
        if tokens == 0 || rows % tokens != 0 {
            return Err(NdError::HeadLayout {
                rows,
                width: d,
                tokens,
                heads: 1,
            });
        }
        let m = rows / tokens;
        let inv = 1.0 / tokens as f64;
        let mut out = vec![0.0; m * d];
        for b in 0..m {
            for t in 0..tokens {
                let src = tx.row(b * tokens + t);
                out[b * d..(b + 1) * d]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(o, s)| *o += s * inv);
            }
        }
        self.push(
            "mean_pool",
            Tensor::from_parts(vec![m, d], out),
            Op::MeanPool { x, tokens },
        )
    }

    /// Reverse sweep from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NdError> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(NdError::NotScalar {
                shape: root.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0)?);
        let mut visits = 0;
        let mut params = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            visits += 1;
            self.propagate(node, &g, &mut grads);
            if let Op::Param(id) = node.op {
                params.push((id, i));
            }
            grads[i] = Some(g);
        }
        params.reverse();
        Ok(Gradients {
            grads,
            params,
            visits,
        })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros_like(&self.nodes[v.0].value)))
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if let Some(da) = self.slot(grads, *a) {
                    gemm(m, n, k, gd, Layout::Plain, tb.data(), Layout::Transposed, 1.0, da.data_mut());
                }
                if let Some(db) = self.slot(grads, *b) {
                    gemm(k, m, n, ta.data(), Layout::Transposed, gd, Layout::Plain, 1.0, db.data_mut());
                }
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (m, fan_in) = (tx.shape()[0], tx.shape()[1]);
                let fan_out = tw.shape()[0];
                if let Some(dx) = self.slot(grads, *x) {
                    gemm(m, fan_out, fan_in, gd, Layout::Plain, tw.data(), Layout::Plain, 1.0, dx.data_mut());
                }
                if let Some(dw) = self.slot(grads, *w) {
                    gemm(fan_out, m, fan_in, gd, Layout::Transposed, tx.data(), Layout::Plain, 1.0, dw.data_mut());
                }
                if let Some(b) = b {
                    if let Some(db) = self.slot(grads, *b) {
                        column_sums_into(gd, fan_out, db.data_mut());
                    }
                }
            }
            Op::AddBias { x, b } => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.add_assign(g);
                }
                let n = g.shape()[1];
                if let Some(db) = self.slot(grads, *b) {
                    column_sums_into(gd, n, db.data_mut());
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    da.add_assign(g);
                }
                if let Some(db) = self.slot(grads, *b) {
                    db.add_assign(g);
                }
            }
            Op::Scale(x, factor) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.data_mut().iter_mut().zip(gd).for_each(|(d, g)| *d += g * factor);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = g.shape()[1];
                let m = g.shape()[0];
                let tg = self.value(*gamma).data();
                if let Some(dgamma) = self.slot(grads, *gamma) {
                    let dg = dgamma.data_mut();
                    for (gr, hr) in gd.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                }
                if let Some(dbeta) = self.slot(grads, *beta) {
                    column_sums_into(gd, d, dbeta.data_mut());
                }
                if let Some(dx) = self.slot(grads, *x) {
                    let dxd = dx.data_mut();
                    let inv_d = 1.0 / d as f64;
                    let mut dh = vec![0.0; d];
                    for i in 0..m {
                        let gr = &gd[i * d..(i + 1) * d];
                        let hr = &xhat[i * d..(i + 1) * d];
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..d {
                            dh[j] = gr[j] * tg[j];
                            sum_dh += dh[j];
                            sum_dh_h += dh[j] * hr[j];
                        }
                        let s = inv_std[i];
                        for j in 0..d {
                            dxd[i * d + j] += s * (dh[j] - inv_d * sum_dh - hr[j] * inv_d * sum_dh_h);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let tx = self.value(*x);
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &xv), gv) in dx.data_mut().iter_mut().zip(tx.data()).zip(gd) {
                        *d += gv * gelu_derivative(xv);
                    }
                }
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &xv), gv) in dx.data_mut().iter_mut().zip(tx.data()).zip(gd) {
                        if xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Embedding { table, indices } => {
                if let Some(dt) = self.slot(grads, *table) {
                    let d = g.shape()[1];
                    let dtd = dt.data_mut();
                    for (r, &ix) in indices.iter().enumerate() {
                        for c in 0..d {
                            dtd[ix * d + c] += gd[r * d + c];
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let n = y.shape()[1];
                if let Some(dx) = self.slot(grads, *x) {
                    let dxd = dx.data_mut();
                    for (i, (yr, gr)) in y.data().chunks_exact(n).zip(gd.chunks_exact(n)).enumerate() {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dxd[i * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Mse { pred, target } => {
                let tp = self.value(*pred);
                let scale = 2.0 * gd[0] / target.len() as f64;
                if let Some(dp) = self.slot(grads, *pred) {
                    for ((d, p), t) in dp.data_mut().iter_mut().zip(tp.data()).zip(target) {
                        *d += scale * (p - t);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.data_mut().iter_mut().for_each(|d| *d += gd[0]);
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = (g.shape()[0], g.shape()[1]);
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if let Some(dp) = self.slot(grads, p) {
                        let dpd = dp.data_mut();
                        for i in 0..m {
                            for c in 0..w {
                                dpd[i * w + c] += gd[i * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.data_mut().iter_mut().zip(gd).for_each(|(d, g)| *d += g);
                }
            }
            Op::ScalarTokens { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (m, p) = (tx.shape()[0], tx.shape()[1]);
                let d = tw.shape()[1];
                if let Some(dx) = self.slot(grads, *x) {
                    let dxd = dx.data_mut();
                    for i in 0..m {
                        for j in 0..p {
                            let gr = &gd[(i * p + j) * d..][..d];
                            let wr = &tw.data()[j * d..][..d];
                            dxd[i * p + j] += gr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                if let Some(dw) = self.slot(grads, *w) {
                    let dwd = dw.data_mut();
                    for i in 0..m {
                        for j in 0..p {
                            let xv = tx.data()[i * p + j];
                            let gr = &gd[(i * p + j) * d..][..d];
                            for c in 0..d {
                                dwd[j * d + c] += xv * gr[c];
                            }
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    column_sums_into(gd, p * d, db.data_mut());
                }
            }
            Op::AddTiled { x, tile } => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.add_assign(g);
                }
                let block = self.value(*tile).len();
                if let Some(dt) = self.slot(grads, *tile) {
                    column_sums_into(gd, block, dt.data_mut());
                }
            }
            Op::HeadScores {
                q,
                k,
                tokens,
                heads,
                scale,
            } => {
                let (tq, tk) = (self.value(*q), self.value(*k));
                let (t, h_n) = (*tokens, *heads);
                let (rows, width) = (tq.shape()[0], tq.shape()[1]);
                let m = rows / t;
                let dh = width / h_n;
                if let Some(dq) = self.slot(grads, *q) {
                    let dqd = dq.data_mut();
                    for b in 0..m {
                        for h in 0..h_n {
                            for i in 0..t {
                                let grow = &gd[((b * h_n + h) * t + i) * t..][..t];
                                let dst = (b * t + i) * width + h * dh;
                                for (j, &gv) in grow.iter().enumerate() {
                                    let kj = &tk.data()[(b * t + j) * width + h * dh..][..dh];
                                    for c in 0..dh {
                                        dqd[dst + c] += scale * gv * kj[c];
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(dk) = self.slot(grads, *k) {
                    let dkd = dk.data_mut();
                    for b in 0..m {
                        for h in 0..h_n {
                            for i in 0..t {
                                let grow = &gd[((b * h_n + h) * t + i) * t..][..t];
                                let qi = &tq.data()[(b * t + i) * width + h * dh..][..dh];
                                for (j, &gv) in grow.iter().enumerate() {
                                    let dst = (b * t + j) * width + h * dh;
                                    for c in 0..dh {
                                        dkd[dst + c] += scale * gv * qi[c];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::HeadMix { p, v, tokens, heads } => {
                let (tp, tv) = (self.value(*p), self.value(*v));
                let (t, h_n) = (*tokens, *heads);
                let (rows, width) = (tv.shape()[0], tv.shape()[1]);
                let m = rows / t;
                let dh = width / h_n;
                if let Some(dp) = self.slot(grads, *p) {
                    let dpd = dp.data_mut();
                    for b in 0..m {
                        for h in 0..h_n {
                            for i in 0..t {
                                let go = &gd[(b * t + i) * width + h * dh..][..dh];
                                let prow = ((b * h_n + h) * t + i) * t;
                                for j in 0..t {
                                    let vj = &tv.data()[(b * t + j) * width + h * dh..][..dh];
                                    dpd[prow + j] += go.iter().zip(vj).map(|(a, c)| a * c).sum::<f64>();
                                }
                            }
                        }
                    }
                }
                if let Some(dv) = self.slot(grads, *v) {
                    let dvd = dv.data_mut();
                    for b in 0..m {
                        for h in 0..h_n {
                            for i in 0..t {
                                let go = &gd[(b * t + i) * width + h * dh..][..dh];
                                let prow = &tp.data()[((b * h_n + h) * t + i) * t..][..t];
                                for (j, &w) in prow.iter().enumerate() {
                                    let dst = (b * t + j) * width + h * dh;
                                    for c in 0..dh {
                                        dvd[dst + c] += w * go[c];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::MeanPool { x, tokens } => {
                let d = g.shape()[1];
                let inv = 1.0 / *tokens as f64;
                if let Some(dx) = self.slot(grads, *x) {
                    let dxd = dx.data_mut();
                    for (r, row) in dxd.chunks_exact_mut(d).enumerate() {
                        let src = &gd[(r / tokens) * d..][..d];
                        row.iter_mut().zip(src).for_each(|(o, s)| *o += s * inv);
                    }
                }
            }
        }
    }
}

fn column_sums_into(data: &[f64], width: usize, out: &mut [f64]) {
    for row in data.chunks_exact(width) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
}

fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Mean squared error of two equal-length slices.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64, NdError> {
    if target.is_empty() || pred.is_empty() {
        return Err(NdError::EmptyBatch);
    }
    if pred.len() != target.len() {
        return Err(NdError::ShapeMismatch {
            op: "mse_loss",
            lhs: vec![pred.len()],
            rhs: vec![target.len()],
        });
    }
    let sq: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sq / target.len() as f64)
}
