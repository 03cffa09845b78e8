//! Attention-based set scoring model.
//!
//! A set of `k` points (the rows of a `k x d` matrix) is scored by
//!
//! 1. embedding each point with `relu(W_e x + b_e)` into `d_h` dimensions,
//! 2. running multi-head self-attention over the embedded set, with
//!    per-head width `d_h / h` and no output projection or residual,
//! 3. pooling the contextualised embeddings (sum by default),
//! 4. applying a linear regression head.
//!
//! Row `i` of every intermediate matrix belongs to point `i`, so the
//! projections `Q = W_q Z` are computed as `Z W_q^T` in this layout.

mod persist;

use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Eager, Gradients, Matrix, Ops, Tape, Var};

pub use persist::{FORMAT_VERSION, MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Sum,
    Max,
}

impl std::str::FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Pooling::Sum),
            "max" => Ok(Pooling::Max),
            other => Err(format!("unknown pooling '{other}'")),
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::Sum => "sum",
            Pooling::Max => "max",
        })
    }
}

/// Architecture of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    /// Input feature dimension.
    pub d: usize,
    /// Latent width.
    pub d_h: usize,
    /// Attention heads; must divide `d_h`.
    pub heads: usize,
    /// Number of stacked attention blocks.
    pub depth: usize,
    pub pooling: Pooling,
}

impl ModelMeta {
    pub fn new(d: usize, d_h: usize, heads: usize) -> Self {
        Self {
            d,
            d_h,
            heads,
            depth: 1,
            pooling: Pooling::Sum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_h == 0 {
            return Err(Error::Config(format!(
                "feature and latent widths must be positive (d={}, d_h={})",
                self.d, self.d_h
            )));
        }
        if self.heads == 0 || self.d_h % self.heads != 0 {
            return Err(Error::Config(format!(
                "latent width {} is not divisible by {} heads",
                self.d_h, self.heads
            )));
        }
        if self.depth == 0 {
            return Err(Error::Config("attention depth must be at least 1".into()));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.d_h / self.heads
    }
}

/// Query/key/value projections of one attention block, each `d_h x d_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
}

/// All learnable weights of the set scoring model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub meta: ModelMeta,
    /// `d_h x d`
    pub embed_weight: Matrix,
    /// `1 x d_h`
    pub embed_bias: Matrix,
    pub attention: Vec<AttentionWeights>,
    /// `1 x d_h`
    pub head_weight: Matrix,
    /// `1 x 1`
    pub head_bias: Matrix,
}

/// One named parameter matrix, as visited by the optimizer.
#[derive(Debug)]
pub struct ParamBlock<'a> {
    pub name: String,
    pub value: &'a Matrix,
    pub is_bias: bool,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    // fan_in = cols, fan_out = rows
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect();
    Matrix::new(rows, cols, data).expect("shape matches data length")
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, single sum-pooled attention block.
    pub fn init(seed: u64, d: usize, d_h: usize, heads: usize) -> Result<Self> {
        Self::init_with(seed, ModelMeta::new(d, d_h, heads))
    }

    pub fn init_with(seed: u64, meta: ModelMeta) -> Result<Self> {
        meta.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed_weight = glorot(&mut rng, meta.d_h, meta.d);
        let attention = (0..meta.depth)
            .map(|_| AttentionWeights {
                wq: glorot(&mut rng, meta.d_h, meta.d_h),
                wk: glorot(&mut rng, meta.d_h, meta.d_h),
                wv: glorot(&mut rng, meta.d_h, meta.d_h),
            })
            .collect();
        let head_weight = glorot(&mut rng, 1, meta.d_h);
        Ok(Self {
            meta,
            embed_weight,
            embed_bias: Matrix::zeros(1, meta.d_h),
            attention,
            head_weight,
            head_bias: Matrix::zeros(1, 1),
        })
    }

    /// Every parameter matrix in canonical order.
    pub fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let mut out = vec![
            ParamBlock {
                name: "embed_weight".into(),
                value: &self.embed_weight,
                is_bias: false,
            },
            ParamBlock {
                name: "embed_bias".into(),
                value: &self.embed_bias,
                is_bias: true,
            },
        ];
        for (i, a) in self.attention.iter().enumerate() {
            for (tag, m) in [("wq", &a.wq), ("wk", &a.wk), ("wv", &a.wv)] {
                out.push(ParamBlock {
                    name: format!("attn{i}_{tag}"),
                    value: m,
                    is_bias: false,
                });
            }
        }
        out.push(ParamBlock {
            name: "head_weight".into(),
            value: &self.head_weight,
            is_bias: false,
        });
        out.push(ParamBlock {
            name: "head_bias".into(),
            value: &self.head_bias,
            is_bias: true,
        });
        out
    }

    /// Mutable view of every parameter matrix, same order as [`Self::blocks`].
    pub fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = vec![&mut self.embed_weight, &mut self.embed_bias];
        for a in &mut self.attention {
            out.push(&mut a.wq);
            out.push(&mut a.wk);
            out.push(&mut a.wv);
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    /// Expected shape of each block for this architecture.
    pub(crate) fn block_shapes(meta: &ModelMeta) -> Vec<(String, (usize, usize))> {
        let mut out = vec![
            ("embed_weight".to_string(), (meta.d_h, meta.d)),
            ("embed_bias".to_string(), (1, meta.d_h)),
        ];
        for i in 0..meta.depth {
            for tag in ["wq", "wk", "wv"] {
                out.push((format!("attn{i}_{tag}"), (meta.d_h, meta.d_h)));
            }
        }
        out.push(("head_weight".to_string(), (1, meta.d_h)));
        out.push(("head_bias".to_string(), (1, 1)));
        out
    }

    pub(crate) fn from_blocks(meta: ModelMeta, mut blocks: Vec<Matrix>) -> Result<Self> {
        meta.validate()?;
        let shapes = Self::block_shapes(&meta);
        if blocks.len() != shapes.len() {
            return Err(Error::Format(format!(
                "expected {} parameter blocks, found {}",
                shapes.len(),
                blocks.len()
            )));
        }
        for (b, (name, shape)) in blocks.iter().zip(&shapes) {
            if b.shape() != *shape {
                return Err(Error::Format(format!(
                    "block {name} has shape {:?}, expected {:?}",
                    b.shape(),
                    shape
                )));
            }
        }
        let head_bias = blocks.pop().unwrap();
        let head_weight = blocks.pop().unwrap();
        let mut it = blocks.into_iter();
        let embed_weight = it.next().unwrap();
        let embed_bias = it.next().unwrap();
        let mut attention = Vec::with_capacity(meta.depth);
        for _ in 0..meta.depth {
            attention.push(AttentionWeights {
                wq: it.next().unwrap(),
                wk: it.next().unwrap(),
                wv: it.next().unwrap(),
            });
        }
        Ok(Self {
            meta,
            embed_weight,
            embed_bias,
            attention,
            head_weight,
            head_bias,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.value.is_finite())
    }

    fn check_set(&self, set: &Matrix) -> Result<()> {
        if set.rows() == 0 {
            return Err(Error::Usage("cannot score an empty set".into()));
        }
        if set.cols() != self.meta.d {
            return Err(Error::dimension(
                "score_set",
                set.shape(),
                (set.rows(), self.meta.d),
            ));
        }
        Ok(())
    }

    fn bind_eager(&self) -> Bound<Cow<'_, Matrix>> {
        Bound {
            embed_weight: Cow::Borrowed(&self.embed_weight),
            embed_bias: Cow::Borrowed(&self.embed_bias),
            attention: self
                .attention
                .iter()
                .map(|a| [Cow::Borrowed(&a.wq), Cow::Borrowed(&a.wk), Cow::Borrowed(&a.wv)])
                .collect(),
            head_weight: Cow::Borrowed(&self.head_weight),
            head_bias: Cow::Borrowed(&self.head_bias),
        }
    }

    /// Registers every parameter block as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> TapedParams {
        TapedParams {
            meta: self.meta,
            vars: Bound {
                embed_weight: tape.leaf(self.embed_weight.clone()),
                embed_bias: tape.leaf(self.embed_bias.clone()),
                attention: self
                    .attention
                    .iter()
                    .map(|a| {
                        [
                            tape.leaf(a.wq.clone()),
                            tape.leaf(a.wk.clone()),
                            tape.leaf(a.wv.clone()),
                        ]
                    })
                    .collect(),
                head_weight: tape.leaf(self.head_weight.clone()),
                head_bias: tape.leaf(self.head_bias.clone()),
            },
        }
    }

    /// Embeds a single point: `relu(W_e x + b_e)`.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        let row = Matrix::row_vector(x.to_vec());
        self.check_set(&row)?;
        let mut ops = Eager::new();
        let p = self.bind_eager();
        let z = embed_rows(&mut ops, &p, &Cow::Owned(row))?;
        Ok(z.into_owned().into_data())
    }

    /// Self-attention stack applied to an embedded set (`k x d_h`).
    pub fn attend(&self, z_set: &Matrix) -> Result<Matrix> {
        if z_set.cols() != self.meta.d_h {
            return Err(Error::dimension(
                "attend",
                z_set.shape(),
                (z_set.rows(), self.meta.d_h),
            ));
        }
        let mut ops = Eager::new();
        let p = self.bind_eager();
        let mut z = Cow::Borrowed(z_set);
        for block in &p.attention {
            z = attention_block(&mut ops, &self.meta, block, &z)?;
        }
        Ok(z.into_owned())
    }

    /// Per-head attention weight matrices (`k x k`) of the first block.
    pub fn attention_weights(&self, z_set: &Matrix) -> Result<Vec<Matrix>> {
        let a = &self.attention[0];
        let w = self.meta.head_width();
        let q = z_set.matmul(&a.wq.transpose())?;
        let k = z_set.matmul(&a.wk.transpose())?;
        let scale = 1.0 / (w as f64).sqrt();
        (0..self.meta.heads)
            .map(|h| {
                let qh = q.slice_cols(h * w, w)?;
                let kh = k.slice_cols(h * w, w)?;
                Ok(qh.matmul(&kh.transpose())?.scale(scale).softmax_rows())
            })
            .collect()
    }

    /// Scores a set given as a `k x d` matrix, one point per row.
    pub fn score_set(&self, set: &Matrix) -> Result<f64> {
        self.check_set(set)?;
        let mut ops = Eager::new();
        let p = self.bind_eager();
        let out = forward(&mut ops, &self.meta, &p, Cow::Borrowed(set))?;
        Ok(out.get(0, 0))
    }

    /// Records the forward pass of `set` on `tape` and returns the `1 x 1`
    /// score slot.
    pub fn score_set_taped(&self, tape: &mut Tape, params: &TapedParams, set: &Matrix) -> Result<Var> {
        self.check_set(set)?;
        let x = tape.constant(set.clone());
        forward(tape, &params.meta, &params.vars, x)
    }
}

pub(crate) struct Bound<V> {
    embed_weight: V,
    embed_bias: V,
    attention: Vec<[V; 3]>,
    head_weight: V,
    head_bias: V,
}

/// Parameter slots of a model registered on a [`Tape`].
pub struct TapedParams {
    meta: ModelMeta,
    vars: Bound<Var>,
}

impl TapedParams {
    /// Leaf variables in the canonical block order.
    pub fn vars(&self) -> Vec<Var> {
        let v = &self.vars;
        let mut out = vec![v.embed_weight, v.embed_bias];
        for a in &v.attention {
            out.extend_from_slice(a);
        }
        out.push(v.head_weight);
        out.push(v.head_bias);
        out
    }

    /// Extracts per-block gradients in canonical order.
    pub fn collect(&self, grads: &mut Gradients) -> Result<Vec<Matrix>> {
        self.vars()
            .iter()
            .map(|v| {
                grads
                    .take(v)
                    .ok_or_else(|| Error::Usage("missing gradient for a parameter leaf".into()))
            })
            .collect()
    }
}

fn embed_rows<O: Ops>(ops: &mut O, p: &Bound<O::Value>, x: &O::Value) -> Result<O::Value> {
    let k = ops.value(x)?.rows();
    let wt = ops.transpose(&p.embed_weight)?;
    let pre = ops.matmul(x, &wt)?;
    // broadcast the bias row over the k points as ones(k,1) * b
    let ones = ops.constant(Matrix::filled(k, 1, 1.0));
    let bias = ops.matmul(&ones, &p.embed_bias)?;
    let sum = ops.add(&pre, &bias)?;
    ops.relu(&sum)
}

fn attention_block<O: Ops>(
    ops: &mut O,
    meta: &ModelMeta,
    w: &[O::Value; 3],
    z: &O::Value,
) -> Result<O::Value> {
    let width = meta.head_width();
    let scale = 1.0 / (width as f64).sqrt();
    let project = |ops: &mut O, m: &O::Value| -> Result<O::Value> {
        let t = ops.transpose(m)?;
        ops.matmul(z, &t)
    };
    let q = project(ops, &w[0])?;
    let k = project(ops, &w[1])?;
    let v = project(ops, &w[2])?;
    let mut heads = Vec::with_capacity(meta.heads);
    for h in 0..meta.heads {
        let qh = ops.slice_cols(&q, h * width, width)?;
        let kh = ops.slice_cols(&k, h * width, width)?;
        let vh = ops.slice_cols(&v, h * width, width)?;
        let kt = ops.transpose(&kh)?;
        let logits = ops.matmul(&qh, &kt)?;
        let logits = ops.scale(&logits, scale)?;
        let attn = ops.softmax_rows(&logits)?;
        heads.push(ops.matmul(&attn, &vh)?);
    }
    if heads.len() == 1 {
        Ok(heads.pop().unwrap())
    } else {
        ops.concat_cols(&heads)
    }
}

fn forward<O: Ops>(
    ops: &mut O,
    meta: &ModelMeta,
    p: &Bound<O::Value>,
    x: O::Value,
) -> Result<O::Value> {
    let mut z = embed_rows(ops, p, &x)?;
    for block in &p.attention {
        z = attention_block(ops, meta, block, &z)?;
    }
    let pooled = match meta.pooling {
        Pooling::Sum => ops.sum_rows(&z)?,
        Pooling::Max => ops.max_rows(&z)?,
    };
    let ht = ops.transpose(&p.head_weight)?;
    let lin = ops.matmul(&pooled, &ht)?;
    ops.add(&lin, &p.head_bias)
}
