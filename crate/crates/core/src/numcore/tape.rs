use std::borrow::Cow;
use std::marker::PhantomData;
use std::sync::atomic::{AtomicU64, Ordering};

use super::Matrix;
use crate::error::{Error, Result};

/// The closed set of differentiable primitives shared by the eager
/// evaluator and the recording tape. Model code is written once against
/// this trait so both paths execute the same arithmetic.
pub trait Ops {
    type Value;

    fn constant(&mut self, m: Matrix) -> Self::Value;
    fn value<'v>(&'v self, v: &'v Self::Value) -> Result<&'v Matrix>;

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn transpose(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, a: &Self::Value, factor: f64) -> Result<Self::Value>;
    fn relu(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn abs(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn softmax_rows(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn sum_rows(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn sum_cols(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn max_rows(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn concat_cols(&mut self, parts: &[Self::Value]) -> Result<Self::Value>;
    fn slice_cols(&mut self, a: &Self::Value, start: usize, width: usize)
        -> Result<Self::Value>;
    fn mean(&mut self, a: &Self::Value) -> Result<Self::Value>;
}

/// Evaluates primitives directly with no recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager<'a>(PhantomData<&'a Matrix>);

impl<'a> Eager<'a> {
    pub fn new() -> Self {
        Eager(PhantomData)
    }

    pub fn borrowed(m: &'a Matrix) -> Cow<'a, Matrix> {
        Cow::Borrowed(m)
    }
}

impl<'a> Ops for Eager<'a> {
    type Value = Cow<'a, Matrix>;

    fn constant(&mut self, m: Matrix) -> Self::Value {
        Cow::Owned(m)
    }

    fn value<'v>(&'v self, v: &'v Self::Value) -> Result<&'v Matrix> {
        Ok(v.as_ref())
    }

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        a.matmul(b).map(Cow::Owned)
    }

    fn transpose(&mut self, a: &Self::Value) -> Result<Self::Value> {
        Ok(Cow::Owned(a.transpose()))
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        a.add(b).map(Cow::Owned)
    }

    fn scale(&mut self, a: &Self::Value, factor: f64) -> Result<Self::Value> {
        Ok(Cow::Owned(a.scale(factor)))
    }

    fn relu(&mut self, a: &Self::Value) -> Result<Self::Value> {
        Ok(Cow::Owned(a.relu()))
    }

    fn abs(&mut self, a: &Self::Value) -> Result<Self::Value> {
        Ok(Cow::Owned(a.abs()))
    }

    fn softmax_rows(&mut self, a: &Self::Value) -> Result<Self::Value> {
        Ok(Cow::Owned(a.softmax_rows()))
    }

    fn sum_rows(&mut self, a: &Self::Value) -> Result<Self::Value> {
        Ok(Cow::Owned(a.sum_rows()))
    }

    fn sum_cols(&mut self, a: &Self::Value) -> Result<Self::Value> {
        Ok(Cow::Owned(a.sum_cols()))
    }

    fn max_rows(&mut self, a: &Self::Value) -> Result<Self::Value> {
        Ok(Cow::Owned(a.max_rows().0))
    }

    fn concat_cols(&mut self, parts: &[Self::Value]) -> Result<Self::Value> {
        let refs: Vec<&Matrix> = parts.iter().map(|p| p.as_ref()).collect();
        Matrix::concat_cols(&refs).map(Cow::Owned)
    }

    fn slice_cols(&mut self, a: &Self::Value, start: usize, width: usize) -> Result<Self::Value> {
        a.slice_cols(start, width).map(Cow::Owned)
    }

    fn mean(&mut self, a: &Self::Value) -> Result<Self::Value> {
        Ok(Cow::Owned(Matrix::scalar(a.mean())))
    }
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value slot on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Abs(usize),
    Softmax(usize),
    SumRows(usize),
    SumCols(usize),
    MaxRows(usize, Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    Mean(usize),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Records executed primitives for one reverse pass. A tape lives for a
/// single forward/backward cycle and is consumed by [`Tape::backward`].
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    /// Registers a differentiable input (a model parameter).
    pub fn leaf(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn slot(&self, v: &Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Usage(format!(
                "value slot {} does not belong to this tape",
                v.index
            )));
        }
        Ok(v.index)
    }

    fn get(&self, v: &Var) -> Result<(usize, &Matrix)> {
        let i = self.slot(v)?;
        Ok((i, &self.nodes[i].value))
    }

    /// Propagates d(loss)/d(node) back through every recorded operation in
    /// reverse execution order and returns the gradient of each leaf.
    pub fn backward(self, loss: &Var) -> Result<Gradients> {
        let root = self.slot(loss)?;
        if self.nodes[root].value.shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[root] = Some(Matrix::scalar(1.0));

        for i in (0..=root).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf | Op::Constant) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut accumulate = |slot: usize, delta: Matrix| match &mut grads[slot] {
                Some(existing) => existing.add_assign(&delta),
                empty => *empty = Some(delta),
            };
            match &node.op {
                Op::Leaf | Op::Constant => unreachable!(),
                Op::MatMul(a, b) => {
                    let da = g.matmul(&nodes[*b].value.transpose())?;
                    let db = nodes[*a].value.transpose().matmul(&g)?;
                    accumulate(*a, da);
                    accumulate(*b, db);
                }
                Op::Transpose(a) => accumulate(*a, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(*b, g.clone());
                    accumulate(*a, g);
                }
                Op::Scale(a, f) => accumulate(*a, g.scale(*f)),
                Op::Relu(a) => {
                    let x = &nodes[*a].value;
                    let mut d = g;
                    for (dv, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    accumulate(*a, d);
                }
                Op::Abs(a) => {
                    let x = &nodes[*a].value;
                    let mut d = g;
                    for (dv, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                        *dv *= sign(xv);
                    }
                    accumulate(*a, d);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut d = g;
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &mut d.data_mut()[r * cols..(r + 1) * cols];
                        let dot = gr.iter().zip(yr).fold(0.0, |acc, (gv, yv)| acc + gv * yv);
                        for (gv, yv) in gr.iter_mut().zip(yr) {
                            *gv = yv * (*gv - dot);
                        }
                    }
                    accumulate(*a, d);
                }
                Op::SumRows(a) => {
                    let (rows, cols) = nodes[*a].value.shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        d.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(g.row(0));
                    }
                    accumulate(*a, d);
                }
                Op::SumCols(a) => {
                    let (rows, cols) = nodes[*a].value.shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        let gv = g.get(r, 0);
                        d.data_mut()[r * cols..(r + 1) * cols].fill(gv);
                    }
                    accumulate(*a, d);
                }
                Op::MaxRows(a, arg) => {
                    let (rows, cols) = nodes[*a].value.shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for (c, &r) in arg.iter().enumerate() {
                        d.set(r, c, g.get(0, c));
                    }
                    accumulate(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = nodes[p].value.cols();
                        accumulate(p, g.slice_cols(start, w)?);
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = nodes[*a].value.shape();
                    let w = g.cols();
                    let mut d = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        d.data_mut()[r * cols + start..r * cols + start + w]
                            .copy_from_slice(g.row(r));
                    }
                    accumulate(*a, d);
                }
                Op::Mean(a) => {
                    let (rows, cols) = nodes[*a].value.shape();
                    let share = g.get(0, 0) / (rows * cols) as f64;
                    accumulate(*a, Matrix::filled(rows, cols, share));
                }
            }
        }

        let leaves = nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match node.op {
                Op::Leaf => Some(g.unwrap_or_else(|| {
                    Matrix::zeros(node.value.rows(), node.value.cols())
                })),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            leaves,
        })
    }
}

/// Subgradient of |x|, 0 at exactly 0.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    leaves: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: &Var) -> Option<&Matrix> {
        if v.tape != self.tape {
            return None;
        }
        self.leaves.get(v.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: &Var) -> Option<Matrix> {
        if v.tape != self.tape {
            return None;
        }
        self.leaves.get_mut(v.index).and_then(Option::take)
    }
}

impl Ops for Tape {
    type Value = Var;

    fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Constant)
    }

    fn value<'v>(&'v self, v: &'v Var) -> Result<&'v Matrix> {
        self.get(v).map(|(_, m)| m)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (ia, ma) = self.get(a)?;
        let (ib, mb) = self.get(b)?;
        let out = ma.matmul(mb)?;
        Ok(self.push(out, Op::MatMul(ia, ib)))
    }

    fn transpose(&mut self, a: &Var) -> Result<Var> {
        let (ia, ma) = self.get(a)?;
        let out = ma.transpose();
        Ok(self.push(out, Op::Transpose(ia)))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (ia, ma) = self.get(a)?;
        let (ib, mb) = self.get(b)?;
        let out = ma.add(mb)?;
        Ok(self.push(out, Op::Add(ia, ib)))
    }

    fn scale(&mut self, a: &Var, factor: f64) -> Result<Var> {
        let (ia, ma) = self.get(a)?;
        let out = ma.scale(factor);
        Ok(self.push(out, Op::Scale(ia, factor)))
    }

    fn relu(&mut self, a: &Var) -> Result<Var> {
        let (ia, ma) = self.get(a)?;
        let out = ma.relu();
        Ok(self.push(out, Op::Relu(ia)))
    }

    fn abs(&mut self, a: &Var) -> Result<Var> {
        let (ia, ma) = self.get(a)?;
        let out = ma.abs();
        Ok(self.push(out, Op::Abs(ia)))
    }

    fn softmax_rows(&mut self, a: &Var) -> Result<Var> {
        let (ia, ma) = self.get(a)?;
        let out = ma.softmax_rows();
        Ok(self.push(out, Op::Softmax(ia)))
    }

    fn sum_rows(&mut self, a: &Var) -> Result<Var> {
        let (ia, ma) = self.get(a)?;
        let out = ma.sum_rows();
        Ok(self.push(out, Op::SumRows(ia)))
    }

    fn sum_cols(&mut self, a: &Var) -> Result<Var> {
        let (ia, ma) = self.get(a)?;
        let out = ma.sum_cols();
        Ok(self.push(out, Op::SumCols(ia)))
    }

    fn max_rows(&mut self, a: &Var) -> Result<Var> {
        let (ia, ma) = self.get(a)?;
        let (out, arg) = ma.max_rows();
        Ok(self.push(out, Op::MaxRows(ia, arg)))
    }

    fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mut slots = Vec::with_capacity(parts.len());
        let mut mats = Vec::with_capacity(parts.len());
        for p in parts {
            let (i, m) = self.get(p)?;
            slots.push(i);
            mats.push(m);
        }
        let out = Matrix::concat_cols(&mats)?;
        Ok(self.push(out, Op::ConcatCols(slots)))
    }

    fn slice_cols(&mut self, a: &Var, start: usize, width: usize) -> Result<Var> {
        let (ia, ma) = self.get(a)?;
        let out = ma.slice_cols(start, width)?;
        Ok(self.push(out, Op::SliceCols(ia, start)))
    }

    fn mean(&mut self, a: &Var) -> Result<Var> {
        let (ia, ma) = self.get(a)?;
        let out = Matrix::scalar(ma.mean());
        Ok(self.push(out, Op::Mean(ia)))
    }
}
