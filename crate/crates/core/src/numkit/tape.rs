//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass as a node. Nodes
//! only ever reference earlier nodes, so walking the tape backwards visits
//! them in reverse topological order. Trainable values live in a
//! [`ParamStore`]; [`Tape::backward`] returns one gradient per stored
//! parameter.

use std::collections::HashMap;

use rand::Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable matrices, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Backward rule for an operation defined outside this module.
///
/// `backward` receives the input values, the output value and dLoss/dOutput,
/// and returns dLoss/dInput for every input, in input order.
pub trait Function: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Matrix], output: &Matrix, grad: &Matrix) -> Result<Vec<Matrix>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Relu(Var),
    Mask(Var, Matrix),
    SoftmaxRows(Var),
    Scale(Var, f64),
    Transpose(Var),
    Sum(Var),
    SqDiffSum(Var, Var),
    ConcatCols(Vec<Var>),
    Custom(Vec<Var>, Box<dyn Function>),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Relu(_) => "relu",
            Op::Mask(..) => "dropout",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::Scale(..) => "scale",
            Op::Transpose(_) => "transpose",
            Op::Sum(_) => "sum",
            Op::SqDiffSum(..) => "sq_diff_sum",
            Op::ConcatCols(_) => "concat_cols",
            Op::Custom(_, f) => f.name(),
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRowBias(a, b) | Op::SqDiffSum(a, b) => {
                vec![*a, *b]
            }
            Op::Relu(a) | Op::Mask(a, _) | Op::SoftmaxRows(a) | Op::Scale(a, _) => vec![*a],
            Op::Transpose(a) | Op::Sum(a) => vec![*a],
            Op::ConcatCols(v) | Op::Custom(v, _) => v.clone(),
        }
    }
}

struct Node {
    op: Op,
    value: Matrix,
    param: Option<ParamId>,
    tracked: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn op_kind(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.kind()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        let tracked = op.inputs().iter().any(|i| self.nodes[i.0].tracked);
        self.nodes.push(Node {
            op,
            value,
            param: None,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Untracked input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Tracked leaf bound to a stored parameter. Repeated calls reuse the node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            value: store.get(id).clone(),
            param: Some(id),
            tracked: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    /// Adds a 1×c bias row to every row of an n×c matrix.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(Error::shape(format!(
                "bias {}x{} for input {}x{}",
                b.rows(),
                b.cols(),
                x.rows(),
                x.cols()
            )));
        }
        let mut value = x.clone();
        for i in 0..value.rows() {
            for (o, bv) in value.row_mut(i).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        Ok(self.push(Op::AddRowBias(a, bias), value))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = relu(self.value(a));
        self.push(Op::Relu(a), value)
    }

    /// Inverted dropout. Identity (no node) in evaluation mode or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        check_dropout_rate(rate)?;
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let x = self.value(a);
        let mask = dropout_mask(x.rows(), x.cols(), rate, rng);
        let value = x.zip_map(&mask, |v, m| v * m)?;
        Ok(self.push(Op::Mask(a, mask), value))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = softmax_rows(self.value(a))?;
        Ok(self.push(Op::SoftmaxRows(a), value))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(Op::Scale(a, s), value)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value)
    }

    /// Sum of all entries, as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    /// `Σ (a − b)²` over all entries, as a 1×1 node.
    pub fn sq_diff_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.expect_same_shape(y, "squared difference")?;
        let s = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, q)| (p - q) * (p - q))
            .sum();
        Ok(self.push(Op::SqDiffSum(a, b), Matrix::scalar(s)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_cols(&mats)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    /// Records an externally defined operation whose forward value has
    /// already been computed.
    pub fn custom(&mut self, inputs: &[Var], output: Matrix, f: Box<dyn Function>) -> Var {
        self.push(Op::Custom(inputs.to_vec(), f), output)
    }

    /// Reverse pass from a scalar node. Returns dLoss/dP for every parameter
    /// in `store`; parameters absent from the tape get zeros.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Vec<Matrix>> {
        let grads = self.backward_nodes(loss)?;
        let mut out: Vec<Matrix> = store
            .ids()
            .map(|id| {
                let (r, c) = store.get(id).shape();
                Matrix::zeros(r, c)
            })
            .collect();
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Some(pid), Some(g)) = (node.param, g) {
                if pid.0 < out.len() {
                    out[pid.0] = g;
                }
            }
        }
        Ok(out)
    }

    fn backward_nodes(&self, loss: Var) -> Result<Vec<Option<Matrix>>> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let contributions = self.local_grads(node, &g)?;
            for (input, cg) in contributions {
                if !self.nodes[input.0].tracked {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&cg),
                    slot @ None => *slot = Some(cg),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    fn local_grads(&self, node: &Node, g: &Matrix) -> Result<Vec<(Var, Matrix)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if self.is_tracked(*a) {
                    out.push((*a, g.matmul_nt(val(*b))?));
                }
                if self.is_tracked(*b) {
                    out.push((*b, val(*a).matmul_tn(g)?));
                }
                out
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddRowBias(a, b) => {
                let mut gb = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, v) in gb.data_mut().iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                vec![(*a, g.clone()), (*b, gb)]
            }
            Op::Relu(a) => {
                let x = val(*a);
                vec![(*a, g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })?)]
            }
            Op::Mask(a, mask) => vec![(*a, g.zip_map(mask, |gv, m| gv * m)?)],
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, p), q) in dx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *o = p * (q - inner);
                    }
                }
                vec![(*a, dx)]
            }
            Op::Scale(a, s) => vec![(*a, g.scale(*s))],
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                vec![(*a, Matrix::filled(r, c, g.data()[0]))]
            }
            Op::SqDiffSum(a, b) => {
                let s = 2.0 * g.data()[0];
                let d = val(*a).sub(val(*b))?.scale(s);
                let neg = d.scale(-1.0);
                vec![(*a, d), (*b, neg)]
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let w = val(p).cols();
                    out.push((p, g.slice_cols(start, w)));
                    start += w;
                }
                out
            }
            Op::Custom(inputs, f) => {
                let ins: Vec<&Matrix> = inputs.iter().map(|&v| val(v)).collect();
                let gs = f.backward(&ins, &node.value, g)?;
                if gs.len() != inputs.len() {
                    return Err(Error::Internal(format!(
                        "{} returned {} gradients for {} inputs",
                        f.name(),
                        gs.len(),
                        inputs.len()
                    )));
                }
                inputs.iter().copied().zip(gs).collect()
            }
        })
    }
}

pub fn relu(a: &Matrix) -> Matrix {
    a.map(|v| v.max(0.0))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(a: &Matrix) -> Result<Matrix> {
    if a.cols() == 0 || a.rows() == 0 {
        return Err(Error::shape(format!(
            "softmax over empty {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    let mut out = a.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::param(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    Matrix::from_fn(rows, cols, |_, _| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

/// Inverted dropout outside a tape.
pub fn dropout<R: Rng + ?Sized>(a: &Matrix, rate: f64, rng: &mut R, training: bool) -> Result<Matrix> {
    check_dropout_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(a.clone());
    }
    let mask = dropout_mask(a.rows(), a.cols(), rate, rng);
    a.zip_map(&mask, |v, m| v * m)
}
