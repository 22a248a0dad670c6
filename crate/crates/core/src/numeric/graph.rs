use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NumericError, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Index of a trainable tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
}

/// Named trainable tensors. Ids are dense and stable for the store's lifetime.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.entries.push(ParamEntry { name: name.into(), value });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Ln(Var),
    Exp(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Relu(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    ConcatCols(Vec<Var>),
    Gather { table: Var, ids: Vec<usize> },
    Pick { input: Var, cols: Vec<usize> },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient with respect to any recorded node; zero when the loss does not depend on it.
    pub fn wrt(&self, var: Var, shape: [usize; 2]) -> Tensor {
        self.nodes
            .get(var.0)
            .and_then(Option::as_ref)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }
}

/// Append-only tape of primitive operations over [`Tensor`] values.
///
/// Nodes are pushed in evaluation order, so reversing the tape is a valid
/// topological order for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn broadcast_shape(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2], NumericError> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a[0], b[0]), dim(a[1], b[1])) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(NumericError::ShapeMismatch { op, lhs: a, rhs: b }),
    }
}

#[inline]
fn bidx(shape: [usize; 2], r: usize, c: usize) -> usize {
    let rr = if shape[0] == 1 { 0 } else { r };
    let cc = if shape[1] == 1 { 0 } else { c };
    rr * shape[1] + cc
}

fn log_sigmoid(x: f64) -> f64 {
    // ln(1 / (1 + e^-x)) without overflow for large |x|
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> [usize; 2] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, NumericError> {
        if !value.is_finite() {
            return Err(NumericError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var, NumericError> {
        self.push("constant", value, Op::Constant)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var, NumericError> {
        self.push("param", store.get(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push("matmul", v, Op::MatMul(a, b))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out = broadcast_shape(name, sa, sb)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(out[0] * out[1]);
        for r in 0..out[0] {
            for c in 0..out[1] {
                data.push(f(va[bidx(sa, r, c)], vb[bidx(sb, r, c)]));
            }
        }
        let value = Tensor::new(out[0], out[1], data)?;
        self.push(name, value, op)
    }

    /// Elementwise sum with row/column/scalar broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, NumericError> {
        let v = self.value(a).map(|x| x * factor);
        self.push("scale", v, Op::Scale(a, factor))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, NumericError> {
        let v = self.value(a).map(f64::ln);
        self.push("ln", v, Op::Ln(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumericError> {
        let v = self.value(a).map(f64::exp);
        self.push("exp", v, Op::Exp(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericError> {
        let v = self.value(a).map(sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a))
    }

    /// `ln(sigmoid(x))`, stable for large magnitudes.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var, NumericError> {
        let v = self.value(a).map(log_sigmoid);
        self.push("log_sigmoid", v, Op::LogSigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericError> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push("relu", v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericError> {
        let v = self.value(a).map(f64::tanh);
        self.push("tanh", v, Op::Tanh(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericError> {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows() {
            let row = x.row_slice(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for c in 0..x.cols() {
                out.set(r, c, (row[c] - m).exp() / z);
            }
        }
        self.push("softmax", out, Op::Softmax(a))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, NumericError> {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows() {
            let row = x.row_slice(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for c in 0..x.cols() {
                out.set(r, c, row[c] - lse);
            }
        }
        self.push("log_softmax", out, Op::LogSoftmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericError> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericError> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(NumericError::Empty { op: "mean" });
        }
        let v = Tensor::scalar(x.sum() / x.len() as f64);
        self.push("mean", v, Op::Mean(a))
    }

    /// Sum of each row, giving a column vector.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, NumericError> {
        let x = self.value(a);
        let v = Tensor::column((0..x.rows()).map(|r| x.row_slice(r).iter().sum()).collect());
        self.push("sum_cols", v, Op::SumCols(a))
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericError> {
        let rows = parts.first().map(|&p| self.shape(p)[0]).ok_or(NumericError::Empty { op: "concat_cols" })?;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[0] != rows {
                return Err(NumericError::ShapeMismatch { op: "concat_cols", lhs: [rows, cols], rhs: s });
            }
            cols += s[1];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let v = Tensor::new(rows, cols, data)?;
        self.push("concat_cols", v, Op::ConcatCols(parts.to_vec()))
    }

    /// Embedding lookup: row `i` of the result is row `ids[i]` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericError> {
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &id in ids {
            if id >= t.rows() {
                return Err(NumericError::IndexOutOfRange { op: "gather", index: id, len: t.rows() });
            }
            data.extend_from_slice(t.row_slice(id));
        }
        let v = Tensor::new(ids.len(), t.cols(), data)?;
        self.push("gather", v, Op::Gather { table, ids: ids.to_vec() })
    }

    /// Selects element `cols[r]` from each row `r`, giving a column vector.
    pub fn pick(&mut self, input: Var, cols: &[usize]) -> Result<Var, NumericError> {
        let x = self.value(input);
        if cols.len() != x.rows() {
            return Err(NumericError::ShapeMismatch { op: "pick", lhs: x.shape(), rhs: [cols.len(), 1] });
        }
        let mut data = Vec::with_capacity(cols.len());
        for (r, &c) in cols.iter().enumerate() {
            if c >= x.cols() {
                return Err(NumericError::IndexOutOfRange { op: "pick", index: c, len: x.cols() });
            }
            data.push(x.get(r, c));
        }
        self.push("pick", Tensor::column(data), Op::Pick { input, cols: cols.to_vec() })
    }

    /// Affine map `x W + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericError> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Reverse-mode sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(NumericError::NotScalar { shape });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut params: BTreeMap<ParamId, Tensor> = BTreeMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match params.get_mut(id) {
                    Some(acc) => {
                        for (a, d) in acc.data_mut().iter_mut().zip(dy.data()) {
                            *a += d;
                        }
                    }
                    None => {
                        params.insert(*id, dy.clone());
                    }
                },
                Op::MatMul(a, b) => {
                    let da = dy.matmul(&self.value(*b).transpose())?;
                    let db = self.value(*a).transpose().matmul(&dy)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let out = node.value.shape();
                    let mut da = Tensor::zeros(sa[0], sa[1]);
                    let mut db = Tensor::zeros(sb[0], sb[1]);
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    for r in 0..out[0] {
                        for c in 0..out[1] {
                            let g = dy.get(r, c);
                            let (ia, ib) = (bidx(sa, r, c), bidx(sb, r, c));
                            let (ga, gb) = match node.op {
                                Op::Add(..) => (g, g),
                                Op::Sub(..) => (g, -g),
                                _ => (g * vb[ib], g * va[ia]),
                            };
                            da.data_mut()[ia] += ga;
                            db.data_mut()[ib] += gb;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, f) => accumulate(&mut grads, *a, dy.map(|g| g * f)),
                Op::Ln(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, zip_map(&dy, x, |g, x| g / x));
                }
                Op::Exp(a) => accumulate(&mut grads, *a, zip_map(&dy, &node.value, |g, y| g * y)),
                Op::Sigmoid(a) => {
                    accumulate(&mut grads, *a, zip_map(&dy, &node.value, |g, y| g * y * (1.0 - y)))
                }
                Op::LogSigmoid(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, zip_map(&dy, x, |g, x| g * sigmoid(-x)));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, zip_map(&dy, x, |g, x| if x > 0.0 { g } else { 0.0 }));
                }
                Op::Tanh(a) => accumulate(&mut grads, *a, zip_map(&dy, &node.value, |g, y| g * (1.0 - y * y))),
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = (0..y.cols()).map(|c| dy.get(r, c) * y.get(r, c)).sum();
                        for c in 0..y.cols() {
                            dx.set(r, c, y.get(r, c) * (dy.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let total: f64 = dy.row_slice(r).iter().sum();
                        for c in 0..y.cols() {
                            dx.set(r, c, dy.get(r, c) - y.get(r, c).exp() * total);
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::Sum(a) => {
                    let s = self.shape(*a);
                    accumulate(&mut grads, *a, Tensor::filled(s[0], s[1], dy.data()[0]));
                }
                Op::Mean(a) => {
                    let s = self.shape(*a);
                    let n = (s[0] * s[1]) as f64;
                    accumulate(&mut grads, *a, Tensor::filled(s[0], s[1], dy.data()[0] / n));
                }
                Op::SumCols(a) => {
                    let s = self.shape(*a);
                    let mut dx = Tensor::zeros(s[0], s[1]);
                    for r in 0..s[0] {
                        for c in 0..s[1] {
                            dx.set(r, c, dy.get(r, 0));
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let s = self.shape(p);
                        let mut dx = Tensor::zeros(s[0], s[1]);
                        for r in 0..s[0] {
                            for c in 0..s[1] {
                                dx.set(r, c, dy.get(r, offset + c));
                            }
                        }
                        offset += s[1];
                        accumulate(&mut grads, p, dx);
                    }
                }
                Op::Gather { table, ids } => {
                    let s = self.shape(*table);
                    let mut dx = Tensor::zeros(s[0], s[1]);
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..s[1] {
                            let v = dx.get(id, c) + dy.get(r, c);
                            dx.set(id, c, v);
                        }
                    }
                    accumulate(&mut grads, *table, dx);
                }
                Op::Pick { input, cols } => {
                    let s = self.shape(*input);
                    let mut dx = Tensor::zeros(s[0], s[1]);
                    for (r, &c) in cols.iter().enumerate() {
                        dx.set(r, c, dy.get(r, 0));
                    }
                    accumulate(&mut grads, *input, dx);
                }
            }
            grads[idx] = Some(dy);
        }
        Ok(Gradients { nodes: grads, params })
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("operands share a shape")
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, delta: Tensor) {
    match &mut grads[var.0] {
        Some(acc) => {
            for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}
