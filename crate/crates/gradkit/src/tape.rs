//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; nodes are only
//! ever appended, so index order is a topological order and [`Tape::backward`]
//! walks the nodes once in reverse. Values are checked for NaN/Inf as they
//! are produced, both forward and backward, and the offending op is named.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::error::{GradError, Result};
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    GatherRows { input: Var, rows: Vec<usize> },
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Ln(Var),
    Clamp(Var, f64, f64),
    Softmax(Var, usize),
    MaskedSoftmaxRows { input: Var, allowed: Vec<Vec<usize>> },
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Concat { .. } => "concat",
            Op::GatherRows { .. } => "gather_rows",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Ln(..) => "ln",
            Op::Clamp(..) => "clamp",
            Op::Softmax(..) => "softmax",
            Op::MaskedSoftmaxRows { .. } => "masked_softmax_rows",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::MeanAxis(..) => "mean_axis",
        }
    }
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Parameters are borrowed from a [`ParamStore`]
/// rather than copied, so a tape cannot outlive the store it reads.
#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    param_vars: HashMap<ParamId, Var>,
}

fn broadcast_dim(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    let (ar, ac) = a.dims(op)?;
    let (br, bc) = b.dims(op)?;
    let pick = |x: usize, y: usize| -> Option<usize> {
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
    match (pick(ar, br), pick(ac, bc)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(GradError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }),
    }
}

#[inline]
fn bidx(t: &Tensor, i: usize, j: usize) -> usize {
    let (r, c) = (t.rows(), t.cols());
    (if r == 1 { 0 } else { i }) * c + if c == 1 { 0 } else { j }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(GradError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_leaf(&mut self, value: Cow<'p, Tensor>, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(GradError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A differentiable input owned by the tape.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push_leaf(Cow::Owned(value), true)
    }

    /// A non-differentiable input (adjacency matrices, targets, masks).
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push_leaf(Cow::Owned(value), false)
    }

    /// A differentiable input borrowed from the caller.
    pub fn leaf_ref(&mut self, value: &'p Tensor) -> Result<Var> {
        self.push_leaf(Cow::Borrowed(value), true)
    }

    /// The store's parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> Result<Var> {
        if let Some(v) = self.param_vars.get(&id) {
            return Ok(*v);
        }
        let v = self.push_leaf(Cow::Borrowed(store.value(id)), true)?;
        self.param_vars.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (_, ac) = ta.dims("matmul")?;
        let (br, _) = tb.dims("matmul")?;
        if ac != br {
            return Err(GradError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out = gemm(ta, false, tb, false);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        t.dims("transpose")?;
        let out = t.transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let name = op.name();
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, c) = broadcast_dim(name, ta, tb)?;
        let mut out = Vec::with_capacity(r * c);
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..r {
            for j in 0..c {
                out.push(f(ad[bidx(ta, i, j)], bd[bidx(tb, i, j)]));
            }
        }
        self.push(Tensor::matrix(r, c, out), op, &[a, b])
    }

    /// Elementwise sum with row/column broadcasting of size-1 dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a), &[a])
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() || axis > 1 {
            return Err(GradError::InvalidArgument {
                op: "concat",
                detail: format!("{} inputs, axis {axis}", inputs.len()),
            });
        }
        let first = self.value(inputs[0]);
        let (r0, c0) = first.dims("concat")?;
        let mut dims = Vec::with_capacity(inputs.len());
        for v in inputs {
            let t = self.value(*v);
            let (r, c) = t.dims("concat")?;
            let ok = if axis == 0 { c == c0 } else { r == r0 };
            if !ok {
                return Err(GradError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            dims.push((r, c));
        }
        let out = if axis == 0 {
            let rows: usize = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(rows * c0);
            for v in inputs {
                data.extend_from_slice(self.value(*v).data());
            }
            Tensor::matrix(rows, c0, data)
        } else {
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for v in inputs {
                    data.extend_from_slice(self.value(*v).row_slice(i));
                }
            }
            Tensor::matrix(r0, cols, data)
        };
        self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    /// Rows `rows[0], rows[1], ...` of `a`; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims("gather_rows")?;
        if let Some(bad) = rows.iter().find(|&&i| i >= r) {
            return Err(GradError::InvalidArgument {
                op: "gather_rows",
                detail: format!("row {bad} out of range for {r} rows"),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::matrix(rows.len(), c, data);
        self.push(
            out,
            Op::GatherRows {
                input: a,
                rows: rows.to_vec(),
            },
            &[a],
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let rows: Vec<usize> = (start..start + len).collect();
        self.gather_rows(a, &rows)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope), &[a])
    }

    /// Natural log; non-positive inputs trip the non-finite trap.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Ln(a), &[a])
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi), &[a])
    }

    /// Softmax along `axis` (0: down each column, 1: across each row).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims("softmax")?;
        if axis > 1 {
            return Err(GradError::InvalidArgument {
                op: "softmax",
                detail: format!("axis {axis}"),
            });
        }
        let mut out = t.clone();
        let (outer, inner, stride_o, stride_i) = if axis == 1 { (r, c, c, 1) } else { (c, r, 1, c) };
        let d = out.data_mut();
        for o in 0..outer {
            let at = |k: usize| o * stride_o + k * stride_i;
            let max = (0..inner).map(|k| d[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..inner {
                let e = (d[at(k)] - max).exp();
                d[at(k)] = e;
                total += e;
            }
            for k in 0..inner {
                d[at(k)] /= total;
            }
        }
        self.push(out, Op::Softmax(a, axis), &[a])
    }

    /// Row-wise softmax restricted to the columns in `allowed[row]`; all
    /// other entries of the output are zero. Every row needs at least one
    /// allowed column.
    pub fn masked_softmax_rows(&mut self, a: Var, allowed: &[Vec<usize>]) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims("masked_softmax_rows")?;
        if allowed.len() != r {
            return Err(GradError::InvalidArgument {
                op: "masked_softmax_rows",
                detail: format!("{} mask rows for {r} rows", allowed.len()),
            });
        }
        let mut out = Tensor::zeros(&[r, c]);
        for (i, cols) in allowed.iter().enumerate() {
            if cols.is_empty() || cols.iter().any(|&j| j >= c) {
                return Err(GradError::InvalidArgument {
                    op: "masked_softmax_rows",
                    detail: format!("row {i} has invalid allowed set {cols:?}"),
                });
            }
            let max = cols.iter().map(|&j| t.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = cols.iter().map(|&j| (t.get(i, j) - max).exp()).sum();
            for &j in cols {
                out.set(i, j, (t.get(i, j) - max).exp() / total);
            }
        }
        self.push(
            out,
            Op::MaskedSoftmaxRows {
                input: a,
                allowed: allowed.to_vec(),
            },
            &[a],
        )
    }

    /// Sum of all elements, as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(GradError::InvalidArgument {
                op: "mean",
                detail: "empty tensor".into(),
            });
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Sum along `axis`: axis 0 gives `1 x cols`, axis 1 gives `rows x 1`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = reduce_axis(self.value(a), axis, "sum_axis")?;
        self.push(out, Op::SumAxis(a, axis), &[a])
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let mut out = reduce_axis(t, axis, "mean_axis")?;
        let n = if axis == 0 { t.rows() } else { t.cols() };
        if n == 0 {
            return Err(GradError::InvalidArgument {
                op: "mean_axis",
                detail: "empty axis".into(),
            });
        }
        out.scale_in_place(1.0 / n as f64);
        self.push(out, Op::MeanAxis(a, axis), &[a])
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_val = self.value(output);
        if out_val.len() != 1 {
            return Err(GradError::NonScalarOutput {
                shape: out_val.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(out_val.shape(), 1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, contribution) in self.propagate(node, &g) {
                if !contribution.all_finite() {
                    return Err(GradError::NonFiniteGradient { op: node.op.name() });
                }
                self.accumulate(&mut grads, input, contribution);
            }
            grads[i] = Some(g);
        }

        let mut params = ParamGrads::new();
        for (id, v) in &self.param_vars {
            if let Some(g) = grads.get(v.0).and_then(Option::as_ref) {
                params.insert(*id, g.clone());
            }
        }
        Ok(Gradients { by_node: grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<'p>, g: &Tensor) -> Vec<(Var, Tensor)> {
        let mut out = Vec::new();
        let y = &*node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    out.push((*a, gemm(g, false, tb, true)));
                }
                if self.nodes[b.0].requires_grad {
                    out.push((*b, gemm(ta, true, g, false)));
                }
            }
            Op::Transpose(a) => out.push((*a, g.transpose())),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(ta.shape());
                let mut gb = Tensor::zeros(tb.shape());
                let (r, c) = (g.rows(), g.cols());
                for i in 0..r {
                    for j in 0..c {
                        let gv = g.get(i, j);
                        let (ia, ib) = (bidx(ta, i, j), bidx(tb, i, j));
                        let (da, db) = match node.op {
                            Op::Add(..) => (gv, gv),
                            Op::Sub(..) => (gv, -gv),
                            _ => (gv * tb.data()[ib], gv * ta.data()[ia]),
                        };
                        ga.data_mut()[ia] += da;
                        gb.data_mut()[ib] += db;
                    }
                }
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::Scale(a, f) => out.push((*a, g.map(|v| v * f))),
            Op::AddScalar(a) => out.push((*a, g.clone())),
            Op::Concat { inputs, axis } => {
                let mut offset = 0;
                for v in inputs {
                    let t = self.value(*v);
                    let (r, c) = (t.rows(), t.cols());
                    let part = if *axis == 0 {
                        let cols = g.cols();
                        Tensor::matrix(r, c, g.data()[offset * cols..(offset + r) * cols].to_vec())
                    } else {
                        let mut data = Vec::with_capacity(r * c);
                        for i in 0..r {
                            data.extend_from_slice(&g.row_slice(i)[offset..offset + c]);
                        }
                        Tensor::matrix(r, c, data)
                    };
                    offset += if *axis == 0 { r } else { c };
                    out.push((*v, part));
                }
            }
            Op::GatherRows { input, rows } => {
                let t = self.value(*input);
                let mut gi = Tensor::zeros(t.shape());
                let c = t.cols();
                for (k, &src) in rows.iter().enumerate() {
                    let dst = &mut gi.data_mut()[src * c..(src + 1) * c];
                    for (d, s) in dst.iter_mut().zip(g.row_slice(k)) {
                        *d += s;
                    }
                }
                out.push((*input, gi));
            }
            Op::Sigmoid(a) => {
                let d = zip_map(g, y, |gv, yv| gv * yv * (1.0 - yv));
                out.push((*a, d));
            }
            Op::Tanh(a) => {
                let d = zip_map(g, y, |gv, yv| gv * (1.0 - yv * yv));
                out.push((*a, d));
            }
            Op::LeakyRelu(a, slope) => {
                let d = zip_map(g, self.value(*a), |gv, x| if x > 0.0 { gv } else { gv * slope });
                out.push((*a, d));
            }
            Op::Ln(a) => {
                let d = zip_map(g, self.value(*a), |gv, x| gv / x);
                out.push((*a, d));
            }
            Op::Clamp(a, lo, hi) => {
                let d = zip_map(g, self.value(*a), |gv, x| if x < *lo || x > *hi { 0.0 } else { gv });
                out.push((*a, d));
            }
            Op::Softmax(a, axis) => {
                let (r, c) = (y.rows(), y.cols());
                let mut d = Tensor::zeros(&[r, c]);
                let (outer, inner, so, si) = if *axis == 1 { (r, c, c, 1) } else { (c, r, 1, c) };
                for o in 0..outer {
                    let at = |k: usize| o * so + k * si;
                    let dot: f64 = (0..inner).map(|k| g.data()[at(k)] * y.data()[at(k)]).sum();
                    for k in 0..inner {
                        d.data_mut()[at(k)] = y.data()[at(k)] * (g.data()[at(k)] - dot);
                    }
                }
                out.push((*a, d));
            }
            Op::MaskedSoftmaxRows { input, allowed } => {
                let mut d = Tensor::zeros(y.shape());
                for (i, cols) in allowed.iter().enumerate() {
                    let dot: f64 = cols.iter().map(|&j| g.get(i, j) * y.get(i, j)).sum();
                    for &j in cols {
                        d.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                    }
                }
                out.push((*input, d));
            }
            Op::Sum(a) => {
                let t = self.value(*a);
                out.push((*a, Tensor::full(t.shape(), g.item())));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let v = g.item() / t.len() as f64;
                out.push((*a, Tensor::full(t.shape(), v)));
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let t = self.value(*a);
                let (r, c) = (t.rows(), t.cols());
                let n = if *axis == 0 { r } else { c };
                let factor = if matches!(node.op, Op::MeanAxis(..)) { 1.0 / n as f64 } else { 1.0 };
                let mut d = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    for j in 0..c {
                        let gv = if *axis == 0 { g.get(0, j) } else { g.get(i, 0) };
                        d.set(i, j, gv * factor);
                    }
                }
                out.push((*a, d));
            }
        }
        out
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map shapes")
}

fn reduce_axis(t: &Tensor, axis: usize, op: &'static str) -> Result<Tensor> {
    let (r, c) = t.dims(op)?;
    match axis {
        0 => {
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (o, v) in out.iter_mut().zip(t.row_slice(i)) {
                    *o += v;
                }
            }
            Ok(Tensor::matrix(1, c, out))
        }
        1 => Ok(Tensor::matrix(r, 1, (0..r).map(|i| t.row_slice(i).iter().sum()).collect())),
        _ => Err(GradError::InvalidArgument {
            op,
            detail: format!("axis {axis}"),
        }),
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    params: ParamGrads,
}

impl Gradients {
    /// Gradient with respect to `v`, if `v` lies on a path to the output.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.by_node.get(v.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![0.0, 0.0])).unwrap();
        let y = tape.softmax(x, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn leaky_relu_negative_slope() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(-1.0)).unwrap();
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert_abs_diff_eq!(tape.value(y).item(), -0.2, epsilon = 1e-15);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0)).unwrap();
        let y = tape.sigmoid(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 0.25);
    }

    #[test]
    fn identity_and_square() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0)).unwrap();
        let g = tape.backward(x).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 1.0);

        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn leaf_used_twice_gets_summed_gradient() {
        // f(x) = sum(sigmoid(x)) + sum(3x): the shared leaf must collect both branches
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![0.3, -0.7])).unwrap();
        let a = tape.sigmoid(x).unwrap();
        let b = tape.scale(x, 3.0).unwrap();
        let sa = tape.sum(a).unwrap();
        let sb = tape.sum(b).unwrap();
        let f = tape.add(sa, sb).unwrap();
        let g = tape.backward(f).unwrap();

        // the same function built from two independent copies of x
        let mut tape2 = Tape::new();
        let x1 = tape2.leaf(Tensor::row(vec![0.3, -0.7])).unwrap();
        let x2 = tape2.leaf(Tensor::row(vec![0.3, -0.7])).unwrap();
        let a = tape2.sigmoid(x1).unwrap();
        let b = tape2.scale(x2, 3.0).unwrap();
        let sa = tape2.sum(a).unwrap();
        let sb = tape2.sum(b).unwrap();
        let f2 = tape2.add(sa, sb).unwrap();
        let g2 = tape2.backward(f2).unwrap();

        let summed: Vec<f64> = g2.wrt(x1).unwrap().data().iter().zip(g2.wrt(x2).unwrap().data()).map(|(p, q)| p + q).collect();
        assert_eq!(g.wrt(x).unwrap().data(), summed.as_slice());
    }

    #[test]
    fn non_scalar_backward_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(x), Err(GradError::NonScalarOutput { .. })));
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.leaf(Tensor::zeros(&[2, 3])).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            GradError::ShapeMismatch {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("matmul"));
        let c = tape.leaf(Tensor::zeros(&[3, 2])).unwrap();
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn ln_of_negative_is_trapped() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(-1.0)).unwrap();
        assert_eq!(tape.ln(x).unwrap_err(), GradError::NonFinite { op: "ln" });
    }

    #[test]
    fn non_finite_gradient_is_trapped() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1e-300)).unwrap();
        let y = tape.ln(x).unwrap();
        let z = tape.scale(y, 1e300).unwrap();
        let err = tape.backward(z).err().unwrap();
        assert_eq!(err, GradError::NonFiniteGradient { op: "ln" });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::row(vec![1.0, 2.0])).unwrap();
        let x = tape.leaf(Tensor::row(vec![3.0, 4.0])).unwrap();
        let y = tape.mul(c, x).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.wrt(c).is_none());
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn masked_softmax_zeroes_disallowed_entries() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 5.0, 1.0], vec![0.0, 0.0, 0.0]])).unwrap();
        let y = tape.masked_softmax_rows(x, &[vec![0, 2], vec![1]]).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.0, 0.5, 0.0, 1.0, 0.0]);
        assert!(tape.masked_softmax_rows(x, &[vec![], vec![1]]).is_err());
    }

    #[test]
    fn param_leaf_is_deduplicated() {
        use crate::params::{ParamGroup, ParamStore};
        let mut store = ParamStore::new();
        let id = store.insert("w", ParamGroup::Inter, Tensor::scalar(2.0)).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&store, id).unwrap();
        let b = tape.param(&store, id).unwrap();
        assert_eq!(a, b);
        let y = tape.mul(a, b).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.params().get(id).unwrap().item(), 4.0);
    }
}
