use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::kernels::{self, gelu, gelu_grad, sigmoid};
use crate::error::{Error, Result};
use crate::tensor::{axis_split, broadcast_shape, Bcast, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Operation with a user-supplied forward and vector-Jacobian product.
///
/// `backward` receives the upstream gradient of the output and returns one
/// gradient per input (`None` for inputs that need none).
pub trait CustomOp: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &[f64],
    ) -> Result<Vec<Option<Vec<f64>>>>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Log,
    Neg,
    Scale(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul,
    MatMulBt,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    AddScalar(f64),
    Exp,
    Log,
    Powf(f64),
    Act(Activation),
    Softmax(usize),
    MaskedSoftmax(Arc<Vec<bool>>),
    MaskedLogSumExp(Arc<Vec<bool>>),
    Reduce(Reduce, usize),
    SumAll,
    Reshape(Vec<usize>),
    Transpose,
    Narrow { axis: usize, start: usize, len: usize },
    Concat(usize),
    GatherRows(Arc<Vec<usize>>),
    ScatterRows(Arc<Vec<usize>>),
    Conv1d { stride: usize, padding: usize },
    Custom(Arc<dyn CustomOp>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::MatMulBt => "matmul_bt",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Powf(_) => "powf",
            Op::Act(_) => "activation",
            Op::Softmax(_) => "softmax",
            Op::MaskedSoftmax(_) => "masked_softmax",
            Op::MaskedLogSumExp(_) => "masked_logsumexp",
            Op::Reduce(..) => "reduce",
            Op::SumAll => "sum_all",
            Op::Reshape(_) => "reshape",
            Op::Transpose => "transpose",
            Op::Narrow { .. } => "narrow",
            Op::Concat(_) => "concat",
            Op::GatherRows(_) => "gather_rows",
            Op::ScatterRows(_) => "scatter_rows",
            Op::Conv1d { .. } => "conv1d",
            Op::Custom(c) => c.name(),
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Tensor,
    /// Forward by-products needed by the backward pass (argmax indices).
    aux: Option<Vec<usize>>,
    needs_grad: bool,
}

/// Recorded computation graph for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the node list is topologically
/// sorted by construction. A tape is single-threaded; independent tapes can
/// live on different threads.
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

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it receives gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.push_node(Op::Leaf, Vec::new(), t, None, needs_grad)
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn param(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(true);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "Var from another tape");
        &self.nodes[v.index].value
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.index].op.name()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Accumulated gradient of a leaf, if any has been propagated.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.value(v).grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    fn push_node(
        &mut self,
        op: Op,
        inputs: Vec<usize>,
        value: Tensor,
        aux: Option<Vec<usize>>,
        needs_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            op,
            inputs,
            value,
            aux,
            needs_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn record(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = inputs.iter().map(|&v| self.check(v)).collect::<Result<_>>()?;
        let (value, aux) = {
            let vals: Vec<&Tensor> = idx.iter().map(|&i| &self.nodes[i].value).collect();
            eval(&op, &vals)?
        };
        let needs_grad = idx.iter().any(|&i| self.nodes[i].needs_grad);
        Ok(self.push_node(op, idx, value, aux, needs_grad))
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul, &[a, b])
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMulBt, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Transpose, &[a])
    }

    // ---- pointwise ------------------------------------------------------

    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        let binary = |b: Option<Var>| {
            b.ok_or_else(|| Error::invalid("elementwise", format!("{op:?} needs two operands")))
        };
        match op {
            ElementwiseOp::Add => self.record(Op::Add, &[a, binary(b)?]),
            ElementwiseOp::Sub => self.record(Op::Sub, &[a, binary(b)?]),
            ElementwiseOp::Mul => self.record(Op::Mul, &[a, binary(b)?]),
            ElementwiseOp::Div => self.record(Op::Div, &[a, binary(b)?]),
            ElementwiseOp::Exp => self.record(Op::Exp, &[a]),
            ElementwiseOp::Log => self.record(Op::Log, &[a]),
            ElementwiseOp::Neg => self.record(Op::Neg, &[a]),
            ElementwiseOp::Scale(c) => self.record(Op::Scale(c), &[a]),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Div, &[a, b])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Neg, &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.record(Op::Scale(c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.record(Op::AddScalar(c), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Log, &[a])
    }

    /// `a^p`; non-integer `p` requires strictly positive `a`.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        self.record(Op::Powf(p), &[a])
    }

    pub fn activation(&mut self, kind: Activation, a: Var) -> Result<Var> {
        self.record(Op::Act(kind), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(Activation::Relu, a)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.activation(Activation::Gelu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(Activation::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(Activation::Tanh, a)
    }

    // ---- normalization and reductions -----------------------------------

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.record(Op::Softmax(axis), &[a])
    }

    /// Row softmax of a rank-2 tensor restricted to `mask` (true = allowed).
    /// Masked entries are exactly 0. A row with no allowed entry is an error.
    pub fn masked_softmax(&mut self, a: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        self.record(Op::MaskedSoftmax(mask), &[a])
    }

    /// Row-wise `log Σ exp` over allowed entries; output shape `[rows, 1]`.
    pub fn masked_logsumexp(&mut self, a: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        self.record(Op::MaskedLogSumExp(mask), &[a])
    }

    /// Reduction along `axis`, keeping it with extent 1.
    pub fn reduce(&mut self, kind: Reduce, a: Var, axis: usize) -> Result<Var> {
        self.record(Op::Reduce(kind, axis), &[a])
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(Reduce::Sum, a, axis)
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce(Reduce::Mean, a, axis)
    }

    /// Maximum along `axis` plus the argmax of every slice (first occurrence
    /// wins on ties).
    pub fn max(&mut self, a: Var, axis: usize) -> Result<(Var, Vec<usize>)> {
        let v = self.reduce(Reduce::Max, a, axis)?;
        let arg = self.nodes[v.index].aux.clone().unwrap_or_default();
        Ok((v, arg))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.record(Op::SumAll, &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n)
    }

    // ---- shape manipulation ---------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        self.record(Op::Reshape(shape.into()), &[a])
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.record(Op::Narrow { axis, start, len }, &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat", "no inputs"));
        }
        self.record(Op::Concat(axis), parts)
    }

    /// Rows `a[idx[i]]` of a rank-2 tensor; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        self.record(Op::GatherRows(idx), &[a])
    }

    /// Copy of `base` with row `idx[i]` replaced by row `i` of `rows`.
    pub fn scatter_rows(&mut self, base: Var, rows: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        self.record(Op::ScatterRows(idx), &[base, rows])
    }

    /// 1-D cross-correlation: `x[B×C×L]`, `w[O×C×K]` → `[B×O×L_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        self.record(Op::Conv1d { stride, padding }, &[x, w])
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        self.record(Op::Custom(op), inputs)
    }

    // ---- differentiation ------------------------------------------------

    /// Propagates `d loss / d leaf` into every leaf that requires a gradient.
    /// Gradients accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = self.check(loss)?;
        let shape = self.nodes[root].value.shape();
        if self.nodes[root].value.numel() != 1 {
            return Err(Error::NotScalar(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&j| self.nodes[j].needs_grad).collect();
            let input_grads = vjp(node, &inputs, &needs, &g)?;
            let targets = node.inputs.clone();
            for ((j, ig), need) in targets.into_iter().zip(input_grads).zip(needs) {
                let Some(ig) = ig else { continue };
                if !need {
                    continue;
                }
                match &mut grads[j] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(())
    }

    /// Re-executes every recorded operation, substituting the given leaf
    /// values, and returns the value of every node in tape order.
    pub fn replay(&self, leaves: &[(Var, Tensor)]) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let v = if let Op::Leaf = node.op {
                leaves
                    .iter()
                    .find(|(var, _)| var.tape == self.id && var.index == i)
                    .map(|(_, t)| t.clone())
                    .unwrap_or_else(|| node.value.clone())
            } else {
                let ins: Vec<&Tensor> = node.inputs.iter().map(|&j| &values[j]).collect();
                eval(&node.op, &ins)?.0
            };
            values.push(v);
        }
        Ok(values)
    }
}

// ---- forward evaluation -------------------------------------------------

fn same_or_broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::shape(op, a.shape(), b.shape()))
}

fn binary_map(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let out_shape = same_or_broadcast(op, a, b)?;
    let data = if a.shape() == b.shape() {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let (ma, mb) = (Bcast::new(&out_shape, a.shape()), Bcast::new(&out_shape, b.shape()));
        let (ad, bd) = (a.data(), b.data());
        let n: usize = out_shape.iter().product();
        (0..n).map(|i| f(ad[ma.idx(i)], bd[mb.idx(i)])).collect()
    };
    Tensor::new(out_shape, data)
}

/// Sums `g` (shaped like the broadcast output) back down to `shape`.
fn unbroadcast(g: &[f64], out_shape: &[usize], shape: &[usize]) -> Vec<f64> {
    if out_shape == shape {
        return g.to_vec();
    }
    let map = Bcast::new(out_shape, shape);
    let mut r = vec![0.0; shape.iter().product()];
    for (i, gi) in g.iter().enumerate() {
        r[map.idx(i)] += gi;
    }
    r
}

fn mat_dims(op: &'static str, t: &Tensor, other: &Tensor) -> Result<(usize, usize)> {
    t.dims2().map_err(|_| Error::shape(op, t.shape(), other.shape()))
}

fn eval(op: &Op, x: &[&Tensor]) -> Result<(Tensor, Option<Vec<usize>>)> {
    let plain = |t: Result<Tensor>| t.map(|t| (t, None));
    match op {
        Op::Leaf => unreachable!("leaves are not evaluated"),
        Op::MatMul => {
            let (m, k) = mat_dims("matmul", x[0], x[1])?;
            let (k2, n) = mat_dims("matmul", x[1], x[0])?;
            if k != k2 {
                return Err(Error::shape("matmul", x[0].shape(), x[1].shape()));
            }
            plain(Tensor::new(
                vec![m, n],
                kernels::matmul(x[0].data(), x[1].data(), m, k, n),
            ))
        }
        Op::MatMulBt => {
            let (m, k) = mat_dims("matmul_bt", x[0], x[1])?;
            let (n, k2) = mat_dims("matmul_bt", x[1], x[0])?;
            if k != k2 {
                return Err(Error::shape("matmul_bt", x[0].shape(), x[1].shape()));
            }
            plain(Tensor::new(
                vec![m, n],
                kernels::matmul_bt(x[0].data(), x[1].data(), m, k, n),
            ))
        }
        Op::Transpose => {
            let (r, c) = x[0].dims2()?;
            plain(Tensor::new(vec![c, r], kernels::transpose(x[0].data(), r, c)))
        }
        Op::Add => plain(binary_map("add", x[0], x[1], |a, b| a + b)),
        Op::Sub => plain(binary_map("sub", x[0], x[1], |a, b| a - b)),
        Op::Mul => plain(binary_map("mul", x[0], x[1], |a, b| a * b)),
        Op::Div => {
            if let Some(index) = x[1].data().iter().position(|&v| v == 0.0) {
                return Err(Error::DivisionByZero { index });
            }
            plain(binary_map("div", x[0], x[1], |a, b| a / b))
        }
        Op::Neg => plain(Ok(x[0].map(|v| -v))),
        Op::Scale(c) => plain(Ok(x[0].map(|v| v * c))),
        Op::AddScalar(c) => plain(Ok(x[0].map(|v| v + c))),
        Op::Exp => plain(Ok(x[0].map(f64::exp))),
        Op::Log => {
            if let Some(index) = x[0].data().iter().position(|&v| v <= 0.0) {
                return Err(Error::LogDomain {
                    index,
                    value: x[0].data()[index],
                });
            }
            plain(Ok(x[0].map(f64::ln)))
        }
        Op::Powf(p) => {
            if p.fract() != 0.0 {
                if let Some(index) = x[0].data().iter().position(|&v| v <= 0.0) {
                    return Err(Error::invalid(
                        "powf",
                        format!("non-positive base {} at element {index}", x[0].data()[index]),
                    ));
                }
            }
            plain(Ok(x[0].map(|v| v.powf(*p))))
        }
        Op::Act(kind) => plain(Ok(match kind {
            Activation::Relu => x[0].map(|v| v.max(0.0)),
            Activation::Gelu => x[0].map(gelu),
            Activation::Sigmoid => x[0].map(sigmoid),
            Activation::Tanh => x[0].map(f64::tanh),
        })),
        Op::Softmax(axis) => {
            check_axis("softmax", x[0], *axis)?;
            plain(Ok(softmax_axis(x[0], *axis)))
        }
        Op::MaskedSoftmax(mask) => plain(masked_softmax(x[0], mask)),
        Op::MaskedLogSumExp(mask) => plain(masked_lse(x[0], mask)),
        Op::Reduce(kind, axis) => {
            check_axis("reduce", x[0], *axis)?;
            Ok(reduce_axis(x[0], *kind, *axis))
        }
        Op::SumAll => plain(Ok(Tensor::scalar(x[0].data().iter().sum()))),
        Op::Reshape(shape) => {
            let n: usize = shape.iter().product();
            if n != x[0].numel() {
                return Err(Error::shape("reshape", x[0].shape(), shape));
            }
            plain(Tensor::new(shape.clone(), x[0].data().to_vec()))
        }
        Op::Narrow { axis, start, len } => {
            check_axis("narrow", x[0], *axis)?;
            let (outer, alen, inner) = axis_split(x[0].shape(), *axis);
            if *len == 0 || start + len > alen {
                return Err(Error::invalid(
                    "narrow",
                    format!("range {start}..{} outside axis of length {alen}", start + len),
                ));
            }
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = o * alen * inner + start * inner;
                data.extend_from_slice(&x[0].data()[base..base + len * inner]);
            }
            let mut shape = x[0].shape().to_vec();
            shape[*axis] = *len;
            plain(Tensor::new(shape, data))
        }
        Op::Concat(axis) => plain(concat(x, *axis)),
        Op::GatherRows(idx) => {
            let (r, c) = x[0].dims2()?;
            if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
                return Err(Error::invalid("gather_rows", format!("row {bad} >= {r}")));
            }
            let mut data = Vec::with_capacity(idx.len() * c);
            for &i in idx.iter() {
                data.extend_from_slice(&x[0].data()[i * c..(i + 1) * c]);
            }
            plain(Tensor::new(vec![idx.len(), c], data))
        }
        Op::ScatterRows(idx) => {
            let (r, c) = x[0].dims2()?;
            let (u, c2) = x[1].dims2()?;
            if c != c2 || u != idx.len() || idx.iter().any(|&i| i >= r) {
                return Err(Error::shape("scatter_rows", x[0].shape(), x[1].shape()));
            }
            let mut data = x[0].data().to_vec();
            for (k, &i) in idx.iter().enumerate() {
                data[i * c..(i + 1) * c].copy_from_slice(&x[1].data()[k * c..(k + 1) * c]);
            }
            plain(Tensor::new(vec![r, c], data))
        }
        Op::Conv1d { stride, padding } => plain(conv1d_forward(x[0], x[1], *stride, *padding)),
        Op::Custom(c) => plain(c.forward(x)),
    }
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::invalid(
            op,
            format!("axis {axis} out of range for shape {:?}", t.shape()),
        ));
    }
    if t.shape()[axis] == 0 {
        return Err(Error::invalid(op, "empty axis"));
    }
    Ok(())
}

fn softmax_axis(t: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(t.shape(), axis);
    let x = t.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let m = (0..len).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for k in 0..len {
                let e = (x[at(k)] - m).exp();
                out[at(k)] = e;
                s += e;
            }
            for k in 0..len {
                out[at(k)] /= s;
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("softmax shape")
}

fn masked_dims(op: &'static str, t: &Tensor, mask: &[bool]) -> Result<(usize, usize)> {
    let (r, c) = t.dims2()?;
    if mask.len() != r * c {
        return Err(Error::invalid(
            op,
            format!("mask length {} does not match {r}×{c}", mask.len()),
        ));
    }
    if let Some(row) = (0..r).find(|&i| !mask[i * c..(i + 1) * c].iter().any(|&m| m)) {
        return Err(Error::invalid(op, format!("row {row} is fully masked")));
    }
    Ok((r, c))
}

fn masked_softmax(t: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let (r, c) = masked_dims("masked_softmax", t, mask)?;
    let x = t.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = i * c..(i + 1) * c;
        let m = x[row.clone()]
            .iter()
            .zip(&mask[row.clone()])
            .filter(|(_, &ok)| ok)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for j in row.clone() {
            if mask[j] {
                let e = (x[j] - m).exp();
                out[j] = e;
                s += e;
            }
        }
        for j in row {
            out[j] /= s;
        }
    }
    Tensor::new(vec![r, c], out)
}

fn masked_lse(t: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let (r, c) = masked_dims("masked_logsumexp", t, mask)?;
    let x = t.data();
    let mut out = vec![0.0; r];
    for i in 0..r {
        let row = i * c..(i + 1) * c;
        let m = row
            .clone()
            .filter(|&j| mask[j])
            .map(|j| x[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.filter(|&j| mask[j]).map(|j| (x[j] - m).exp()).sum();
        out[i] = m + s.ln();
    }
    Tensor::new(vec![r, 1], out)
}

fn reduce_axis(t: &Tensor, kind: Reduce, axis: usize) -> (Tensor, Option<Vec<usize>>) {
    let (outer, len, inner) = axis_split(t.shape(), axis);
    let x = t.data();
    let mut out = vec![0.0; outer * inner];
    let mut arg = (kind == Reduce::Max).then(|| vec![0usize; outer * inner]);
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let slot = o * inner + i;
            match kind {
                Reduce::Sum | Reduce::Mean => {
                    let mut s = 0.0;
                    for k in 0..len {
                        s += x[at(k)];
                    }
                    out[slot] = if kind == Reduce::Mean { s / len as f64 } else { s };
                }
                Reduce::Max => {
                    let mut best = 0;
                    for k in 1..len {
                        if x[at(k)] > x[at(best)] {
                            best = k;
                        }
                    }
                    out[slot] = x[at(best)];
                    arg.as_mut().unwrap()[slot] = best;
                }
            }
        }
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = 1;
    (Tensor::new(shape, out).expect("reduce shape"), arg)
}

fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts[0];
    check_axis("concat", first, axis)?;
    for p in &parts[1..] {
        let ok = p.rank() == first.rank()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(ax, (a, b))| ax == axis || a == b);
        if !ok {
            return Err(Error::shape("concat", first.shape(), p.shape()));
        }
    }
    let (outer, _, inner) = axis_split(first.shape(), axis);
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let len = p.shape()[axis];
            let base = o * len * inner;
            data.extend_from_slice(&p.data()[base..base + len * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(shape, data)
}

pub(crate) fn conv1d_geometry(
    x: &[usize],
    w: &[usize],
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (&[b, c, l], &[o, c2, k]) = (x, w) else {
        return Err(Error::shape("conv1d", x, w));
    };
    if c != c2 || stride == 0 || k > l + 2 * padding {
        return Err(Error::invalid(
            "conv1d",
            format!("invalid geometry: input {x:?}, kernels {w:?}, stride {stride}, padding {padding}"),
        ));
    }
    let lout = (l + 2 * padding - k) / stride + 1;
    Ok((b, c, l, o, k, lout))
}

fn conv1d_forward(x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (b, c, l, o, k, lout) = conv1d_geometry(x.shape(), w.shape(), stride, padding)?;
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; b * o * lout];
    for bi in 0..b {
        for oi in 0..o {
            let orow = &mut out[(bi * o + oi) * lout..(bi * o + oi + 1) * lout];
            for ci in 0..c {
                let xrow = &xd[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                let wrow = &wd[(oi * c + ci) * k..(oi * c + ci + 1) * k];
                for (t, acc) in orow.iter_mut().enumerate() {
                    let origin = (t * stride) as isize - padding as isize;
                    for (kk, &wv) in wrow.iter().enumerate() {
                        let pos = origin + kk as isize;
                        if pos >= 0 && (pos as usize) < l {
                            *acc += wv * xrow[pos as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, o, lout], out)
}

// ---- vector-Jacobian products -------------------------------------------

fn vjp(node: &Node, x: &[&Tensor], needs: &[bool], g: &[f64]) -> Result<Vec<Option<Vec<f64>>>> {
    let y = &node.value;
    let out_shape = y.shape();
    let one = |v: Vec<f64>| Ok(vec![Some(v)]);
    let pointwise = |f: &dyn Fn(usize) -> f64| one((0..g.len()).map(|i| g[i] * f(i)).collect());
    match &node.op {
        Op::Leaf => Ok(Vec::new()),
        Op::MatMul => {
            let (m, k) = x[0].dims2()?;
            let n = x[1].shape()[1];
            let ga = needs[0].then(|| kernels::matmul_bt(g, x[1].data(), m, n, k));
            let gb = needs[1].then(|| kernels::matmul_at(x[0].data(), g, m, k, n));
            Ok(vec![ga, gb])
        }
        Op::MatMulBt => {
            let (m, k) = x[0].dims2()?;
            let n = x[1].shape()[0];
            let ga = needs[0].then(|| kernels::matmul(g, x[1].data(), m, n, k));
            let gb = needs[1].then(|| kernels::matmul_at(g, x[0].data(), m, n, k));
            Ok(vec![ga, gb])
        }
        Op::Transpose => {
            let (r, c) = x[0].dims2()?;
            one(kernels::transpose(g, c, r))
        }
        Op::Add => Ok(vec![
            needs[0].then(|| unbroadcast(g, out_shape, x[0].shape())),
            needs[1].then(|| unbroadcast(g, out_shape, x[1].shape())),
        ]),
        Op::Sub => Ok(vec![
            needs[0].then(|| unbroadcast(g, out_shape, x[0].shape())),
            needs[1].then(|| {
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                unbroadcast(&neg, out_shape, x[1].shape())
            }),
        ]),
        Op::Mul | Op::Div => {
            let ma = Bcast::new(out_shape, x[0].shape());
            let mb = Bcast::new(out_shape, x[1].shape());
            let (a, b) = (x[0].data(), x[1].data());
            let is_div = matches!(node.op, Op::Div);
            let ga = needs[0].then(|| {
                let full: Vec<f64> = (0..g.len())
                    .map(|i| if is_div { g[i] / b[mb.idx(i)] } else { g[i] * b[mb.idx(i)] })
                    .collect();
                unbroadcast(&full, out_shape, x[0].shape())
            });
            let gb = needs[1].then(|| {
                let full: Vec<f64> = (0..g.len())
                    .map(|i| {
                        if is_div {
                            -g[i] * a[ma.idx(i)] / (b[mb.idx(i)] * b[mb.idx(i)])
                        } else {
                            g[i] * a[ma.idx(i)]
                        }
                    })
                    .collect();
                unbroadcast(&full, out_shape, x[1].shape())
            });
            Ok(vec![ga, gb])
        }
        Op::Neg => one(g.iter().map(|v| -v).collect()),
        Op::Scale(c) => one(g.iter().map(|v| v * c).collect()),
        Op::AddScalar(_) => one(g.to_vec()),
        Op::Exp => pointwise(&|i| y.data()[i]),
        Op::Log => pointwise(&|i| 1.0 / x[0].data()[i]),
        Op::Powf(p) => pointwise(&|i| p * x[0].data()[i].powf(p - 1.0)),
        Op::Act(kind) => match kind {
            Activation::Relu => pointwise(&|i| if x[0].data()[i] > 0.0 { 1.0 } else { 0.0 }),
            Activation::Gelu => pointwise(&|i| gelu_grad(x[0].data()[i])),
            Activation::Sigmoid => pointwise(&|i| {
                let s = y.data()[i];
                s * (1.0 - s)
            }),
            Activation::Tanh => pointwise(&|i| {
                let t = y.data()[i];
                1.0 - t * t
            }),
        },
        Op::Softmax(axis) => {
            let (outer, len, inner) = axis_split(out_shape, *axis);
            let yd = y.data();
            let mut gx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| o * len * inner + k * inner + i;
                    let dotp: f64 = (0..len).map(|k| g[at(k)] * yd[at(k)]).sum();
                    for k in 0..len {
                        gx[at(k)] = yd[at(k)] * (g[at(k)] - dotp);
                    }
                }
            }
            one(gx)
        }
        Op::MaskedSoftmax(_) => {
            let (r, c) = y.dims2()?;
            let yd = y.data();
            let mut gx = vec![0.0; g.len()];
            for i in 0..r {
                let row = i * c..(i + 1) * c;
                let dotp: f64 = row.clone().map(|j| g[j] * yd[j]).sum();
                for j in row {
                    gx[j] = yd[j] * (g[j] - dotp);
                }
            }
            one(gx)
        }
        Op::MaskedLogSumExp(mask) => {
            let p = masked_softmax(x[0], mask)?;
            let c = x[0].shape()[1];
            one(p
                .data()
                .iter()
                .enumerate()
                .map(|(j, &pj)| pj * g[j / c])
                .collect())
        }
        Op::Reduce(kind, axis) => {
            let (outer, len, inner) = axis_split(x[0].shape(), *axis);
            let mut gx = vec![0.0; x[0].numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let slot = o * inner + i;
                    let at = |k: usize| o * len * inner + k * inner + i;
                    match kind {
                        Reduce::Sum => (0..len).for_each(|k| gx[at(k)] = g[slot]),
                        Reduce::Mean => (0..len).for_each(|k| gx[at(k)] = g[slot] / len as f64),
                        Reduce::Max => {
                            let arg = node.aux.as_ref().expect("argmax saved");
                            gx[at(arg[slot])] = g[slot];
                        }
                    }
                }
            }
            one(gx)
        }
        Op::SumAll => one(vec![g[0]; x[0].numel()]),
        Op::Reshape(_) => one(g.to_vec()),
        Op::Narrow { axis, start, len } => {
            let (outer, alen, inner) = axis_split(x[0].shape(), *axis);
            let mut gx = vec![0.0; x[0].numel()];
            for o in 0..outer {
                let src = o * len * inner;
                let dst = o * alen * inner + start * inner;
                gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            one(gx)
        }
        Op::Concat(axis) => {
            let (outer, total, inner) = axis_split(out_shape, *axis);
            let mut grads: Vec<Vec<f64>> = x.iter().map(|p| Vec::with_capacity(p.numel())).collect();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (p, gp) in x.iter().zip(grads.iter_mut()) {
                    let n = p.shape()[*axis] * inner;
                    gp.extend_from_slice(&g[off..off + n]);
                    off += n;
                }
            }
            Ok(grads
                .into_iter()
                .zip(needs)
                .map(|(gp, &need)| need.then_some(gp))
                .collect())
        }
        Op::GatherRows(idx) => {
            let c = x[0].shape()[1];
            let mut gx = vec![0.0; x[0].numel()];
            for (k, &i) in idx.iter().enumerate() {
                for j in 0..c {
                    gx[i * c + j] += g[k * c + j];
                }
            }
            one(gx)
        }
        Op::ScatterRows(idx) => {
            let c = x[0].shape()[1];
            let gbase = needs[0].then(|| {
                let mut gb = g.to_vec();
                for &i in idx.iter() {
                    gb[i * c..(i + 1) * c].iter_mut().for_each(|v| *v = 0.0);
                }
                gb
            });
            let grows = needs[1].then(|| {
                let mut gr = Vec::with_capacity(idx.len() * c);
                for &i in idx.iter() {
                    gr.extend_from_slice(&g[i * c..(i + 1) * c]);
                }
                gr
            });
            Ok(vec![gbase, grows])
        }
        Op::Conv1d { stride, padding } => {
            let (b, c, l, o, k, lout) =
                conv1d_geometry(x[0].shape(), x[1].shape(), *stride, *padding)?;
            let (xd, wd) = (x[0].data(), x[1].data());
            let mut gx = vec![0.0; x[0].numel()];
            let mut gw = vec![0.0; x[1].numel()];
            for bi in 0..b {
                for oi in 0..o {
                    let grow = &g[(bi * o + oi) * lout..(bi * o + oi + 1) * lout];
                    for ci in 0..c {
                        let xo = (bi * c + ci) * l;
                        let wo = (oi * c + ci) * k;
                        for (t, &gv) in grow.iter().enumerate() {
                            let origin = (t * stride) as isize - *padding as isize;
                            for kk in 0..k {
                                let pos = origin + kk as isize;
                                if pos >= 0 && (pos as usize) < l {
                                    let p = pos as usize;
                                    gx[xo + p] += gv * wd[wo + kk];
                                    gw[wo + kk] += gv * xd[xo + p];
                                }
                            }
                        }
                    }
                }
            }
            Ok(vec![needs[0].then_some(gx), needs[1].then_some(gw)])
        }
        Op::Custom(c) => {
            let mut grads = c.backward(x, y, g)?;
            grads.resize(x.len(), None);
            Ok(grads)
        }
    }
}
