//! Reversible residual blocks: `y1 = x1 + F(x2)`, `y2 = x2 + G(y1)`.
//!
//! [`rev_backward`] rebuilds each block's inputs from its outputs and
//! differentiates one block at a time, so activations of only a single
//! block are alive during the backward pass.

use std::fmt;
use std::sync::Arc;

use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::ParamId;
use crate::tensor::Tensor;

/// Maximum tolerated gap between a recomputed block output and the stored one.
pub const DRIFT_TOLERANCE: f64 = 1e-6;

/// Shape-preserving residual branch.
pub trait Sublayer: fmt::Debug + Send + Sync {
    /// `pv` is indexed by [`ParamId`]; only ids listed by `param_ids` are bound.
    fn forward(&self, tape: &mut Tape, pv: &[Var], x: Var) -> Result<Var>;
    fn param_ids(&self) -> Vec<ParamId>;
}

/// Branch that maps everything to zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroBranch;

impl Sublayer for ZeroBranch {
    fn forward(&self, tape: &mut Tape, _pv: &[Var], x: Var) -> Result<Var> {
        tape.scale(x, 0.0)
    }
    fn param_ids(&self) -> Vec<ParamId> {
        Vec::new()
    }
}

/// Branch that returns its input.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityBranch;

impl Sublayer for IdentityBranch {
    fn forward(&self, tape: &mut Tape, _pv: &[Var], x: Var) -> Result<Var> {
        tape.scale(x, 1.0)
    }
    fn param_ids(&self) -> Vec<ParamId> {
        Vec::new()
    }
}

#[derive(Clone, Debug)]
pub struct RevBlock {
    pub f: Arc<dyn Sublayer>,
    pub g: Arc<dyn Sublayer>,
}

#[derive(Clone, Debug, Default)]
pub struct RevStack {
    pub blocks: Vec<RevBlock>,
}

/// Bookkeeping reported by [`rev_backward`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RevStats {
    /// Most block tapes alive at the same time.
    pub peak_live_blocks: usize,
    pub recomputed_blocks: usize,
    pub max_drift: f64,
}

/// Gradients with respect to the stack inputs and its parameters.
#[derive(Clone, Debug)]
pub struct RevGrads {
    pub grad_x1: Tensor,
    pub grad_x2: Tensor,
    /// One entry per id in [`RevStack::param_ids`], same order.
    pub param_grads: Vec<Tensor>,
    pub stats: RevStats,
}

fn branch(op: &str, tape: &mut Tape, pv: &[Var], layer: &dyn Sublayer, x: Var) -> Result<Var> {
    let y = layer.forward(tape, pv, x)?;
    if tape.shape(y) != tape.shape(x) {
        return Err(Error::shape(
            if op == "f" { "rev_block.F" } else { "rev_block.G" },
            tape.shape(x),
            tape.shape(y),
        ));
    }
    Ok(y)
}

/// Tape with the listed parameters bound at their ids and a dummy elsewhere.
fn bind_sparse(tape: &mut Tape, params: &[Tensor], ids: &[ParamId], trainable: bool) -> Vec<Var> {
    let dummy = tape.constant(Tensor::scalar(0.0));
    let mut pv = vec![dummy; params.len()];
    for &id in ids {
        pv[id] = if trainable { tape.param(params[id].clone()) } else { tape.constant(params[id].clone()) };
    }
    pv
}

impl RevBlock {
    pub fn new(f: Arc<dyn Sublayer>, g: Arc<dyn Sublayer>) -> Self {
        Self { f, g }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.f.param_ids();
        ids.extend(self.g.param_ids());
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Both block equations recorded on `tape`.
    pub fn forward_on_tape(&self, tape: &mut Tape, pv: &[Var], x1: Var, x2: Var) -> Result<(Var, Var)> {
        let f = branch("f", tape, pv, self.f.as_ref(), x2)?;
        let y1 = tape.add(x1, f)?;
        let g = branch("g", tape, pv, self.g.as_ref(), y1)?;
        let y2 = tape.add(x2, g)?;
        Ok((y1, y2))
    }

    fn eval_branch(&self, which: &str, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let layer = if which == "f" { self.f.as_ref() } else { self.g.as_ref() };
        let mut tape = Tape::new();
        let pv = bind_sparse(&mut tape, params, &layer.param_ids(), false);
        let xv = tape.constant(x.clone());
        let y = branch(which, &mut tape, &pv, layer, xv)?;
        Ok(tape.value(y).clone())
    }

    pub fn forward(&self, params: &[Tensor], x1: &Tensor, x2: &Tensor) -> Result<(Tensor, Tensor)> {
        if x1.shape() != x2.shape() {
            return Err(Error::shape("rev_forward", x1.shape(), x2.shape()));
        }
        let y1 = add(x1, &self.eval_branch("f", params, x2)?);
        let y2 = add(x2, &self.eval_branch("g", params, &y1)?);
        Ok((y1, y2))
    }

    pub fn inverse(&self, params: &[Tensor], y1: &Tensor, y2: &Tensor) -> Result<(Tensor, Tensor)> {
        if y1.shape() != y2.shape() {
            return Err(Error::shape("rev_inverse", y1.shape(), y2.shape()));
        }
        let x2 = sub(y2, &self.eval_branch("g", params, y1)?);
        let x1 = sub(y1, &self.eval_branch("f", params, &x2)?);
        Ok((x1, x2))
    }
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn sub(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

impl RevStack {
    pub fn new(blocks: Vec<RevBlock>) -> Self {
        Self { blocks }
    }

    /// Sorted union of parameter ids used by any block.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.blocks.iter().flat_map(RevBlock::param_ids).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// The whole stack on one tape, keeping every activation.
    pub fn forward_on_tape(&self, tape: &mut Tape, pv: &[Var], x1: Var, x2: Var) -> Result<(Var, Var)> {
        self.blocks
            .iter()
            .try_fold((x1, x2), |(a, b), block| block.forward_on_tape(tape, pv, a, b))
    }
}

/// Stack forward without keeping activations. `params` is indexed by id.
pub fn rev_forward(stack: &RevStack, params: &[Tensor], x1: &Tensor, x2: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut pair = (x1.clone(), x2.clone());
    for block in &stack.blocks {
        pair = block.forward(params, &pair.0, &pair.1)?;
    }
    Ok(pair)
}

pub fn rev_inverse(stack: &RevStack, params: &[Tensor], y1: &Tensor, y2: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut pair = (y1.clone(), y2.clone());
    for block in stack.blocks.iter().rev() {
        pair = block.inverse(params, &pair.0, &pair.1)?;
    }
    Ok(pair)
}

/// Counts block tapes currently alive.
#[derive(Debug, Default)]
struct LiveBlocks {
    live: std::cell::Cell<usize>,
    peak: std::cell::Cell<usize>,
}

struct LiveGuard<'a>(&'a LiveBlocks);

impl LiveBlocks {
    fn enter(&self) -> LiveGuard<'_> {
        self.live.set(self.live.get() + 1);
        self.peak.set(self.peak.get().max(self.live.get()));
        LiveGuard(self)
    }
}

impl Drop for LiveGuard<'_> {
    fn drop(&mut self) {
        self.0.live.set(self.0.live.get() - 1);
    }
}

type BlockResult = (Tensor, Tensor, Tensor, Tensor, Vec<(ParamId, Tensor)>, f64);

/// Reconstructs one block's inputs and differentiates it on a fresh tape.
fn block_backward(
    block: &RevBlock,
    index: usize,
    params: &[Tensor],
    y: (&Tensor, &Tensor),
    dy: (&Tensor, &Tensor),
    live: &LiveBlocks,
) -> Result<BlockResult> {
    let (x1, x2) = block.inverse(params, y.0, y.1)?;
    let ids = block.param_ids();
    let _guard = live.enter();
    let mut tape = Tape::new();
    let pv = bind_sparse(&mut tape, params, &ids, true);
    let a = tape.leaf(x1.clone().with_grad());
    let b = tape.leaf(x2.clone().with_grad());
    let (r1, r2) = block.forward_on_tape(&mut tape, &pv, a, b)?;
    let drift = tape.value(r1).max_abs_diff(y.0).max(tape.value(r2).max_abs_diff(y.1));
    if !(drift <= DRIFT_TOLERANCE) {
        return Err(Error::ReconstructionDrift { block: index, drift });
    }
    let g1 = tape.constant(dy.0.clone());
    let g2 = tape.constant(dy.1.clone());
    let p1 = tape.mul(r1, g1)?;
    let p2 = tape.mul(r2, g2)?;
    let s1 = tape.sum_all(p1)?;
    let s2 = tape.sum_all(p2)?;
    let loss = tape.add(s1, s2)?;
    tape.backward(loss)?;
    let grad_of = |tape: &Tape, v: Var, shape: &[usize]| match tape.grad(v) {
        Some(g) => Tensor::new(shape.to_vec(), g.to_vec()).expect("grad shape"),
        None => Tensor::zeros(shape.to_vec()),
    };
    let dx1 = grad_of(&tape, a, x1.shape());
    let dx2 = grad_of(&tape, b, x2.shape());
    let pg = ids
        .iter()
        .map(|&id| (id, grad_of(&tape, pv[id], params[id].shape())))
        .collect();
    Ok((x1, x2, dx1, dx2, pg, drift))
}

/// Backward pass that recomputes activations from the stack outputs.
pub fn rev_backward(
    stack: &RevStack,
    params: &[Tensor],
    y1: &Tensor,
    y2: &Tensor,
    grad_y1: &Tensor,
    grad_y2: &Tensor,
) -> Result<RevGrads> {
    if y1.shape() != y2.shape() || grad_y1.shape() != y1.shape() || grad_y2.shape() != y2.shape() {
        return Err(Error::shape("rev_backward", y1.shape(), grad_y1.shape()));
    }
    let ids = stack.param_ids();
    let slot: std::collections::HashMap<ParamId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut param_grads: Vec<Tensor> = ids.iter().map(|&id| Tensor::zeros(params[id].shape().to_vec())).collect();
    let mut stats = RevStats::default();
    let live = LiveBlocks::default();
    let (mut y1, mut y2) = (y1.clone(), y2.clone());
    let (mut g1, mut g2) = (grad_y1.clone(), grad_y2.clone());
    for (index, block) in stack.blocks.iter().enumerate().rev() {
        let (x1, x2, dx1, dx2, pg, drift) = block_backward(block, index, params, (&y1, &y2), (&g1, &g2), &live)?;
        stats.recomputed_blocks += 1;
        stats.max_drift = stats.max_drift.max(drift);
        for (id, g) in pg {
            let acc = &mut param_grads[slot[&id]];
            *acc = add(acc, &g);
        }
        (y1, y2, g1, g2) = (x1, x2, dx1, dx2);
    }
    stats.peak_live_blocks = live.peak.get();
    Ok(RevGrads { grad_x1: g1, grad_x2: g2, param_grads, stats })
}

/// The stack as a single tape node: inputs `[x1, x2, params…]` (params in
/// [`RevStack::param_ids`] order), output rows `[y1; y2]` stacked along axis 0.
#[derive(Debug)]
pub struct RevStackOp {
    pub stack: RevStack,
    pub n_params: usize,
}

impl RevStackOp {
    fn full_params(&self, inputs: &[&Tensor]) -> Vec<Tensor> {
        let mut full = vec![Tensor::scalar(0.0); self.n_params];
        for (&id, t) in self.stack.param_ids().iter().zip(&inputs[2..]) {
            full[id] = (*t).clone();
        }
        full
    }
}

impl CustomOp for RevStackOp {
    fn name(&self) -> &'static str {
        "rev_stack"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let params = self.full_params(inputs);
        let (y1, y2) = rev_forward(&self.stack, &params, inputs[0], inputs[1])?;
        let (r, c) = y1.dims2()?;
        let mut data = y1.into_data();
        data.extend_from_slice(y2.data());
        Tensor::new(vec![2 * r, c], data)
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Result<Vec<Option<Vec<f64>>>> {
        let params = self.full_params(inputs);
        let (r, c) = inputs[0].dims2()?;
        let half = r * c;
        let y1 = Tensor::new(vec![r, c], output.data()[..half].to_vec())?;
        let y2 = Tensor::new(vec![r, c], output.data()[half..].to_vec())?;
        let g1 = Tensor::new(vec![r, c], grad[..half].to_vec())?;
        let g2 = Tensor::new(vec![r, c], grad[half..].to_vec())?;
        let grads = rev_backward(&self.stack, &params, &y1, &y2, &g1, &g2)?;
        let mut out = vec![Some(grads.grad_x1.into_data()), Some(grads.grad_x2.into_data())];
        out.extend(grads.param_grads.into_iter().map(|g| Some(g.into_data())));
        Ok(out)
    }
}

/// Records the stack on `tape` as one node; returns `(y1, y2)`.
pub fn rev_stack_on_tape(tape: &mut Tape, pv: &[Var], stack: &RevStack, x1: Var, x2: Var) -> Result<(Var, Var)> {
    let ids = stack.param_ids();
    let mut inputs = vec![x1, x2];
    inputs.extend(ids.iter().map(|&id| pv[id]));
    let op = RevStackOp { stack: stack.clone(), n_params: pv.len() };
    let both = tape.custom(Arc::new(op), &inputs)?;
    let r = tape.shape(x1)[0];
    let y1 = tape.narrow(both, 0, 0, r)?;
    let y2 = tape.narrow(both, 0, r, r)?;
    Ok((y1, y2))
}
