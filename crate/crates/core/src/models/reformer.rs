//! Encoder-only LSH transformer on reversible blocks with a flat linear head.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::common::{check, embed};
use super::spec::ModelSpec;
use crate::attention::{LshAttention, LshConfig};
use crate::autodiff::{Activation, Tape, Var};
use crate::error::Result;
use crate::nn::{positional_encoding, FeedForward, LayerNorm, Linear, ParamId, ParamSet};
use crate::reversible::{rev_stack_on_tape, RevBlock, RevStack, Sublayer};
use crate::tensor::Tensor;

/// Pre-norm LSH attention branch.
#[derive(Clone, Debug)]
pub struct LshBranch {
    pub norm: LayerNorm,
    pub attn: LshAttention,
}

impl Sublayer for LshBranch {
    fn forward(&self, tape: &mut Tape, pv: &[Var], x: Var) -> Result<Var> {
        let n = self.norm.forward(tape, pv, x)?;
        self.attn.forward(tape, pv, n, false)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let a = &self.attn;
        vec![
            self.norm.gamma,
            self.norm.beta,
            a.w_qk.weight,
            a.w_qk.bias,
            a.w_v.weight,
            a.w_v.bias,
            a.w_o.weight,
            a.w_o.bias,
        ]
    }
}

/// Pre-norm feed-forward branch.
#[derive(Clone, Debug)]
pub struct FeedForwardBranch {
    pub norm: LayerNorm,
    pub ffn: FeedForward,
}

impl Sublayer for FeedForwardBranch {
    fn forward(&self, tape: &mut Tape, pv: &[Var], x: Var) -> Result<Var> {
        let n = self.norm.forward(tape, pv, x)?;
        self.ffn.forward(tape, pv, n)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let f = &self.ffn;
        vec![self.norm.gamma, self.norm.beta, f.up.weight, f.up.bias, f.down.weight, f.down.bias]
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Reformer {
    embed: Linear,
    pe: Tensor,
    stack: RevStack,
    norm: LayerNorm,
    head: Linear,
}

impl Reformer {
    pub(crate) fn new(spec: &ModelSpec, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = spec.d_model;
        let embed = Linear::new(params, rng, "embed", spec.n_inputs(), d)?;
        let mut blocks = Vec::new();
        for i in 0..spec.n_encoder_layers {
            let p = format!("encoder.{i}");
            let lsh = LshConfig { seed: spec.lsh.seed.wrapping_add(i as u64), ..spec.lsh.clone() };
            let f = LshBranch {
                norm: LayerNorm::new(params, &format!("{p}.attn_norm"), d)?,
                attn: LshAttention::new(params, rng, &format!("{p}.lsh"), d, lsh)?,
            };
            let g = FeedForwardBranch {
                norm: LayerNorm::new(params, &format!("{p}.ffn_norm"), d)?,
                ffn: FeedForward::new(params, rng, &format!("{p}.ffn"), d, spec.d_ff, Activation::Gelu)?,
            };
            blocks.push(RevBlock::new(Arc::new(f), Arc::new(g)));
        }
        Ok(Self {
            embed,
            pe: positional_encoding(spec.lookback, d)?,
            stack: RevStack::new(blocks),
            norm: LayerNorm::new(params, "encoder.norm", d)?,
            head: Linear::new(params, rng, "head", spec.lookback * d, spec.horizon)?,
        })
    }

    pub(crate) fn forward(&self, spec: &ModelSpec, tape: &mut Tape, pv: &[Var], hist: Var) -> Result<Var> {
        let x = embed(tape, pv, &self.embed, &self.pe, hist)?;
        let (y1, y2) = rev_stack_on_tape(tape, pv, &self.stack, x, x)?;
        let y1 = check(tape, y1, || "encoder.reversible".into())?;
        let sum = tape.add(y1, y2)?;
        let merged = tape.scale(sum, 0.5)?;
        let merged = self.norm.forward(tape, pv, merged)?;
        let flat = tape.reshape(merged, vec![1, spec.lookback * spec.d_model])?;
        let out = self.head.forward(tape, pv, flat)?;
        let out = tape.reshape(out, vec![spec.horizon, 1])?;
        check(tape, out, || "head".into())
    }
}
