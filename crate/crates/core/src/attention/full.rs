use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::prob_sparse::{prob_sparse_attention, ProbSparseConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Linear, ParamSet};

/// Head layout for multi-head attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub causal: bool,
}

impl AttentionConfig {
    pub fn new(d_model: usize, n_heads: usize, causal: bool) -> Result<Self> {
        let cfg = Self { d_model, n_heads, causal };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidSpec(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// `mask[i·L_k + j] = j ≤ i`.
pub fn causal_mask(lq: usize, lk: usize) -> Arc<Vec<bool>> {
    Arc::new((0..lq * lk).map(|n| n % lk <= n / lk).collect())
}

/// `softmax(Q·Kᵀ/√d_k)·V`, optionally restricted to `mask` (true = attend).
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<Arc<Vec<bool>>>,
) -> Result<Var> {
    let (lq, dk) = tape.value(q).dims2()?;
    let (lk, dk2) = tape.value(k).dims2()?;
    let (lv, _) = tape.value(v).dims2()?;
    if dk != dk2 || lk != lv {
        return Err(Error::shape("scaled_dot_attention", tape.shape(q), tape.shape(k)));
    }
    if let Some(m) = &mask {
        if m.len() != lq * lk {
            return Err(Error::invalid(
                "scaled_dot_attention",
                format!("mask has {} entries, expected {lq}×{lk}", m.len()),
            ));
        }
    }
    let scores = tape.matmul_bt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let weights = match mask {
        Some(m) => tape.masked_softmax(scores, m)?,
        None => tape.softmax(scores, 1)?,
    };
    tape.matmul(weights, v)
}

/// Attention evaluated inside each head.
#[derive(Clone, Debug, PartialEq)]
pub enum AttentionKernel {
    Full,
    ProbSparse(ProbSparseConfig),
}

/// Per-head projections, a per-head kernel, concatenation, output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub config: AttentionConfig,
    pub kernel: AttentionKernel,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl MultiHeadAttention {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        config: AttentionConfig,
        kernel: AttentionKernel,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        Ok(Self {
            config,
            kernel,
            wq: Linear::new(params, rng, &format!("{name}.wq"), d, d)?,
            wk: Linear::new(params, rng, &format!("{name}.wk"), d, d)?,
            wv: Linear::new(params, rng, &format!("{name}.wv"), d, d)?,
            wo: Linear::new(params, rng, &format!("{name}.wo"), d, d)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, pv: &[Var], x_q: Var, x_kv: Var) -> Result<Var> {
        multi_head_attention(tape, pv, x_q, x_kv, self)
    }
}

pub fn multi_head_attention(
    tape: &mut Tape,
    pv: &[Var],
    x_q: Var,
    x_kv: Var,
    layer: &MultiHeadAttention,
) -> Result<Var> {
    let cfg = layer.config;
    let q = layer.wq.forward(tape, pv, x_q)?;
    let k = layer.wk.forward(tape, pv, x_kv)?;
    let v = layer.wv.forward(tape, pv, x_kv)?;
    let (lq, lk) = (tape.value(q).dims2()?.0, tape.value(k).dims2()?.0);
    let dk = cfg.d_k();
    let mask = cfg.causal.then(|| causal_mask(lq, lk));
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let (qh, kh, vh) = if cfg.n_heads == 1 {
            (q, k, v)
        } else {
            (
                tape.narrow(q, 1, h * dk, dk)?,
                tape.narrow(k, 1, h * dk, dk)?,
                tape.narrow(v, 1, h * dk, dk)?,
            )
        };
        let out = match &layer.kernel {
            AttentionKernel::Full => scaled_dot_attention(tape, qh, kh, vh, mask.clone())?,
            AttentionKernel::ProbSparse(ps) => {
                let ps = ProbSparseConfig {
                    seed: ps.seed.wrapping_add(h as u64),
                    ..ps.clone()
                };
                prob_sparse_attention(tape, qh, kh, vh, &ps, cfg.causal)?
            }
        };
        heads.push(out);
    }
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat(&heads, 1)? };
    layer.wo.forward(tape, pv, cat)
}
