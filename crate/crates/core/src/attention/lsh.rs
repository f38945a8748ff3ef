use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Linear, ParamSet};
use crate::tensor::Tensor;

/// Hashing and chunking parameters of LSH attention.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LshConfig {
    pub n_buckets: usize,
    pub n_rounds: usize,
    pub chunk_len: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for LshConfig {
    fn default() -> Self {
        Self { n_buckets: 8, n_rounds: 2, chunk_len: 16, seed: 0 }
    }
}

impl LshConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_buckets < 2 || !self.n_buckets.is_multiple_of(2) {
            return Err(Error::InvalidSpec(format!(
                "n_buckets must be even and at least 2, got {}",
                self.n_buckets
            )));
        }
        if self.n_rounds == 0 || self.chunk_len == 0 {
            return Err(Error::InvalidSpec("n_rounds and chunk_len must be positive".into()));
        }
        Ok(())
    }
}

/// Random-rotation angular hash: per round, `argmax([xR; −xR])` with a
/// seeded Gaussian `R[d × n_buckets/2]`. Returns `[n_rounds][L]` bucket ids.
pub fn lsh_hash(vectors: &Tensor, cfg: &LshConfig) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    let (l, d) = vectors.dims2()?;
    let half = cfg.n_buckets / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rounds = Vec::with_capacity(cfg.n_rounds);
    for _ in 0..cfg.n_rounds {
        let rot: Vec<f64> = (0..d * half).map(|_| StandardNormal.sample(&mut rng)).collect();
        let buckets = (0..l)
            .map(|i| {
                let x = vectors.row(i);
                let mut best = (f64::NEG_INFINITY, 0);
                for sign in [1.0, -1.0] {
                    for b in 0..half {
                        let proj: f64 = (0..d).fold(0.0, |acc, p| acc + x[p] * rot[p * half + b]);
                        let v = sign * proj;
                        let id = if sign > 0.0 { b } else { half + b };
                        if v > best.0 {
                            best = (v, id);
                        }
                    }
                }
                best.1
            })
            .collect();
        rounds.push(buckets);
    }
    Ok(rounds)
}

/// Stable sort of positions by `(bucket, position)`.
pub fn bucket_order(buckets: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..buckets.len()).collect();
    order.sort_by_key(|&i| (buckets[i], i));
    order
}

/// Shared-QK attention over explicit bucket assignments (one `Vec` per round).
///
/// Keys are the length-normalized `qk` rows. Each sorted chunk attends to
/// itself and the preceding chunk, restricted to equal buckets (and to
/// earlier positions when `causal`). A position only attends to itself when
/// nothing else is available. Rounds are merged with weights
/// `softmax_r(logsumexp_r)`.
pub fn lsh_attention_bucketed(
    tape: &mut Tape,
    qk: Var,
    v: Var,
    buckets: &[Vec<usize>],
    chunk_len: usize,
    causal: bool,
) -> Result<Var> {
    let (l, d) = tape.value(qk).dims2()?;
    let (lv, _) = tape.value(v).dims2()?;
    if l != lv {
        return Err(Error::shape("lsh_attention", tape.shape(qk), tape.shape(v)));
    }
    if buckets.is_empty() || buckets.iter().any(|b| b.len() != l) || chunk_len == 0 {
        return Err(Error::invalid("lsh_attention", "bucket rounds must cover every position"));
    }
    let sq = tape.mul(qk, qk)?;
    let norm2 = tape.sum(sq, 1)?;
    let norm2 = tape.add_scalar(norm2, KEY_NORM_EPS)?;
    let inv = tape.powf(norm2, -0.5)?;
    let keys = tape.mul(qk, inv)?;
    let scale = 1.0 / (d as f64).sqrt();

    let mut outs = Vec::with_capacity(buckets.len());
    let mut lses = Vec::with_capacity(buckets.len());
    for round in buckets {
        let order = bucket_order(round);
        let mut inverse = vec![0; l];
        for (s, &p) in order.iter().enumerate() {
            inverse[p] = s;
        }
        let order = Arc::new(order);
        let sq = tape.gather_rows(qk, order.clone())?;
        let sk = tape.gather_rows(keys, order.clone())?;
        let sv = tape.gather_rows(v, order.clone())?;
        let mut chunk_out = Vec::new();
        let mut chunk_lse = Vec::new();
        let mut start = 0;
        while start < l {
            let len = chunk_len.min(l - start);
            let kstart = start.saturating_sub(chunk_len);
            let klen = start + len - kstart;
            let qc = tape.narrow(sq, 0, start, len)?;
            let kc = tape.narrow(sk, 0, kstart, klen)?;
            let vc = tape.narrow(sv, 0, kstart, klen)?;
            let mut mask = vec![false; len * klen];
            for i in 0..len {
                let pi = order[start + i];
                let row = &mut mask[i * klen..(i + 1) * klen];
                let mut self_slot = None;
                for (j, slot) in row.iter_mut().enumerate() {
                    let pj = order[kstart + j];
                    if round[pi] != round[pj] || (causal && pj > pi) {
                        continue;
                    }
                    if pi == pj {
                        self_slot = Some(j);
                    } else {
                        *slot = true;
                    }
                }
                if !row.iter().any(|&m| m) {
                    if let Some(j) = self_slot {
                        row[j] = true;
                    }
                }
            }
            let mask = Arc::new(mask);
            let scores = tape.matmul_bt(qc, kc)?;
            let scores = tape.scale(scores, scale)?;
            let w = tape.masked_softmax(scores, mask.clone())?;
            chunk_out.push(tape.matmul(w, vc)?);
            chunk_lse.push(tape.masked_logsumexp(scores, mask)?);
            start += len;
        }
        let so = if chunk_out.len() == 1 { chunk_out[0] } else { tape.concat(&chunk_out, 0)? };
        let sl = if chunk_lse.len() == 1 { chunk_lse[0] } else { tape.concat(&chunk_lse, 0)? };
        let inverse = Arc::new(inverse);
        outs.push(tape.gather_rows(so, inverse.clone())?);
        lses.push(tape.gather_rows(sl, inverse)?);
    }
    if outs.len() == 1 {
        return Ok(outs[0]);
    }
    let lse = tape.concat(&lses, 1)?;
    let w = tape.softmax(lse, 1)?;
    let mut acc: Option<Var> = None;
    for (r, &o) in outs.iter().enumerate() {
        let wr = tape.narrow(w, 1, r, 1)?;
        let term = tape.mul(o, wr)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("at least one round"))
}

/// Added to squared key norms before normalizing.
pub const KEY_NORM_EPS: f64 = 1e-12;

/// Projections of a single-head LSH attention layer.
#[derive(Clone, Debug)]
pub struct LshAttention {
    pub config: LshConfig,
    pub w_qk: Linear,
    pub w_v: Linear,
    pub w_o: Linear,
}

impl LshAttention {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        config: LshConfig,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            w_qk: Linear::new(params, rng, &format!("{name}.wqk"), d_model, d_model)?,
            w_v: Linear::new(params, rng, &format!("{name}.wv"), d_model, d_model)?,
            w_o: Linear::new(params, rng, &format!("{name}.wo"), d_model, d_model)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, pv: &[Var], x: Var, causal: bool) -> Result<Var> {
        lsh_attention(tape, pv, x, self, causal)
    }
}

/// Hash the shared query/key projection, attend within buckets, project out.
pub fn lsh_attention(tape: &mut Tape, pv: &[Var], x: Var, layer: &LshAttention, causal: bool) -> Result<Var> {
    let qk = layer.w_qk.forward(tape, pv, x)?;
    let v = layer.w_v.forward(tape, pv, x)?;
    let buckets = lsh_hash(tape.value(qk), &layer.config)?;
    let out = lsh_attention_bucketed(tape, qk, v, &buckets, layer.config.chunk_len, causal)?;
    layer.w_o.forward(tape, pv, out)
}
