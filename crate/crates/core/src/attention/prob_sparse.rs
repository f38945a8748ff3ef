use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::full::{causal_mask, scaled_dot_attention};
use super::select::top_k_indices;
use crate::autodiff::{CustomOp, Tape, Var};
use crate::autodiff::kernels::dot;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sampling parameters of ProbSparse attention.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbSparseConfig {
    /// `c` in `u = ⌈c·ln L_q⌉` and the key-sample size `⌈c·ln L_k⌉`.
    pub factor: f64,
    #[serde(default)]
    pub seed: u64,
    /// Score every query against all keys instead of a sample.
    #[serde(default)]
    pub sample_all_keys: bool,
}

impl Default for ProbSparseConfig {
    fn default() -> Self {
        Self { factor: 5.0, seed: 0, sample_all_keys: false }
    }
}

impl ProbSparseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "ProbSparse factor must be positive, got {}",
                self.factor
            )));
        }
        Ok(())
    }
}

/// `⌈c·ln n⌉` clamped to `1..=n`.
pub fn log_count(c: f64, n: usize) -> usize {
    let raw = (c * (n as f64).ln()).ceil();
    (raw.max(1.0) as usize).min(n)
}

/// `max_j s_j − mean_j s_j` with `s_j = q·k_j/√d_k` over the rows of `k_sample`.
pub fn sparsity_measurement(q: &[f64], k_sample: &Tensor) -> Result<f64> {
    let (s, d) = k_sample.dims2()?;
    if d != q.len() {
        return Err(Error::shape("sparsity_measurement", &[q.len()], k_sample.shape()));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for j in 0..s {
        let v = dot(q, k_sample.row(j)) * scale;
        max = max.max(v);
        sum += v;
    }
    Ok((max - sum / s as f64).max(0.0))
}

/// Which keys were sampled and which queries won the Top-u ranking.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbSparseSelection {
    pub key_sample: Vec<usize>,
    pub top_queries: Vec<usize>,
}

pub fn prob_sparse_select(q: &Tensor, k: &Tensor, cfg: &ProbSparseConfig) -> Result<ProbSparseSelection> {
    cfg.validate()?;
    let (lq, d) = q.dims2()?;
    let (lk, d2) = k.dims2()?;
    if d != d2 {
        return Err(Error::shape("prob_sparse_attention", q.shape(), k.shape()));
    }
    let key_sample = if cfg.sample_all_keys {
        (0..lk).collect()
    } else {
        let s = log_count(cfg.factor, lk);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = rand::seq::index::sample(&mut rng, lk, s).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut sample = Vec::with_capacity(key_sample.len() * d);
    for &j in &key_sample {
        sample.extend_from_slice(k.row(j));
    }
    let sample = Tensor::new(vec![key_sample.len(), d], sample)?;
    let scores = (0..lq)
        .map(|i| sparsity_measurement(q.row(i), &sample))
        .collect::<Result<Vec<_>>>()?;
    let mut top_queries = top_k_indices(&scores, log_count(cfg.factor, lq));
    top_queries.sort_unstable();
    Ok(ProbSparseSelection { key_sample, top_queries })
}

/// Top-u attention with a fixed selection.
pub fn prob_sparse_with_selection(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    selection: &ProbSparseSelection,
    causal: bool,
) -> Result<Var> {
    let (lq, _) = tape.value(q).dims2()?;
    let (lk, dv) = tape.value(v).dims2()?;
    let base = if causal {
        if lq != lk {
            return Err(Error::invalid(
                "prob_sparse_attention",
                format!("causal attention needs L_q = L_k, got {lq} and {lk}"),
            ));
        }
        tape.custom(Arc::new(CumulativeMean), &[v])?
    } else {
        let mean = tape.mean(v, 0)?;
        let ones = tape.constant(Tensor::ones(vec![lq, 1]));
        tape.matmul(ones, mean)?
    };
    if selection.top_queries.is_empty() {
        return Ok(base);
    }
    let rows = Arc::new(selection.top_queries.clone());
    let q_top = tape.gather_rows(q, rows.clone())?;
    let mask = causal.then(|| {
        let n = rows.len();
        Arc::new((0..n * lk).map(|m| m % lk <= rows[m / lk]).collect::<Vec<_>>())
    });
    let active = scaled_dot_attention(tape, q_top, k, v, mask)?;
    debug_assert_eq!(tape.value(active).dims2()?.1, dv);
    tape.scatter_rows(base, active, rows)
}

/// ProbSparse self/cross attention: Top-u queries attend fully, the rest
/// copy the mean (or causal running mean) of `V`.
pub fn prob_sparse_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    cfg: &ProbSparseConfig,
    causal: bool,
) -> Result<Var> {
    let selection = prob_sparse_select(tape.value(q), tape.value(k), cfg)?;
    let lq = selection.top_queries.len();
    if lq == tape.value(q).dims2()?.0 {
        let lk = tape.value(k).dims2()?.0;
        let mask = causal.then(|| causal_mask(lq, lk));
        return scaled_dot_attention(tape, q, k, v, mask);
    }
    prob_sparse_with_selection(tape, q, k, v, &selection, causal)
}

/// Row-wise running mean `out[t] = mean(x[0..=t])` of a rank-2 input.
#[derive(Debug)]
pub struct CumulativeMean;

impl CustomOp for CumulativeMean {
    fn name(&self) -> &'static str {
        "cumulative_mean"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (l, d) = inputs[0].dims2()?;
        let x = inputs[0].data();
        let mut out = vec![0.0; l * d];
        let mut acc = vec![0.0; d];
        for t in 0..l {
            for c in 0..d {
                acc[c] += x[t * d + c];
                out[t * d + c] = acc[c] / (t + 1) as f64;
            }
        }
        Tensor::new(vec![l, d], out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Result<Vec<Option<Vec<f64>>>> {
        let (l, d) = inputs[0].dims2()?;
        let mut gx = vec![0.0; l * d];
        let mut acc = vec![0.0; d];
        for t in (0..l).rev() {
            for c in 0..d {
                acc[c] += grad[t * d + c] / (t + 1) as f64;
                gx[t * d + c] = acc[c];
            }
        }
        Ok(vec![Some(gx)])
    }
}
