use std::sync::Arc;

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;

use super::select::top_k_indices;
use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::fft::{dft, idft};
use crate::nn::{Linear, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoCorrelationConfig {
    /// `c` in `k = max(1, ⌊c·ln L⌋)`.
    pub c_factor: f64,
    /// Drop the zero lag from the candidate delays.
    #[serde(default)]
    pub exclude_zero_lag: bool,
}

impl Default for AutoCorrelationConfig {
    fn default() -> Self {
        Self { c_factor: 1.0, exclude_zero_lag: false }
    }
}

pub fn delay_count(c: f64, l: usize) -> usize {
    ((c * (l as f64).ln()).floor().max(1.0) as usize).min(l)
}

/// `(DFT(x_c), DFT(y_c))` of two real columns from one complex transform.
fn column_pair(x: &Tensor, y: &Tensor, c: usize) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let (l, d) = (x.shape()[0], x.shape()[1]);
    let z: Vec<Complex64> = (0..l).map(|t| Complex64::new(x.data()[t * d + c], y.data()[t * d + c])).collect();
    let zf = dft(&z)?;
    let half = Complex64::new(0.5, 0.0);
    let mut xf = Vec::with_capacity(l);
    let mut yf = Vec::with_capacity(l);
    for f in 0..l {
        let a = zf[f];
        let b = zf[(l - f) % l].conj();
        xf.push((a + b) * half);
        yf.push(Complex64::new(0.0, -0.5) * (a - b));
    }
    Ok((xf, yf))
}

/// `R(τ) = 1/(L·d) · Σ_t Σ_c Q[t,c]·K[(t−τ) mod L, c]`, evaluated as
/// `IDFT(Σ_c DFT(Q_c)·conj(DFT(K_c)))`.
pub fn lag_correlation(q: &Tensor, k: &Tensor) -> Result<Vec<f64>> {
    let (l, d) = q.dims2()?;
    if k.shape() != q.shape() {
        return Err(Error::shape("auto_correlation", q.shape(), k.shape()));
    }
    let mut acc = vec![Complex64::new(0.0, 0.0); l];
    for c in 0..d {
        let (qf, kf) = column_pair(q, k, c)?;
        for ((a, x), y) in acc.iter_mut().zip(&qf).zip(&kf) {
            *a += x * y.conj();
        }
    }
    let norm = (l * d) as f64;
    Ok(idft(&acc)?.iter().map(|z| z.re / norm).collect())
}

/// Differentiable `[L×d], [L×d] → [L]` lag correlation.
#[derive(Debug)]
pub struct LagCorrelation;

impl CustomOp for LagCorrelation {
    fn name(&self) -> &'static str {
        "lag_correlation"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let r = lag_correlation(inputs[0], inputs[1])?;
        Tensor::vector(r)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Result<Vec<Option<Vec<f64>>>> {
        let (q, k) = (inputs[0], inputs[1]);
        let (l, d) = q.dims2()?;
        let norm = (l * d) as f64;
        let gf = dft(&grad.iter().map(|&g| Complex64::new(g, 0.0)).collect::<Vec<_>>())?;
        let mut gq = vec![0.0; l * d];
        let mut gk = vec![0.0; l * d];
        for c in 0..d {
            let (qf, kf) = column_pair(q, k, c)?;
            // dR/dQ[t] = Σ_τ g[τ] K[t−τ] (circular convolution) in the real
            // part, dR/dK[s] = Σ_τ g[τ] Q[s+τ] (circular correlation) in the
            // imaginary part
            let both: Vec<Complex64> = (0..l)
                .map(|f| gf[f] * kf[f] + Complex64::i() * qf[f] * gf[f].conj())
                .collect();
            for (t, z) in idft(&both)?.iter().enumerate() {
                gq[t * d + c] = z.re / norm;
                gk[t * d + c] = z.im / norm;
            }
        }
        Ok(vec![Some(gq), Some(gk)])
    }
}

/// Top-k lags of `r`, best first.
pub fn select_delays(r: &[f64], k: usize, exclude_zero_lag: bool) -> Vec<usize> {
    if exclude_zero_lag {
        top_k_indices(&r[1..], k).into_iter().map(|i| i + 1).collect()
    } else {
        top_k_indices(r, k)
    }
}

/// `Σ_τ softmax(R)[τ] · roll(V, τ)` over the given delays, where
/// `roll(V, τ)[t] = V[(t−τ) mod L]`.
pub fn auto_correlation_with_delays(tape: &mut Tape, q: Var, k: Var, v: Var, delays: &[usize]) -> Result<Var> {
    let r = lag_correlation_var(tape, q, k, v)?;
    aggregate(tape, r, v, delays)
}

fn lag_correlation_var(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let (l, _) = tape.value(q).dims2()?;
    if tape.shape(v)[0] != l {
        return Err(Error::shape("auto_correlation", tape.shape(q), tape.shape(v)));
    }
    tape.custom(Arc::new(LagCorrelation), &[q, k])
}

fn aggregate(tape: &mut Tape, r: Var, v: Var, delays: &[usize]) -> Result<Var> {
    let l = tape.shape(r)[0];
    if delays.is_empty() || delays.iter().any(|&t| t >= l) {
        return Err(Error::invalid("auto_correlation", "delays must be non-empty lags below L"));
    }
    let r = tape.reshape(r, vec![l, 1])?;
    let picked = tape.gather_rows(r, Arc::new(delays.to_vec()))?;
    let picked = tape.reshape(picked, vec![1, delays.len()])?;
    let w = tape.softmax(picked, 1)?;
    let mut acc: Option<Var> = None;
    for (i, &tau) in delays.iter().enumerate() {
        let idx: Vec<usize> = (0..l).map(|t| (t + l - tau) % l).collect();
        let rolled = tape.gather_rows(v, Arc::new(idx))?;
        let wi = tape.narrow(w, 1, i, 1)?;
        let term = tape.mul(rolled, wi)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("non-empty delays"))
}

pub fn auto_correlation_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    cfg: &AutoCorrelationConfig,
) -> Result<Var> {
    let (l, _) = tape.value(q).dims2()?;
    if l < 2 {
        return Err(Error::invalid("auto_correlation", "needs L ≥ 2"));
    }
    let r = lag_correlation_var(tape, q, k, v)?;
    let k_delays = delay_count(cfg.c_factor, l).min(if cfg.exclude_zero_lag { l - 1 } else { l });
    let delays = select_delays(tape.value(r).data(), k_delays, cfg.exclude_zero_lag);
    aggregate(tape, r, v, &delays)
}

/// Resizes keys/values to `len` rows: truncate, or pad with zero rows.
pub fn fit_length(tape: &mut Tape, x: Var, len: usize) -> Result<Var> {
    let (l, d) = tape.value(x).dims2()?;
    match l.cmp(&len) {
        std::cmp::Ordering::Equal => Ok(x),
        std::cmp::Ordering::Greater => tape.narrow(x, 0, 0, len),
        std::cmp::Ordering::Less => {
            let pad = tape.constant(Tensor::zeros(vec![len - l, d]));
            tape.concat(&[x, pad], 0)
        }
    }
}

/// Projected auto-correlation layer (self or cross).
#[derive(Clone, Debug)]
pub struct AutoCorrelationLayer {
    pub config: AutoCorrelationConfig,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl AutoCorrelationLayer {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        config: AutoCorrelationConfig,
    ) -> Result<Self> {
        let d = d_model;
        Ok(Self {
            config,
            wq: Linear::new(params, rng, &format!("{name}.wq"), d, d)?,
            wk: Linear::new(params, rng, &format!("{name}.wk"), d, d)?,
            wv: Linear::new(params, rng, &format!("{name}.wv"), d, d)?,
            wo: Linear::new(params, rng, &format!("{name}.wo"), d, d)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, pv: &[Var], x_q: Var, x_kv: Var) -> Result<Var> {
        let q = self.wq.forward(tape, pv, x_q)?;
        let lq = tape.value(q).dims2()?.0;
        let k = self.wk.forward(tape, pv, x_kv)?;
        let v = self.wv.forward(tape, pv, x_kv)?;
        let k = fit_length(tape, k, lq)?;
        let v = fit_length(tape, v, lq)?;
        let out = auto_correlation_attention(tape, q, k, v, &self.config)?;
        self.wo.forward(tape, pv, out)
    }
}
