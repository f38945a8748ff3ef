use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use super::select::top_k_indices;
use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::fft::dft;
use crate::tensor::Tensor;

/// Smoothing parameters of the ETS-style attention blocks. The smoothing
/// fields hold pre-sigmoid values.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtsAttentionConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub top_k_freq: usize,
    pub period: usize,
}

impl Default for EtsAttentionConfig {
    fn default() -> Self {
        Self { alpha: 0.0, beta: 0.0, gamma: 0.0, top_k_freq: 3, period: 24 }
    }
}

impl EtsAttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k_freq == 0 || self.period == 0 {
            return Err(Error::InvalidSpec("top_k_freq and period must be at least 1".into()));
        }
        if ![self.alpha, self.beta, self.gamma].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidSpec("smoothing logits must be finite".into()));
        }
        Ok(())
    }

    /// Smoothing parameters mapped into `(0, 1)`.
    pub fn smoothing(&self) -> (f64, f64, f64) {
        let s = crate::autodiff::kernels::sigmoid;
        (s(self.alpha), s(self.beta), s(self.gamma))
    }
}

fn check_unit(op: &'static str, name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(op, format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// ESA weights `[L × (L+1)]`: column 0 is the initial-state weight
/// `(1−α)^(t+1)`, column `j+1` is `α(1−α)^(t−j)` for `j ≤ t`.
pub fn esa_weights(alpha: f64, len: usize) -> Result<Tensor> {
    check_unit("exponential_smoothing_attention", "alpha", alpha)?;
    let w = len + 1;
    let mut a = vec![0.0; len * w];
    let keep = 1.0 - alpha;
    for t in 0..len {
        a[t * w] = keep.powi(t as i32 + 1);
        for j in 0..=t {
            a[t * w + j + 1] = alpha * keep.powi((t - j) as i32);
        }
    }
    Tensor::new(vec![len, w], a)
}

/// `alpha [1] → esa_weights(alpha, len)`.
#[derive(Debug)]
pub struct EsaMatrix {
    pub len: usize,
}

impl CustomOp for EsaMatrix {
    fn name(&self) -> &'static str {
        "esa_matrix"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        esa_weights(inputs[0].data()[0], self.len)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Result<Vec<Option<Vec<f64>>>> {
        let alpha = inputs[0].data()[0];
        let keep = 1.0 - alpha;
        let w = self.len + 1;
        let pow = |n: usize| if n == 0 { 1.0 } else { keep.powi(n as i32) };
        let mut g = 0.0;
        for t in 0..self.len {
            let n0 = t + 1;
            g += grad[t * w] * -(n0 as f64) * pow(n0 - 1);
            for j in 0..=t {
                let n = t - j;
                let d = pow(n) - if n == 0 { 0.0 } else { n as f64 * alpha * pow(n - 1) };
                g += grad[t * w + j + 1] * d;
            }
        }
        Ok(vec![Some(vec![g; inputs[0].numel()])])
    }
}

/// `out[t] = (1−α)^(t+1)·v_init + Σ_{j≤t} α(1−α)^(t−j)·V[j]`.
///
/// `alpha` is a one-element var so it can be learned; `v_init` is `[1×d]`.
pub fn exponential_smoothing_attention(tape: &mut Tape, v: Var, alpha: Var, v_init: Var) -> Result<Var> {
    let (l, d) = tape.value(v).dims2()?;
    if tape.value(alpha).numel() != 1 {
        return Err(Error::shape("exponential_smoothing_attention", tape.shape(alpha), &[1]));
    }
    if tape.shape(v_init) != [1, d] {
        return Err(Error::shape("exponential_smoothing_attention", tape.shape(v_init), &[1, d]));
    }
    check_unit("exponential_smoothing_attention", "alpha", tape.value(alpha).data()[0])?;
    let a = tape.custom(Arc::new(EsaMatrix { len: l }), &[alpha])?;
    let aug = tape.concat(&[v_init, v], 0)?;
    tape.matmul(a, aug)
}

/// Kept positive bins per channel: the `top_k` largest amplitudes among
/// `1..=⌊L/2⌋`, ties to the lower bin.
pub fn frequency_select(x: &Tensor, top_k: usize) -> Result<Vec<Vec<usize>>> {
    let (l, d) = x.dims2()?;
    if top_k == 0 || top_k > l / 2 {
        return Err(Error::invalid(
            "frequency_attention",
            format!("top_k must lie in 1..={}, got {top_k}", l / 2),
        ));
    }
    (0..d)
        .map(|c| {
            let col: Vec<Complex64> = (0..l).map(|t| Complex64::new(x.data()[t * d + c], 0.0)).collect();
            let spec = dft(&col)?;
            let amps: Vec<f64> = spec[1..=l / 2].iter().map(|z| z.norm()).collect();
            let mut bins: Vec<usize> = top_k_indices(&amps, top_k).into_iter().map(|i| i + 1).collect();
            bins.sort_unstable();
            Ok(bins)
        })
        .collect()
}

/// Reconstruction of the kept bins (with conjugates) at positions
/// `0..out_len`; positions past `L` continue the same sinusoids.
#[derive(Debug)]
pub struct SpectralExtrapolate {
    pub bins: Vec<Vec<usize>>,
    pub out_len: usize,
}

fn bin_weight(k: usize, l: usize) -> f64 {
    if 2 * k == l { 1.0 } else { 2.0 }
}

impl CustomOp for SpectralExtrapolate {
    fn name(&self) -> &'static str {
        "spectral_extrapolate"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (l, d) = inputs[0].dims2()?;
        if self.bins.len() != d {
            return Err(Error::invalid("frequency_attention", "one bin list per channel required"));
        }
        let x = inputs[0].data();
        let mut out = vec![0.0; self.out_len * d];
        for (c, bins) in self.bins.iter().enumerate() {
            let col: Vec<Complex64> = (0..l).map(|t| Complex64::new(x[t * d + c], 0.0)).collect();
            let spec = dft(&col)?;
            for &k in bins {
                let coef = spec[k] * (bin_weight(k, l) / l as f64);
                for t in 0..self.out_len {
                    let ph = 2.0 * PI * ((k * t) % l) as f64 / l as f64;
                    out[t * d + c] += coef.re * ph.cos() - coef.im * ph.sin();
                }
            }
        }
        Tensor::new(vec![self.out_len, d], out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Result<Vec<Option<Vec<f64>>>> {
        let (l, d) = inputs[0].dims2()?;
        let mut gx = vec![0.0; l * d];
        for (c, bins) in self.bins.iter().enumerate() {
            for &k in bins {
                let scale = bin_weight(k, l) / l as f64;
                let angle = |t: usize| 2.0 * PI * ((k * t) % l) as f64 / l as f64;
                let (mut a, mut b) = (0.0, 0.0);
                for t in 0..self.out_len {
                    let g = grad[t * d + c];
                    a += g * angle(t).cos();
                    b += g * angle(t).sin();
                }
                for s in 0..l {
                    gx[s * d + c] += scale * (a * angle(s).cos() + b * angle(s).sin());
                }
            }
        }
        Ok(vec![Some(gx)])
    }
}

/// Top-k spectral seasonality: `(seasonal_in [L×d], seasonal_out [H×d])`.
pub fn frequency_attention(tape: &mut Tape, x: Var, top_k: usize, horizon: usize) -> Result<(Var, Var)> {
    let bins = frequency_select(tape.value(x), top_k)?;
    frequency_attention_with_bins(tape, x, bins, horizon)
}

pub fn frequency_attention_with_bins(
    tape: &mut Tape,
    x: Var,
    bins: Vec<Vec<usize>>,
    horizon: usize,
) -> Result<(Var, Var)> {
    let (l, _) = tape.value(x).dims2()?;
    if horizon == 0 {
        return Err(Error::invalid("frequency_attention", "horizon must be at least 1"));
    }
    let all = tape.custom(Arc::new(SpectralExtrapolate { bins, out_len: l + horizon }), &[x])?;
    let seasonal_in = tape.narrow(all, 0, 0, l)?;
    let seasonal_out = tape.narrow(all, 0, l, horizon)?;
    Ok((seasonal_in, seasonal_out))
}

/// Seeds of the Holt-Winters recursion.
#[derive(Clone, Debug, PartialEq)]
pub struct HoltWintersInit {
    pub level: f64,
    pub growth: f64,
    /// `s_{1−p}, …, s_0`.
    pub seasonal: Vec<f64>,
}

impl HoltWintersInit {
    /// Level from the first period's mean, zero growth, seasonal deviations.
    pub fn from_first_period(x: &[f64], period: usize) -> Result<Self> {
        if period == 0 || x.len() < period {
            return Err(Error::invalid("holt_winters_forecast", "series shorter than one period"));
        }
        let level = x[..period].iter().sum::<f64>() / period as f64;
        Ok(Self {
            level,
            growth: 0.0,
            seasonal: x[..period].iter().map(|v| v - level).collect(),
        })
    }
}

/// Additive Holt-Winters forecast `x̂_{T+h|T} = e_T + h·b_T + s_{T+h−p}`.
///
/// For `h > p` the seasonal term wraps to the latest estimated season
/// with the same phase.
pub fn holt_winters_forecast(
    x: &[f64],
    alpha: f64,
    beta: f64,
    gamma: f64,
    period: usize,
    h: usize,
    init: &HoltWintersInit,
) -> Result<f64> {
    let op = "holt_winters_forecast";
    check_unit(op, "alpha", alpha)?;
    check_unit(op, "beta", beta)?;
    check_unit(op, "gamma", gamma)?;
    if period == 0 || x.len() < period {
        return Err(Error::invalid(op, format!("series length {} is shorter than period {period}", x.len())));
    }
    if h == 0 {
        return Err(Error::invalid(op, "h must be at least 1"));
    }
    if init.seasonal.len() != period {
        return Err(Error::invalid(op, "need exactly one seasonal seed per phase"));
    }
    let mut season = init.seasonal.clone();
    let (mut level, mut growth) = (init.level, init.growth);
    for &xt in x {
        let s_old = season[0];
        let new_level = alpha * (xt - s_old) + (1.0 - alpha) * (level + growth);
        let new_growth = beta * (new_level - level) + (1.0 - beta) * growth;
        let new_season = gamma * (xt - level) + (1.0 - gamma) * s_old;
        season.remove(0);
        season.push(new_season);
        level = new_level;
        growth = new_growth;
    }
    let phase = (h - 1) % period;
    Ok(level + h as f64 * growth + season[phase])
}
