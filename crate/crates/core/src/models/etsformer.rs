//! Level / growth / season decomposition with exponential smoothing and
//! frequency attention.

use rand_chacha::ChaCha8Rng;

use super::common::{check, repeat_row};
use super::spec::ModelSpec;
use crate::attention::{exponential_smoothing_attention, frequency_attention};
use crate::autodiff::{Activation, Tape, Var};
use crate::error::Result;
use crate::nn::{FeedForward, LayerNorm, Linear, ParamId, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
struct EtsLayer {
    growth_logit: ParamId,
    growth_init: ParamId,
    ffn: FeedForward,
    norm: LayerNorm,
}

#[derive(Clone, Debug)]
pub(crate) struct Etsformer {
    embed: Linear,
    layers: Vec<EtsLayer>,
    level_logit: ParamId,
    head: Linear,
    steps: Tensor,
}

impl Etsformer {
    pub(crate) fn new(spec: &ModelSpec, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = spec.d_model;
        let mut layers = Vec::new();
        for i in 0..spec.n_encoder_layers {
            let p = format!("encoder.{i}");
            layers.push(EtsLayer {
                growth_logit: params.add(format!("{p}.growth_logit"), Tensor::scalar(spec.ets.beta))?,
                growth_init: params.add(format!("{p}.growth_init"), Tensor::zeros(vec![1, d]))?,
                ffn: FeedForward::new(params, rng, &format!("{p}.ffn"), d, spec.d_ff, Activation::Gelu)?,
                norm: LayerNorm::new(params, &format!("{p}.norm"), d)?,
            });
        }
        let steps = Tensor::new(vec![spec.horizon, 1], (1..=spec.horizon).map(|h| h as f64).collect())?;
        Ok(Self {
            embed: Linear::new(params, rng, "embed", spec.n_inputs(), d)?,
            layers,
            level_logit: params.add("level_logit", Tensor::scalar(spec.ets.alpha))?,
            head: Linear::zeroed(params, "head", d, 1)?,
            steps,
        })
    }

    pub(crate) fn forward(&self, spec: &ModelSpec, tape: &mut Tape, pv: &[Var], hist: Var) -> Result<Var> {
        let (l, h_len, k) = (spec.lookback, spec.horizon, spec.ets.top_k_freq);
        let steps = tape.constant(self.steps.clone());
        let mut h = self.embed.forward(tape, pv, hist)?;
        let mut latent: Option<Var> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let (s_in, s_out) = frequency_attention(tape, h, k, h_len)?;
            let s_out = check(tape, s_out, || format!("encoder.{i}.frequency_attention"))?;
            let r = tape.sub(h, s_in)?;
            let next = tape.narrow(r, 0, 1, l - 1)?;
            let prev = tape.narrow(r, 0, 0, l - 1)?;
            let diff = tape.sub(next, prev)?;
            let alpha = tape.sigmoid(pv[layer.growth_logit])?;
            let growth = exponential_smoothing_attention(tape, diff, alpha, pv[layer.growth_init])?;
            let growth = check(tape, growth, || format!("encoder.{i}.growth_smoothing"))?;
            let last = tape.narrow(growth, 0, l - 2, 1)?;
            let b = tape.mul(steps, last)?;
            let f = layer.ffn.forward(tape, pv, r)?;
            let f = tape.add(r, f)?;
            h = layer.norm.forward(tape, pv, f)?;
            let term = tape.add(b, s_out)?;
            latent = Some(match latent {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }

        // level stream on the target channel
        let y = tape.narrow(hist, 1, spec.target_channel(), 1)?;
        let (ys_in, ys_out) = frequency_attention(tape, y, k, h_len)?;
        let deseason = tape.sub(y, ys_in)?;
        let first = tape.narrow(deseason, 0, 0, 1)?;
        let alpha = tape.sigmoid(pv[self.level_logit])?;
        let level = exponential_smoothing_attention(tape, deseason, alpha, first)?;
        let level = check(tape, level, || "level_smoothing".into())?;
        let e_t = tape.narrow(level, 0, l - 1, 1)?;
        let e = repeat_row(tape, e_t, h_len)?;
        let base = tape.add(e, ys_out)?;

        let proj = self.head.forward(tape, pv, latent.expect("at least one layer"))?;
        let out = tape.add(base, proj)?;
        check(tape, out, || "head".into())
    }
}
