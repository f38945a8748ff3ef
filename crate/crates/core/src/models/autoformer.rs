//! Decomposition transformer with auto-correlation in place of attention.

use rand_chacha::ChaCha8Rng;

use super::common::{check, decompose, horizon_rows, repeat_row};
use super::spec::{ModelSpec, TIME_FEATURES};
use crate::attention::AutoCorrelationLayer;
use crate::autodiff::{Activation, Tape, Var};
use crate::error::Result;
use crate::nn::{FeedForward, LayerNorm, Linear, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
struct EncLayer {
    corr: AutoCorrelationLayer,
    ffn: FeedForward,
}

#[derive(Clone, Debug)]
struct DecLayer {
    self_corr: AutoCorrelationLayer,
    cross_corr: AutoCorrelationLayer,
    ffn: FeedForward,
    trend_proj: Linear,
}

#[derive(Clone, Debug)]
pub(crate) struct Autoformer {
    embed_enc: Linear,
    embed_dec: Linear,
    encoder: Vec<EncLayer>,
    enc_norm: LayerNorm,
    decoder: Vec<DecLayer>,
    dec_norm: LayerNorm,
    head: Linear,
}

impl Autoformer {
    pub(crate) fn new(spec: &ModelSpec, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = spec.d_model;
        let cfg = &spec.auto_correlation;
        let mut encoder = Vec::new();
        for i in 0..spec.n_encoder_layers {
            encoder.push(EncLayer {
                corr: AutoCorrelationLayer::new(params, rng, &format!("encoder.{i}.corr"), d, cfg.clone())?,
                ffn: FeedForward::new(params, rng, &format!("encoder.{i}.ffn"), d, spec.d_ff, Activation::Gelu)?,
            });
        }
        let mut decoder = Vec::new();
        for i in 0..spec.n_decoder_layers {
            let p = format!("decoder.{i}");
            decoder.push(DecLayer {
                self_corr: AutoCorrelationLayer::new(params, rng, &format!("{p}.self_corr"), d, cfg.clone())?,
                cross_corr: AutoCorrelationLayer::new(params, rng, &format!("{p}.cross_corr"), d, cfg.clone())?,
                ffn: FeedForward::new(params, rng, &format!("{p}.ffn"), d, spec.d_ff, Activation::Gelu)?,
                trend_proj: Linear::new(params, rng, &format!("{p}.trend"), d, 1)?,
            });
        }
        Ok(Self {
            embed_enc: Linear::new(params, rng, "embed.encoder", spec.n_inputs(), d)?,
            embed_dec: Linear::new(params, rng, "embed.decoder", spec.n_inputs(), d)?,
            encoder,
            enc_norm: LayerNorm::new(params, "encoder.norm", d)?,
            decoder,
            dec_norm: LayerNorm::new(params, "decoder.norm", d)?,
            head: Linear::new(params, rng, "head", d, 1)?,
        })
    }

    pub(crate) fn forward(&self, spec: &ModelSpec, tape: &mut Tape, pv: &[Var], hist: Var, htime: Var) -> Result<Var> {
        let k = spec.decomp_kernel;
        let mut h = self.embed_enc.forward(tape, pv, hist)?;
        for (i, layer) in self.encoder.iter().enumerate() {
            let a = layer.corr.forward(tape, pv, h, h)?;
            let a = check(tape, a, || format!("encoder.{i}.auto_correlation"))?;
            let r = tape.add(h, a)?;
            let (s, _) = decompose(tape, r, k)?;
            let f = layer.ffn.forward(tape, pv, s)?;
            let f = check(tape, f, || format!("encoder.{i}.feed_forward"))?;
            let r = tape.add(s, f)?;
            h = decompose(tape, r, k)?.0;
        }
        let memory = self.enc_norm.forward(tape, pv, h)?;

        // decoder initialisation from the decomposed history
        let value_cols = spec.n_inputs() - TIME_FEATURES;
        let values = tape.narrow(hist, 1, 0, value_cols)?;
        let (season, trend) = decompose(tape, values, k)?;
        let tc = spec.target_channel();
        let target = tape.narrow(hist, 1, tc, 1)?;
        let target_mean = tape.mean(target, 0)?;
        let future_trend = repeat_row(tape, target_mean, spec.horizon)?;
        let future_season = tape.constant(Tensor::zeros(vec![spec.horizon, value_cols]));
        let future = tape.concat(&[future_season, htime], 1)?;
        let (season_init, mut trend_acc) = if spec.label_len == 0 {
            (future, future_trend)
        } else {
            let start = spec.lookback - spec.label_len;
            let warm_s = tape.narrow(season, 0, start, spec.label_len)?;
            let warm_t = tape.narrow(hist, 1, spec.n_inputs() - TIME_FEATURES, TIME_FEATURES)?;
            let warm_t = tape.narrow(warm_t, 0, start, spec.label_len)?;
            let warm = tape.concat(&[warm_s, warm_t], 1)?;
            let trend_col = tape.narrow(trend, 1, tc, 1)?;
            let warm_trend = tape.narrow(trend_col, 0, start, spec.label_len)?;
            (tape.concat(&[warm, future], 0)?, tape.concat(&[warm_trend, future_trend], 0)?)
        };

        let mut s = self.embed_dec.forward(tape, pv, season_init)?;
        for (i, layer) in self.decoder.iter().enumerate() {
            let a = layer.self_corr.forward(tape, pv, s, s)?;
            let a = check(tape, a, || format!("decoder.{i}.self_correlation"))?;
            let r = tape.add(s, a)?;
            let (s1, t1) = decompose(tape, r, k)?;
            let c = layer.cross_corr.forward(tape, pv, s1, memory)?;
            let c = check(tape, c, || format!("decoder.{i}.cross_correlation"))?;
            let r = tape.add(s1, c)?;
            let (s2, t2) = decompose(tape, r, k)?;
            let f = layer.ffn.forward(tape, pv, s2)?;
            let f = check(tape, f, || format!("decoder.{i}.feed_forward"))?;
            let r = tape.add(s2, f)?;
            let (s3, t3) = decompose(tape, r, k)?;
            let t = tape.add(t1, t2)?;
            let t = tape.add(t, t3)?;
            let dt = layer.trend_proj.forward(tape, pv, t)?;
            trend_acc = tape.add(trend_acc, dt)?;
            s = s3;
        }
        let s = self.dec_norm.forward(tape, pv, s)?;
        let seasonal = self.head.forward(tape, pv, s)?;
        let out = tape.add(seasonal, trend_acc)?;
        let out = horizon_rows(tape, spec, out)?;
        check(tape, out, || "head".into())
    }
}
