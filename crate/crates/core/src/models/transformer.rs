//! Vanilla and Informer encoder-decoder transformers.

use rand_chacha::ChaCha8Rng;

use super::common::{check, decoder_input, embed, horizon_rows};
use super::spec::{ModelKind, ModelSpec};
use crate::attention::{AttentionConfig, AttentionKernel, MultiHeadAttention, ProbSparseConfig};
use crate::autodiff::{Activation, Tape, Var};
use crate::error::Result;
use crate::nn::{positional_encoding, FeedForward, LayerNorm, Linear, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub(crate) struct EncoderLayer {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ffn: FeedForward,
    ln2: LayerNorm,
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderLayer {
    self_attn: MultiHeadAttention,
    ln1: LayerNorm,
    cross: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
    ln3: LayerNorm,
}

#[derive(Clone, Debug)]
pub(crate) struct Seq2Seq {
    embed_enc: Linear,
    embed_dec: Linear,
    pe_enc: Tensor,
    pe_dec: Tensor,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    head: Linear,
}

fn kernel(spec: &ModelSpec, layer: usize) -> AttentionKernel {
    match spec.kind {
        ModelKind::Informer => AttentionKernel::ProbSparse(ProbSparseConfig {
            seed: spec.prob_sparse.seed.wrapping_add(1000 * layer as u64),
            ..spec.prob_sparse.clone()
        }),
        _ => AttentionKernel::Full,
    }
}

impl Seq2Seq {
    pub(crate) fn new(spec: &ModelSpec, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = spec.d_model;
        let full = |causal| AttentionConfig::new(d, spec.n_heads, causal);
        let mut encoder = Vec::new();
        for i in 0..spec.n_encoder_layers {
            let p = format!("encoder.{i}");
            encoder.push(EncoderLayer {
                attn: MultiHeadAttention::new(params, rng, &format!("{p}.attn"), full(false)?, kernel(spec, i))?,
                ln1: LayerNorm::new(params, &format!("{p}.ln1"), d)?,
                ffn: FeedForward::new(params, rng, &format!("{p}.ffn"), d, spec.d_ff, Activation::Gelu)?,
                ln2: LayerNorm::new(params, &format!("{p}.ln2"), d)?,
            });
        }
        let mut decoder = Vec::new();
        for i in 0..spec.n_decoder_layers {
            let p = format!("decoder.{i}");
            let self_kernel = kernel(spec, spec.n_encoder_layers + i);
            decoder.push(DecoderLayer {
                self_attn: MultiHeadAttention::new(params, rng, &format!("{p}.self_attn"), full(true)?, self_kernel)?,
                ln1: LayerNorm::new(params, &format!("{p}.ln1"), d)?,
                cross: MultiHeadAttention::new(params, rng, &format!("{p}.cross"), full(false)?, AttentionKernel::Full)?,
                ln2: LayerNorm::new(params, &format!("{p}.ln2"), d)?,
                ffn: FeedForward::new(params, rng, &format!("{p}.ffn"), d, spec.d_ff, Activation::Gelu)?,
                ln3: LayerNorm::new(params, &format!("{p}.ln3"), d)?,
            });
        }
        Ok(Self {
            embed_enc: Linear::new(params, rng, "embed.encoder", spec.n_inputs(), d)?,
            embed_dec: Linear::new(params, rng, "embed.decoder", spec.n_inputs(), d)?,
            pe_enc: positional_encoding(spec.lookback, d)?,
            pe_dec: positional_encoding(spec.label_len + spec.horizon, d)?,
            encoder,
            decoder,
            head: Linear::new(params, rng, "head", d, 1)?,
        })
    }

    pub(crate) fn forward(&self, spec: &ModelSpec, tape: &mut Tape, pv: &[Var], hist: Var, htime: Var) -> Result<Var> {
        let mut h = embed(tape, pv, &self.embed_enc, &self.pe_enc, hist)?;
        for (i, layer) in self.encoder.iter().enumerate() {
            let a = layer.attn.forward(tape, pv, h, h)?;
            let a = check(tape, a, || format!("encoder.{i}.attention"))?;
            let r = tape.add(h, a)?;
            h = layer.ln1.forward(tape, pv, r)?;
            let f = layer.ffn.forward(tape, pv, h)?;
            let f = check(tape, f, || format!("encoder.{i}.feed_forward"))?;
            let r = tape.add(h, f)?;
            h = layer.ln2.forward(tape, pv, r)?;
        }
        let memory = h;
        let dec_in = decoder_input(tape, spec, hist, htime)?;
        let mut g = embed(tape, pv, &self.embed_dec, &self.pe_dec, dec_in)?;
        for (i, layer) in self.decoder.iter().enumerate() {
            let a = layer.self_attn.forward(tape, pv, g, g)?;
            let a = check(tape, a, || format!("decoder.{i}.self_attention"))?;
            let r = tape.add(g, a)?;
            g = layer.ln1.forward(tape, pv, r)?;
            let c = layer.cross.forward(tape, pv, g, memory)?;
            let c = check(tape, c, || format!("decoder.{i}.cross_attention"))?;
            let r = tape.add(g, c)?;
            g = layer.ln2.forward(tape, pv, r)?;
            let f = layer.ffn.forward(tape, pv, g)?;
            let f = check(tape, f, || format!("decoder.{i}.feed_forward"))?;
            let r = tape.add(g, f)?;
            g = layer.ln3.forward(tape, pv, r)?;
        }
        let tail = horizon_rows(tape, spec, g)?;
        let out = self.head.forward(tape, pv, tail)?;
        check(tape, out, || "head".into())
    }
}
