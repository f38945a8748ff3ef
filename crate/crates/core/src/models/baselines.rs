//! Conventional deep-learning baselines: stacked LSTM and 1-D CNN.

use rand_chacha::ChaCha8Rng;

use super::common::check;
use super::spec::ModelSpec;
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::nn::{Conv1d, Linear, Lstm, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub(crate) struct LstmNet {
    lstm: Lstm,
    head: Linear,
}

impl LstmNet {
    pub(crate) fn new(spec: &ModelSpec, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            lstm: Lstm::new(params, rng, "lstm", spec.n_inputs(), spec.lstm_units, spec.lstm_layers)?,
            head: Linear::new(params, rng, "head", spec.lstm_units, spec.horizon)?,
        })
    }

    /// `[B×H]` from per-sample `[L×C]` histories.
    pub(crate) fn forward(&self, spec: &ModelSpec, tape: &mut Tape, pv: &[Var], hist: &[&Tensor]) -> Result<Var> {
        let (b, c) = (hist.len(), spec.n_inputs());
        let steps: Vec<Var> = (0..spec.lookback)
            .map(|t| {
                let mut rows = Vec::with_capacity(b * c);
                for h in hist {
                    rows.extend_from_slice(h.row(t));
                }
                tape.constant(Tensor::new(vec![b, c], rows).expect("batch step"))
            })
            .collect();
        let states = self.lstm.forward(tape, pv, &steps)?;
        let last = *states.last().expect("lookback ≥ 1");
        let last = check(tape, last, || "lstm".into())?;
        let out = self.head.forward(tape, pv, last)?;
        check(tape, out, || "head".into())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct CnnNet {
    convs: Vec<Conv1d>,
    head: Linear,
}

impl CnnNet {
    pub(crate) fn new(spec: &ModelSpec, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut convs = Vec::new();
        let mut in_ch = spec.n_inputs();
        for (i, &out_ch) in spec.cnn_channels.iter().enumerate() {
            let k = spec.cnn_kernel;
            convs.push(Conv1d::new(params, rng, &format!("conv.{i}"), in_ch, out_ch, k, 1, k / 2)?);
            in_ch = out_ch;
        }
        Ok(Self {
            convs,
            head: Linear::new(params, rng, "head", in_ch * spec.lookback, spec.horizon)?,
        })
    }

    pub(crate) fn forward(&self, spec: &ModelSpec, tape: &mut Tape, pv: &[Var], hist: &[&Tensor]) -> Result<Var> {
        let (b, c, l) = (hist.len(), spec.n_inputs(), spec.lookback);
        let mut data = vec![0.0; b * c * l];
        for (s, h) in hist.iter().enumerate() {
            for t in 0..l {
                for (ch, &v) in h.row(t).iter().enumerate() {
                    data[(s * c + ch) * l + t] = v;
                }
            }
        }
        let mut x = tape.constant(Tensor::new(vec![b, c, l], data)?);
        for (i, conv) in self.convs.iter().enumerate() {
            let y = conv.forward(tape, pv, x)?;
            x = tape.relu(y)?;
            x = check(tape, x, || format!("conv.{i}"))?;
        }
        let ch = self.convs.last().map_or(c, |cv| cv.out_channels);
        let flat = tape.reshape(x, vec![b, ch * l])?;
        let out = self.head.forward(tape, pv, flat)?;
        check(tape, out, || "head".into())
    }
}
