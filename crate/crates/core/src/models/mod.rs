//! The seven forecasting models behind one interface: an `[L_in × C]`
//! history (plus the calendar features of the forecast hours) in, an
//! `H`-step forecast of the normalized target out, in a single pass.

mod autoformer;
mod baselines;
mod common;
mod decompose;
mod etsformer;
mod reformer;
mod spec;
mod transformer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use decompose::{series_decompose, SeriesDecompose};
pub use reformer::{FeedForwardBranch, LshBranch};
pub use spec::{ModelKind, ModelSpec, HORIZONS, TIME_FEATURES};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Net {
    Seq2Seq(transformer::Seq2Seq),
    Autoformer(autoformer::Autoformer),
    Reformer(reformer::Reformer),
    Etsformer(etsformer::Etsformer),
    Lstm(baselines::LstmNet),
    Cnn(baselines::CnnNet),
}

/// A built model: its spec, its parameters and the wiring between them.
#[derive(Clone, Debug)]
pub struct ForecastModel {
    pub spec: ModelSpec,
    pub params: ParamSet,
    net: Net,
}

/// One forecast request: `history [L_in × C]` and `horizon_time [H × 4]`.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub history: &'a Tensor,
    pub horizon_time: &'a Tensor,
}

/// Builds `spec` with parameters drawn from a ChaCha8 stream seeded by `seed`.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<ForecastModel> {
    spec.validate()?;
    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = match spec.kind {
        ModelKind::Vanilla | ModelKind::Informer => Net::Seq2Seq(transformer::Seq2Seq::new(spec, &mut params, &mut rng)?),
        ModelKind::Autoformer => Net::Autoformer(autoformer::Autoformer::new(spec, &mut params, &mut rng)?),
        ModelKind::Reformer => Net::Reformer(reformer::Reformer::new(spec, &mut params, &mut rng)?),
        ModelKind::Etsformer => Net::Etsformer(etsformer::Etsformer::new(spec, &mut params, &mut rng)?),
        ModelKind::Lstm => Net::Lstm(baselines::LstmNet::new(spec, &mut params, &mut rng)?),
        ModelKind::Cnn => Net::Cnn(baselines::CnnNet::new(spec, &mut params, &mut rng)?),
    };
    log::debug!("built {} with {} parameters", spec.kind, params.scalar_count());
    Ok(ForecastModel { spec: spec.clone(), params, net })
}

impl ForecastModel {
    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn check_input(&self, input: &ModelInput<'_>) -> Result<()> {
        let s = &self.spec;
        if input.history.shape() != [s.lookback, s.n_inputs()] {
            return Err(Error::shape("forward", input.history.shape(), &[s.lookback, s.n_inputs()]));
        }
        if input.horizon_time.shape() != [s.horizon, TIME_FEATURES] {
            return Err(Error::shape("forward", input.horizon_time.shape(), &[s.horizon, TIME_FEATURES]));
        }
        Ok(())
    }

    /// Records the batched forward pass on `tape` (parameters bound as `pv`)
    /// and returns the `[B × H]` forecast.
    pub fn forward_batch(&self, tape: &mut Tape, pv: &[Var], batch: &[ModelInput<'_>]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::invalid("forward", "empty batch"));
        }
        for input in batch {
            self.check_input(input)?;
        }
        let spec = &self.spec;
        match &self.net {
            Net::Lstm(net) => {
                let hist: Vec<&Tensor> = batch.iter().map(|b| b.history).collect();
                net.forward(spec, tape, pv, &hist)
            }
            Net::Cnn(net) => {
                let hist: Vec<&Tensor> = batch.iter().map(|b| b.history).collect();
                net.forward(spec, tape, pv, &hist)
            }
            _ => {
                let mut cols = Vec::with_capacity(batch.len());
                for input in batch {
                    let hist = tape.constant(input.history.clone());
                    let htime = tape.constant(input.horizon_time.clone());
                    let col = match &self.net {
                        Net::Seq2Seq(net) => net.forward(spec, tape, pv, hist, htime)?,
                        Net::Autoformer(net) => net.forward(spec, tape, pv, hist, htime)?,
                        Net::Reformer(net) => net.forward(spec, tape, pv, hist)?,
                        Net::Etsformer(net) => net.forward(spec, tape, pv, hist)?,
                        Net::Lstm(_) | Net::Cnn(_) => unreachable!(),
                    };
                    cols.push(col);
                }
                let stacked = if cols.len() == 1 { cols[0] } else { tape.concat(&cols, 1)? };
                tape.transpose(stacked)
            }
        }
    }

    /// `[B × H]` forecasts without recording gradients for later use.
    pub fn predict_batch(&self, batch: &[ModelInput<'_>]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv: Vec<Var> = self.params.tensors().iter().map(|t| tape.constant(t.clone())).collect();
        let out = self.forward_batch(&mut tape, &pv, batch)?;
        Ok(tape.value(out).clone())
    }

    /// `[H × 1]` forecast for one input.
    pub fn forward(&self, input: &ModelInput<'_>) -> Result<Tensor> {
        let out = self.predict_batch(std::slice::from_ref(input))?;
        out.reshaped(vec![self.spec.horizon, 1])
    }
}
