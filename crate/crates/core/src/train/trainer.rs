use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{predict_windows, ErrorSums};
use crate::autodiff::Tape;
use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::autodiff::Var;
use crate::models::{ForecastModel, ModelInput, ModelKind};
use crate::nn::{adam_step, AdamState, ParamSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn transformer() -> Self {
        Self { learning_rate: 1e-4, epochs: 5, batch_size: 32, seed: 0 }
    }

    pub fn deep_learning() -> Self {
        Self { learning_rate: 1e-3, epochs: 20, batch_size: 32, seed: 0 }
    }

    /// Preset of the kind's family.
    pub fn for_kind(kind: ModelKind) -> Self {
        if kind.is_transformer() {
            Self::transformer()
        } else {
            Self::deep_learning()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("train", format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("train", "epochs and batch_size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub curve: Vec<EpochRecord>,
    /// Parameters after the epoch with the lowest validation loss, or the
    /// final parameters when there is no validation set.
    pub best_params: ParamSet,
    pub best_epoch: usize,
    pub steps: usize,
    pub seconds: f64,
}

/// Anything with parameters that maps a batch of windows to `[B × H]`.
pub trait Forecaster {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// `(lookback, horizon)`
    fn window_shape(&self) -> (usize, usize);
    fn label(&self) -> String;
    fn forward_batch(&self, tape: &mut Tape, pv: &[Var], batch: &[ModelInput<'_>]) -> Result<Var>;

    fn predict_batch(&self, batch: &[ModelInput<'_>]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv: Vec<Var> = self.params().tensors().iter().map(|t| tape.constant(t.clone())).collect();
        let out = self.forward_batch(&mut tape, &pv, batch)?;
        Ok(tape.value(out).clone())
    }
}

impl Forecaster for ForecastModel {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn window_shape(&self) -> (usize, usize) {
        (self.spec.lookback, self.spec.horizon)
    }

    fn label(&self) -> String {
        self.spec.kind.to_string()
    }

    fn forward_batch(&self, tape: &mut Tape, pv: &[Var], batch: &[ModelInput<'_>]) -> Result<Var> {
        ForecastModel::forward_batch(self, tape, pv, batch)
    }

    fn predict_batch(&self, batch: &[ModelInput<'_>]) -> Result<Tensor> {
        ForecastModel::predict_batch(self, batch)
    }
}

/// Normalized MSE of `model` over `windows`.
pub fn window_loss(model: &impl Forecaster, windows: &WindowSet) -> Result<f64> {
    let mut sums = ErrorSums::default();
    for (i, p) in predict_windows(model, windows)?.iter().enumerate() {
        sums.add(p, &windows.target(i))?;
    }
    Ok(sums.mse())
}

/// One ADAM step on the batch `idx`; returns the batch loss.
fn step<M: Forecaster>(model: &mut M, windows: &WindowSet, idx: &[usize], adam: &mut AdamState) -> Result<f64> {
    let hist: Vec<Tensor> = idx.iter().map(|&i| windows.input(i)).collect();
    let times: Vec<Tensor> = idx.iter().map(|&i| windows.horizon_time(i)).collect();
    let batch: Vec<ModelInput> = hist.iter().zip(&times).map(|(h, t)| ModelInput { history: h, horizon_time: t }).collect();
    let target: Vec<f64> = idx.iter().flat_map(|&i| windows.target(i)).collect();

    let mut tape = Tape::new();
    let pv = model.params().bind(&mut tape);
    let out = model.forward_batch(&mut tape, &pv, &batch)?;
    let truth = tape.constant(Tensor::new(vec![idx.len(), windows.horizon()], target)?);
    let diff = tape.sub(out, truth)?;
    let sq = tape.mul(diff, diff)?;
    let loss = tape.mean_all(sq)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite { layer: "loss".into() });
    }
    tape.backward(loss)?;
    let grads = model.params().grads(&tape, &pv);
    adam_step(model.params_mut(), &grads, adam)?;
    Ok(value)
}

/// Mini-batch ADAM on the normalized MSE with a seeded shuffle per epoch.
///
/// On a non-finite loss or gradient the run stops with
/// [`Error::Diverged`], leaving `model` at its last finite parameters.
pub fn train<M: Forecaster>(
    model: &mut M,
    train_windows: &WindowSet,
    val_windows: Option<&WindowSet>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let started = Instant::now();
    if cfg.epochs > 0 {
        cfg.validate()?;
    }
    if train_windows.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    let (lookback, horizon) = model.window_shape();
    if train_windows.lookback() != lookback || train_windows.horizon() != horizon {
        return Err(Error::invalid(
            "train",
            format!(
                "windows are {}→{}, model expects {lookback}→{horizon}",
                train_windows.lookback(),
                train_windows.horizon(),
            ),
        ));
    }
    let val_windows = val_windows.filter(|v| !v.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.params(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0usize, model.params().clone());
    let mut steps = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            match step(model, train_windows, idx, &mut adam) {
                Ok(loss) => total += loss * idx.len() as f64,
                Err(e @ (Error::NonFinite { .. } | Error::NanGradient(_))) => {
                    log::error!("epoch {epoch} batch {b}: {e}");
                    return Err(Error::Diverged { epoch, batch: b });
                }
                Err(e) => return Err(e),
            }
            steps += 1;
        }
        let train_loss = total / train_windows.len() as f64;
        let val_loss = val_windows.map(|v| window_loss(model, v)).transpose()?;
        log::info!(
            "{} epoch {epoch}/{}: train {train_loss:.5}{}",
            model.label(),
            cfg.epochs,
            val_loss.map_or(String::new(), |v| format!(", val {v:.5}"))
        );
        let score = val_loss.unwrap_or(train_loss);
        if score < best.0 || val_windows.is_none() {
            best = (score, epoch, model.params().clone());
        }
        curve.push(EpochRecord { epoch, train_loss, val_loss });
    }
    Ok(TrainOutcome {
        curve,
        best_params: best.2,
        best_epoch: best.1,
        steps,
        seconds: started.elapsed().as_secs_f64(),
    })
}
