use crate::data::{denormalize, FeatureStats, WindowSet};
use crate::error::{Error, Result};
use super::trainer::Forecaster;
use crate::models::ModelInput;

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::invalid(
            "metrics",
            format!("need equal non-empty lengths, got {} and {}", pred.len(), truth.len()),
        ));
    }
    Ok(())
}

/// Mean squared error.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (t - p) * (t - p)).sum::<f64>() / pred.len() as f64)
}

/// Mean absolute error.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (t - p).abs()).sum::<f64>() / pred.len() as f64)
}

/// Running sums that merge into exact count-weighted averages.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorSums {
    pub count: usize,
    pub squared: f64,
    pub absolute: f64,
}

impl ErrorSums {
    pub fn add(&mut self, pred: &[f64], truth: &[f64]) -> Result<()> {
        check_lengths(pred, truth)?;
        for (p, t) in pred.iter().zip(truth) {
            let e = t - p;
            self.squared += e * e;
            self.absolute += e.abs();
        }
        self.count += pred.len();
        Ok(())
    }

    pub fn merge(&mut self, other: &ErrorSums) {
        self.count += other.count;
        self.squared += other.squared;
        self.absolute += other.absolute;
    }

    pub fn mse(&self) -> f64 {
        self.squared / self.count as f64
    }

    pub fn mae(&self) -> f64 {
        self.absolute / self.count as f64
    }
}

/// Errors of a model over a window set on both scales.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub mse_norm: f64,
    pub mae_norm: f64,
    /// °C²
    pub mse_phys: f64,
    /// °C
    pub mae_phys: f64,
    pub windows: usize,
    pub points: usize,
}

pub const EVAL_BATCH: usize = 64;

/// Forecasts for every window, `H` values per window in window order.
pub fn predict_windows(model: &impl Forecaster, windows: &WindowSet) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(windows.len());
    let idx: Vec<usize> = (0..windows.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let hist: Vec<_> = chunk.iter().map(|&i| windows.input(i)).collect();
        let times: Vec<_> = chunk.iter().map(|&i| windows.horizon_time(i)).collect();
        let batch: Vec<ModelInput> =
            hist.iter().zip(&times).map(|(h, t)| ModelInput { history: h, horizon_time: t }).collect();
        let pred = model.predict_batch(&batch)?;
        let h = windows.horizon();
        out.extend(pred.data().chunks(h).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// MSE/MAE over all windows and forecast steps jointly, on the normalized
/// scale and recomputed after mapping predictions and truth back to °C.
pub fn evaluate(model: &impl Forecaster, windows: &WindowSet, stats: &FeatureStats) -> Result<EvalMetrics> {
    if windows.is_empty() {
        return Err(Error::Data("evaluation needs at least one window".into()));
    }
    let preds = predict_windows(model, windows)?;
    let (mut norm, mut phys) = (ErrorSums::default(), ErrorSums::default());
    for (i, p) in preds.iter().enumerate() {
        let t = windows.target(i);
        norm.add(p, &t)?;
        phys.add(&denormalize(p, stats), &denormalize(&t, stats))?;
    }
    Ok(EvalMetrics {
        mse_norm: norm.mse(),
        mae_norm: norm.mae(),
        mse_phys: phys.mse(),
        mae_phys: phys.mae(),
        windows: windows.len(),
        points: norm.count,
    })
}
