use std::sync::Arc;

use super::decompose::SeriesDecompose;
use super::spec::{ModelSpec, TIME_FEATURES};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tensor::Tensor;

/// Passes `v` through, or fails naming `layer` if it holds NaN/Inf.
pub(crate) fn check(tape: &Tape, v: Var, layer: impl FnOnce() -> String) -> Result<Var> {
    if tape.value(v).is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { layer: layer() })
    }
}

/// Token projection plus a fixed positional table.
pub(crate) fn embed(tape: &mut Tape, pv: &[Var], proj: &Linear, pe: &Tensor, x: Var) -> Result<Var> {
    let e = proj.forward(tape, pv, x)?;
    let p = tape.constant(pe.clone());
    tape.add(e, p)
}

/// `label_len` history rows followed by `H` placeholders that carry only
/// the calendar features of the forecast hours.
pub(crate) fn decoder_input(tape: &mut Tape, spec: &ModelSpec, hist: Var, htime: Var) -> Result<Var> {
    let zeros = tape.constant(Tensor::zeros(vec![spec.horizon, spec.n_inputs() - TIME_FEATURES]));
    let placeholder = tape.concat(&[zeros, htime], 1)?;
    if spec.label_len == 0 {
        return Ok(placeholder);
    }
    let warm = tape.narrow(hist, 0, spec.lookback - spec.label_len, spec.label_len)?;
    tape.concat(&[warm, placeholder], 0)
}

/// The last `H` rows of a decoder sequence.
pub(crate) fn horizon_rows(tape: &mut Tape, spec: &ModelSpec, x: Var) -> Result<Var> {
    if spec.label_len == 0 {
        Ok(x)
    } else {
        tape.narrow(x, 0, spec.label_len, spec.horizon)
    }
}

/// `(seasonal, trend)` of a rank-2 var.
pub(crate) fn decompose(tape: &mut Tape, x: Var, kernel: usize) -> Result<(Var, Var)> {
    let l = tape.shape(x)[0];
    let both = tape.custom(Arc::new(SeriesDecompose { kernel }), &[x])?;
    Ok((tape.narrow(both, 0, 0, l)?, tape.narrow(both, 0, l, l)?))
}

/// Column vector `[n×1]` of ones times a `[1×d]` row.
pub(crate) fn repeat_row(tape: &mut Tape, row: Var, n: usize) -> Result<Var> {
    let ones = tape.constant(Tensor::ones(vec![n, 1]));
    tape.matmul(ones, row)
}
