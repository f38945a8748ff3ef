use crate::autodiff::CustomOp;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Edge-replicated moving-average weights: `trend[t] = Σ_s A[t,s]·x[s]`.
fn moving_average(x: &Tensor, kernel: usize) -> Result<Vec<f64>> {
    let (l, d) = x.dims2()?;
    let half = (kernel / 2) as isize;
    let mut out = vec![0.0; l * d];
    for (t, row) in out.chunks_exact_mut(d).enumerate() {
        for off in -half..=half {
            let idx = (t as isize + off).clamp(0, l as isize - 1) as usize;
            for (o, v) in row.iter_mut().zip(&x.data()[idx * d..(idx + 1) * d]) {
                *o += v;
            }
        }
        row.iter_mut().for_each(|o| *o /= kernel as f64);
    }
    Ok(out)
}

/// Splits `x` into `(x − t, t)` with `t` nudged onto the grid of `x`, so the
/// parts add back to `x` exactly whenever the floating-point format allows.
fn exact_split(x: f64, t0: f64) -> (f64, f64) {
    if x != 0.0 && x.is_finite() && t0.is_finite() {
        let ulp = f64::from_bits(x.abs().to_bits() + 1) - x.abs();
        let t = (t0 / ulp).round() * ulp;
        let s = x - t;
        if s + t == x && (t - t0).abs() <= ulp {
            return (s, t);
        }
    }
    (x - t0, t0)
}

/// Trend is a centered moving average with edge replication, seasonal the
/// remainder. `kernel` must be odd.
pub fn series_decompose(x: &Tensor, kernel: usize) -> Result<(Tensor, Tensor)> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::invalid("series_decompose", format!("kernel must be odd, got {kernel}")));
    }
    let trend0 = moving_average(x, kernel)?;
    let (mut seasonal, mut trend) = (Vec::with_capacity(trend0.len()), Vec::with_capacity(trend0.len()));
    for (&xv, &t0) in x.data().iter().zip(&trend0) {
        let (s, t) = exact_split(xv, t0);
        seasonal.push(s);
        trend.push(t);
    }
    Ok((Tensor::new(x.shape().to_vec(), seasonal)?, Tensor::new(x.shape().to_vec(), trend)?))
}

/// `x [L×d] → [seasonal; trend]` stacked along rows.
#[derive(Debug)]
pub struct SeriesDecompose {
    pub kernel: usize,
}

impl CustomOp for SeriesDecompose {
    fn name(&self) -> &'static str {
        "series_decompose"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (l, d) = inputs[0].dims2()?;
        let (s, t) = series_decompose(inputs[0], self.kernel)?;
        let mut data = s.into_data();
        data.extend_from_slice(t.data());
        Tensor::new(vec![2 * l, d], data)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Result<Vec<Option<Vec<f64>>>> {
        let (l, d) = inputs[0].dims2()?;
        let (gs, gt) = grad.split_at(l * d);
        // x̄ = ḡ_s + Aᵀ(ḡ_t − ḡ_s)
        let half = (self.kernel / 2) as isize;
        let mut gx = gs.to_vec();
        let diff: Vec<f64> = gt.iter().zip(gs).map(|(t, s)| (t - s) / self.kernel as f64).collect();
        for t in 0..l {
            let g = &diff[t * d..(t + 1) * d];
            for off in -half..=half {
                let idx = (t as isize + off).clamp(0, l as isize - 1) as usize;
                for (o, v) in gx[idx * d..(idx + 1) * d].iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        Ok(vec![Some(gx)])
    }
}
