use std::f64::consts::TAU;
use std::ops::Range;
use std::sync::Arc;

use chrono::{Datelike, NaiveDateTime, Timelike};

use super::series::StationSeries;
use super::stats::FeatureStats;
use crate::error::{Error, Result};
use crate::models::TIME_FEATURES;
use crate::tensor::Tensor;

/// `[sin, cos]` of hour-of-day followed by `[sin, cos]` of day-of-year.
pub fn time_features(ts: NaiveDateTime) -> [f64; TIME_FEATURES] {
    let h = ts.hour() as f64 + ts.minute() as f64 / 60.0;
    let days = if ts.date().leap_year() { 366.0 } else { 365.0 };
    let d = (ts.ordinal0() as f64 + h / 24.0) / days;
    let (hs, hc) = (TAU * h / 24.0).sin_cos();
    let (ds, dc) = (TAU * d).sin_cos();
    [hs, hc, ds, dc]
}

/// A station after z-scoring, laid out as model input rows
/// `[features | target | calendar]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedSeries {
    pub station_id: String,
    pub timestamps: Vec<NaiveDateTime>,
    pub feature_names: Vec<String>,
    /// Row-major `[T × width]`; missing cells are NaN.
    pub rows: Vec<f64>,
    pub width: usize,
    /// Rows with no missing cell.
    pub complete: Vec<bool>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl NormalizedSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn target_channel(&self) -> usize {
        self.n_features()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t * self.width..(t + 1) * self.width]
    }

    pub fn target(&self, t: usize) -> f64 {
        self.rows[t * self.width + self.target_channel()]
    }
}

/// Z-scores every feature and the target with `stats`, which must come from
/// the same station and cover the same features.
pub fn normalize(series: &StationSeries, stats: &FeatureStats) -> Result<NormalizedSeries> {
    if stats.station_id != series.station_id {
        return Err(Error::Data(format!(
            "stats belong to station `{}`, series is `{}`",
            stats.station_id, series.station_id
        )));
    }
    let names: Vec<String> = series.features.iter().map(|c| c.name.clone()).collect();
    let stat_names: Vec<&str> = stats.features.iter().map(|c| c.name.as_str()).collect();
    if names != stat_names {
        return Err(Error::Data(format!(
            "{}: stats cover {stat_names:?}, series has {names:?}",
            series.station_id
        )));
    }
    let m = names.len();
    let width = m + 1 + TIME_FEATURES;
    let t_len = series.len();
    let mut rows = vec![0.0; t_len * width];
    let mut complete = vec![true; t_len];
    for (j, (col, st)) in series.columns().zip(stats.features.iter().chain(std::iter::once(&stats.target))).enumerate() {
        let scale = st.scale();
        for t in 0..t_len {
            rows[t * width + j] = if col.missing[t] {
                complete[t] = false;
                f64::NAN
            } else {
                (col.values[t] - st.mean) / scale
            };
        }
    }
    for (t, ts) in series.timestamps.iter().enumerate() {
        rows[t * width + m + 1..(t + 1) * width].copy_from_slice(&time_features(*ts));
    }
    Ok(NormalizedSeries {
        station_id: series.station_id.clone(),
        timestamps: series.timestamps.clone(),
        feature_names: names,
        rows,
        width,
        complete,
        target_mean: stats.target.mean,
        target_std: stats.target.scale(),
    })
}

/// Maps normalized target values back to °C.
pub fn denormalize(values: &[f64], stats: &FeatureStats) -> Vec<f64> {
    let (mu, s) = (stats.target.mean, stats.target.scale());
    values.iter().map(|v| v * s + mu).collect()
}

/// One training/evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// `[L_in × width]` history.
    pub input: Tensor,
    /// `[H × 4]` calendar features of the forecast hours.
    pub horizon_time: Tensor,
    /// `H` normalized target values.
    pub target: Vec<f64>,
    /// Row of the first forecast hour.
    pub origin_index: usize,
}

/// Windows over a shared normalized series, materialized on demand.
#[derive(Clone, Debug)]
pub struct WindowSet {
    series: Arc<NormalizedSeries>,
    lookback: usize,
    horizon: usize,
    origins: Vec<usize>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn origins(&self) -> &[usize] {
        &self.origins
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn series(&self) -> &NormalizedSeries {
        &self.series
    }

    pub fn input(&self, i: usize) -> Tensor {
        let o = self.origins[i];
        let s = &self.series;
        let data = s.rows[(o - self.lookback) * s.width..o * s.width].to_vec();
        Tensor::new(vec![self.lookback, s.width], data).expect("window shape")
    }

    pub fn horizon_time(&self, i: usize) -> Tensor {
        let o = self.origins[i];
        let s = &self.series;
        let time0 = s.width - TIME_FEATURES;
        let data = (o..o + self.horizon).flat_map(|t| s.row(t)[time0..].to_vec()).collect();
        Tensor::new(vec![self.horizon, TIME_FEATURES], data).expect("window shape")
    }

    pub fn target(&self, i: usize) -> Vec<f64> {
        let o = self.origins[i];
        (o..o + self.horizon).map(|t| self.series.target(t)).collect()
    }

    pub fn get(&self, i: usize) -> WindowSample {
        WindowSample {
            input: self.input(i),
            horizon_time: self.horizon_time(i),
            target: self.target(i),
            origin_index: self.origins[i],
        }
    }

    /// The subset at positions `idx`.
    pub fn select(&self, idx: &[usize]) -> WindowSet {
        WindowSet { origins: idx.iter().map(|&i| self.origins[i]).collect(), ..self.clone() }
    }
}

/// Every window of `lookback + horizon` complete rows inside `range`,
/// starting at multiples of `stride` from the range start.
pub fn make_windows(
    series: &Arc<NormalizedSeries>,
    range: Range<usize>,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<WindowSet> {
    if lookback == 0 || horizon == 0 || stride == 0 {
        return Err(Error::invalid("make_windows", "lookback, horizon and stride must be at least 1"));
    }
    if range.end > series.len() {
        return Err(Error::invalid("make_windows", format!("range {range:?} exceeds {} rows", series.len())));
    }
    let span = lookback + horizon;
    let mut origins = Vec::new();
    if range.len() < span {
        log::warn!(
            "{}: range of {} rows is shorter than lookback + horizon = {span}; no windows",
            series.station_id,
            range.len()
        );
    } else {
        // length of the run of complete rows ending at each position
        let mut run = 0usize;
        let mut run_at = vec![0usize; range.len()];
        for (k, t) in range.clone().enumerate() {
            run = if series.complete[t] { run + 1 } else { 0 };
            run_at[k] = run;
        }
        let mut s = 0;
        while s + span <= range.len() {
            if run_at[s + span - 1] >= span {
                origins.push(range.start + s + lookback);
            }
            s += stride;
        }
    }
    Ok(WindowSet { series: Arc::clone(series), lookback, horizon, origins })
}
