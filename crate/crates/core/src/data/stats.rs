use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::series::{Column, StationSeries};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

impl ColumnStats {
    /// Non-missing cells of `col` within `range`; `None` if there are none.
    pub fn of(col: &Column, range: Range<usize>) -> Option<Self> {
        let vals: Vec<f64> = range.filter(|&t| !col.missing[t]).map(|t| col.values[t]).collect();
        if vals.is_empty() {
            return None;
        }
        let n = vals.len() as f64;
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            name: col.name.clone(),
            min,
            max,
            // rounding can push the mean of near-constant data past its bounds
            mean: mean.clamp(min, max),
            std: var.sqrt(),
            count: vals.len(),
        })
    }

    /// Divisor used for z-scores; 1 for a constant column.
    pub fn scale(&self) -> f64 {
        if self.std > 0.0 {
            self.std
        } else {
            1.0
        }
    }
}

/// Training-split statistics of one station.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub station_id: String,
    pub features: Vec<ColumnStats>,
    pub target: ColumnStats,
}

impl FeatureStats {
    pub fn feature(&self, name: &str) -> Option<&ColumnStats> {
        self.features.iter().find(|c| c.name == name)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Min/max/mean/std of every column over the non-missing cells of `train`.
pub fn compute_stats(series: &StationSeries, train: Range<usize>) -> Result<FeatureStats> {
    if train.is_empty() || train.end > series.len() {
        return Err(Error::Data(format!(
            "{}: training range {train:?} is empty or out of bounds",
            series.station_id
        )));
    }
    let one = |c: &Column| {
        let s = ColumnStats::of(c, train.clone()).ok_or_else(|| {
            Error::Data(format!("{}: `{}` has no training values", series.station_id, c.name))
        })?;
        if s.std == 0.0 {
            log::warn!("{}: `{}` is constant over the training split", series.station_id, c.name);
        }
        Ok(s)
    };
    Ok(FeatureStats {
        station_id: series.station_id.clone(),
        features: series.features.iter().map(one).collect::<Result<_>>()?,
        target: one(&series.target)?,
    })
}
