use serde::{Deserialize, Serialize};

use super::series::{Column, StationSeries};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleanConfig {
    /// Value that marks a missing measurement.
    pub sentinel: f64,
    /// Longest interior gap (hours) filled by linear interpolation.
    pub max_gap: usize,
    /// A column missing in more than this share of training rows is dropped.
    pub drop_fraction: f64,
    /// Leading share of rows the drop rule looks at.
    pub train_fraction: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self { sentinel: -9999.0, max_gap: 3, drop_fraction: 0.5, train_fraction: 0.7 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CleanReport {
    pub sentinel_cells: usize,
    pub interpolated_cells: usize,
    pub dropped_features: Vec<String>,
    /// Rows that still contain a missing cell after cleaning.
    pub incomplete_rows: usize,
}

/// Marks sentinels and non-finite cells missing, fills short gaps and drops
/// features that are mostly missing over the training rows.
pub fn clean(series: &StationSeries, cfg: &CleanConfig) -> Result<(StationSeries, CleanReport)> {
    if !(0.0..=1.0).contains(&cfg.drop_fraction) || !(0.0..=1.0).contains(&cfg.train_fraction) {
        return Err(Error::invalid("clean", "drop_fraction and train_fraction must lie in [0, 1]"));
    }
    series.validate()?;
    let mut report = CleanReport::default();
    let train_rows = ((cfg.train_fraction * series.len() as f64 + 1e-9).floor() as usize).max(1);

    let mut clean_col = |c: &Column| {
        let mut out = c.clone();
        for (v, m) in out.values.iter_mut().zip(out.missing.iter_mut()) {
            if !*m && (*v == cfg.sentinel || !v.is_finite()) {
                report.sentinel_cells += 1;
                *m = true;
            }
            if *m {
                *v = f64::NAN;
            }
        }
        report.interpolated_cells += interpolate_gaps(&mut out, cfg.max_gap);
        out
    };
    let features: Vec<Column> = series.features.iter().map(&mut clean_col).collect();
    let target = clean_col(&series.target);

    let train_share = |c: &Column| {
        let n = c.missing[..train_rows.min(c.len())].iter().filter(|&&m| m).count();
        n as f64 / train_rows as f64
    };
    let share = train_share(&target);
    if share > cfg.drop_fraction {
        return Err(Error::UnusableStation {
            station: series.station_id.clone(),
            reason: format!("target `{}` is missing in {:.1}% of training rows", target.name, 100.0 * share),
        });
    }
    let mut kept = Vec::with_capacity(features.len());
    for c in features {
        let share = train_share(&c);
        if share > cfg.drop_fraction {
            log::warn!(
                "{}: dropping feature `{}` ({:.1}% of training rows missing)",
                series.station_id,
                c.name,
                100.0 * share
            );
            report.dropped_features.push(c.name);
        } else {
            kept.push(c);
        }
    }
    let out = StationSeries {
        station_id: series.station_id.clone(),
        timestamps: series.timestamps.clone(),
        features: kept,
        target,
    };
    report.incomplete_rows = (0..out.len()).filter(|&t| !out.row_complete(t)).count();
    Ok((out, report))
}

/// Linearly fills interior runs of at most `max_gap` missing cells; returns
/// the number of cells filled.
fn interpolate_gaps(c: &mut Column, max_gap: usize) -> usize {
    let n = c.len();
    let mut filled = 0;
    let mut t = 0;
    while t < n {
        if !c.missing[t] {
            t += 1;
            continue;
        }
        let start = t;
        while t < n && c.missing[t] {
            t += 1;
        }
        let len = t - start;
        if start == 0 || t == n || len > max_gap {
            continue;
        }
        let (a, b) = (c.values[start - 1], c.values[t]);
        for k in 0..len {
            let w = (k + 1) as f64 / (len + 1) as f64;
            c.values[start + k] = a + (b - a) * w;
            c.missing[start + k] = false;
        }
        filled += len;
    }
    filled
}
