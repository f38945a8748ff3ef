use std::ops::Range;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::series::StationSeries;
use crate::error::{Error, Result};

/// How a station's record is cut into train / validation / test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum SplitSpec {
    Fractions { train: f64, val: f64, test: f64 },
    /// First timestamps of the validation and test parts.
    Boundaries { val_start: NaiveDateTime, test_start: NaiveDateTime },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions { train: 0.7, val: 0.1, test: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

pub const MIN_SPLIT_ROWS: usize = 10;

/// Contiguous ranges of sizes `⌊f_train·T⌋`, `⌊f_val·T⌋` and the remainder.
pub fn split_by_fractions(len: usize, train: f64, val: f64, test: f64) -> Result<SplitRanges> {
    if len < MIN_SPLIT_ROWS {
        return Err(Error::Data(format!("need at least {MIN_SPLIT_ROWS} rows to split, got {len}")));
    }
    if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f)) || ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "chronological_split",
            format!("fractions {train}/{val}/{test} must be in [0, 1] and sum to 1"),
        ));
    }
    // the epsilon keeps products like 0.7·10 from flooring to 6
    let n_train = (train * len as f64 + 1e-9).floor() as usize;
    let n_val = (val * len as f64 + 1e-9).floor() as usize;
    let a = n_train.min(len);
    let b = (a + n_val).min(len);
    Ok(SplitRanges { train: 0..a, val: a..b, test: b..len })
}

pub fn chronological_split(series: &StationSeries, spec: &SplitSpec) -> Result<SplitRanges> {
    match *spec {
        SplitSpec::Fractions { train, val, test } => split_by_fractions(series.len(), train, val, test),
        SplitSpec::Boundaries { val_start, test_start } => {
            if val_start > test_start {
                return Err(Error::invalid("chronological_split", "val_start is after test_start"));
            }
            let ts = &series.timestamps;
            let a = ts.partition_point(|t| *t < val_start);
            let b = ts.partition_point(|t| *t < test_start);
            if a == 0 {
                return Err(Error::Data(format!(
                    "{}: boundary {val_start} leaves no training rows",
                    series.station_id
                )));
            }
            Ok(SplitRanges { train: 0..a, val: a..b, test: b..ts.len() })
        }
    }
}
