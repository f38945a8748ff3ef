use chrono::{NaiveDateTime, TimeDelta};

use crate::error::{Error, Result};

/// Logical feature names in input order.
pub const FEATURE_NAMES: [&str; 7] = [
    "lw_rad",
    "sw_rad",
    "air_temp",
    "pressure",
    "wind",
    "precip",
    "soil_moisture",
];

pub const TARGET_NAME: &str = "soil_temp_5cm";

/// The six evaluation sites.
pub const STATIONS: [&str; 6] = ["NL-Loo", "FR-Lbr", "BE-Vie", "IT-Col", "FI-Hyy", "CH-Lae"];

pub fn hour() -> TimeDelta {
    TimeDelta::hours(1)
}

/// One variable over the station's hourly grid. Missing cells hold NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl Column {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        let missing = values.iter().map(|v| v.is_nan()).collect();
        Self { name: name.into(), values, missing }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }
}

/// Hourly record of one station: features in physical units and the
/// 5 cm soil temperature target.
#[derive(Clone, Debug, PartialEq)]
pub struct StationSeries {
    pub station_id: String,
    pub timestamps: Vec<NaiveDateTime>,
    pub features: Vec<Column>,
    pub target: Column,
}

impl StationSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.features.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn feature(&self, name: &str) -> Option<&Column> {
        self.features.iter().find(|c| c.name == name)
    }

    pub fn columns(&self) -> impl Iterator<Item = &Column> {
        self.features.iter().chain(std::iter::once(&self.target))
    }

    /// True when no feature or target cell of row `t` is missing.
    pub fn row_complete(&self, t: usize) -> bool {
        self.columns().all(|c| !c.missing[t])
    }

    /// Checks the hourly grid and column lengths.
    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        for c in self.columns() {
            if c.values.len() != t || c.missing.len() != t {
                return Err(Error::Data(format!(
                    "{}: column `{}` has {} values for {t} timestamps",
                    self.station_id,
                    c.name,
                    c.values.len()
                )));
            }
        }
        if let Some(i) = self.timestamps.windows(2).position(|w| w[1] - w[0] != hour()) {
            return Err(Error::Data(format!(
                "{}: timestamps {} and {} are not one hour apart",
                self.station_id,
                self.timestamps[i],
                self.timestamps[i + 1]
            )));
        }
        Ok(())
    }
}
