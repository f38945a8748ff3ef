use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::series::{hour, Column, StationSeries, FEATURE_NAMES, TARGET_NAME};
use crate::error::{Error, Result};

/// Binds logical variable names to CSV header names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColumnMap {
    pub timestamp: String,
    pub lw_rad: String,
    pub sw_rad: String,
    pub air_temp: String,
    pub pressure: String,
    pub wind: String,
    pub precip: String,
    pub soil_moisture: String,
    pub soil_temp_5cm: String,
}

impl ColumnMap {
    /// FLUXNET2015 FULLSET hourly variable names.
    pub fn fluxnet() -> Self {
        Self {
            timestamp: "TIMESTAMP_START".into(),
            lw_rad: "LW_IN_F".into(),
            sw_rad: "SW_IN_F".into(),
            air_temp: "TA_F".into(),
            pressure: "PA_F".into(),
            wind: "WS_F".into(),
            precip: "P_F".into(),
            soil_moisture: "SWC_F_MDS_1".into(),
            soil_temp_5cm: "TS_F_MDS_1".into(),
        }
    }

    /// Headers equal to the logical names.
    pub fn logical() -> Self {
        Self {
            timestamp: "timestamp".into(),
            lw_rad: FEATURE_NAMES[0].into(),
            sw_rad: FEATURE_NAMES[1].into(),
            air_temp: FEATURE_NAMES[2].into(),
            pressure: FEATURE_NAMES[3].into(),
            wind: FEATURE_NAMES[4].into(),
            precip: FEATURE_NAMES[5].into(),
            soil_moisture: FEATURE_NAMES[6].into(),
            soil_temp_5cm: TARGET_NAME.into(),
        }
    }

    /// `(logical, header)` for the seven features in input order.
    pub fn features(&self) -> [(&'static str, &str); 7] {
        [
            (FEATURE_NAMES[0], &self.lw_rad),
            (FEATURE_NAMES[1], &self.sw_rad),
            (FEATURE_NAMES[2], &self.air_temp),
            (FEATURE_NAMES[3], &self.pressure),
            (FEATURE_NAMES[4], &self.wind),
            (FEATURE_NAMES[5], &self.precip),
            (FEATURE_NAMES[6], &self.soil_moisture),
        ]
    }
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self::fluxnet()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimestampFormat {
    /// `YYYYMMDDHHMM`
    Compact,
    Iso8601,
}

impl TimestampFormat {
    pub fn detect(s: &str) -> Self {
        let s = s.trim();
        if s.len() == 12 && s.bytes().all(|b| b.is_ascii_digit()) {
            Self::Compact
        } else {
            Self::Iso8601
        }
    }

    pub fn parse(self, s: &str) -> Result<NaiveDateTime> {
        let s = s.trim();
        let bad = || Error::Data(format!("unparseable timestamp `{s}`"));
        match self {
            Self::Compact => NaiveDateTime::parse_from_str(s, "%Y%m%d%H%M").map_err(|_| bad()),
            Self::Iso8601 => {
                if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
                    return Ok(dt.naive_utc());
                }
                ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"]
                    .iter()
                    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
                    .ok_or_else(bad)
            }
        }
    }
}

/// Parses one timestamp in either supported format.
pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    TimestampFormat::detect(s).parse(s)
}

pub fn load_csv(path: &Path, station_id: &str, map: &ColumnMap) -> Result<StationSeries> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, station_id, map)
}

/// Reads a header-first CSV onto a gap-free hourly grid. Hours absent from
/// the file become rows with every cell missing.
pub fn read_csv<R: Read>(reader: R, station_id: &str, map: &ColumnMap) -> Result<StationSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str, logical: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Data(format!("{station_id}: column `{name}` (for {logical}) not found in header"))
        })
    };
    let ts_col = find(&map.timestamp, "timestamp")?;
    let mut cols = Vec::with_capacity(8);
    for (logical, header) in map.features() {
        cols.push(find(header, logical)?);
    }
    cols.push(find(&map.soil_temp_5cm, TARGET_NAME)?);

    let mut stamps = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); cols.len()];
    let mut format = None;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let raw = record.get(ts_col).unwrap_or("");
        let fmt = *format.get_or_insert_with(|| TimestampFormat::detect(raw));
        let ts = fmt.parse(raw).map_err(|e| Error::Data(format!("{station_id}: row {}: {e}", i + 1)))?;
        if ts.minute() != 0 || ts.second() != 0 {
            return Err(Error::Data(format!("{station_id}: row {}: {ts} is not on the hour", i + 1)));
        }
        stamps.push(ts);
        for (j, &c) in cols.iter().enumerate() {
            values[j].push(parse_cell(record.get(c).unwrap_or(""), station_id, i + 1)?);
        }
    }
    if stamps.is_empty() {
        return Err(Error::Data(format!("{station_id}: no data rows")));
    }
    check_order(&stamps, station_id)?;

    let start = stamps[0];
    let len = ((*stamps.last().unwrap() - start).num_hours() + 1) as usize;
    let timestamps: Vec<NaiveDateTime> = (0..len).map(|k| start + hour() * k as i32).collect();
    let mut gridded = vec![vec![f64::NAN; len]; cols.len()];
    let mut present = vec![false; len];
    for (row, ts) in stamps.iter().enumerate() {
        let k = (*ts - start).num_hours() as usize;
        present[k] = true;
        for j in 0..cols.len() {
            gridded[j][k] = values[j][row];
        }
    }
    let inserted = present.iter().filter(|&&p| !p).count();
    if inserted > 0 {
        log::info!("{station_id}: inserted {inserted} missing hours into the grid");
    }
    let mut columns: Vec<Column> = FEATURE_NAMES
        .iter()
        .chain(std::iter::once(&TARGET_NAME))
        .zip(gridded)
        .map(|(name, v)| Column::new(*name, v))
        .collect();
    let target = columns.pop().unwrap();
    Ok(StationSeries { station_id: station_id.to_string(), timestamps, features: columns, target })
}

fn parse_cell(s: &str, station_id: &str, row: usize) -> Result<f64> {
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") {
        return Ok(f64::NAN);
    }
    s.parse::<f64>()
        .map_err(|_| Error::Data(format!("{station_id}: row {row}: `{s}` is not a number")))
}

fn check_order(stamps: &[NaiveDateTime], station_id: &str) -> Result<()> {
    let mut duplicates = Vec::new();
    let mut backwards = Vec::new();
    for (i, w) in stamps.windows(2).enumerate() {
        if w[1] == w[0] {
            duplicates.push(format!("row {} ({})", i + 2, w[1]));
        } else if w[1] < w[0] {
            backwards.push(format!("row {} ({} after {})", i + 2, w[1], w[0]));
        }
    }
    let list = |v: &[String]| {
        let shown: Vec<&str> = v.iter().take(10).map(String::as_str).collect();
        let more = if v.len() > 10 { format!(" and {} more", v.len() - 10) } else { String::new() };
        format!("{}{more}", shown.join(", "))
    };
    if !duplicates.is_empty() {
        return Err(Error::Data(format!("{station_id}: duplicate timestamps at {}", list(&duplicates))));
    }
    if !backwards.is_empty() {
        return Err(Error::Data(format!("{station_id}: non-monotonic timestamps at {}", list(&backwards))));
    }
    Ok(())
}

/// Writes `series` as CSV with `YYYYMMDDHHMM` stamps and `sentinel` in
/// missing cells.
pub fn write_csv(path: &Path, series: &StationSeries, map: &ColumnMap, sentinel: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![map.timestamp.as_str()];
    let feature_headers = map.features();
    for c in &series.features {
        let h = feature_headers
            .iter()
            .find(|(logical, _)| *logical == c.name)
            .map(|(_, h)| *h)
            .ok_or_else(|| Error::Data(format!("no header mapped for `{}`", c.name)))?;
        header.push(h);
    }
    header.push(&map.soil_temp_5cm);
    w.write_record(&header)?;
    for (t, ts) in series.timestamps.iter().enumerate() {
        let mut rec = vec![ts.format("%Y%m%d%H%M").to_string()];
        for c in series.columns() {
            let v = if c.missing[t] { sentinel } else { c.values[t] };
            rec.push(format!("{v}"));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
