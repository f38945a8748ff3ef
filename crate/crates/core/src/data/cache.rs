//! Columnar binary cache of cleaned station series.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic       8 bytes  "SOILSERS"
//! version     u32      1
//! source      u32 length + UTF-8 (hash of the raw input and clean settings)
//! station     u32 length + UTF-8
//! start       i64      first timestamp, seconds since the Unix epoch (UTC)
//! rows        u64      T, on an hourly grid
//! columns     u32      count; features first, target last, then per column:
//!               name     u32 length + UTF-8
//!               values   T × f64 (NaN where missing)
//!               missing  T × u8 (0 or 1)
//! checksum    32 bytes SHA-256 of everything above
//! ```

use std::path::Path;

use chrono::DateTime;
use sha2::{Digest, Sha256};

use super::series::{hour, Column, StationSeries};
use crate::error::{Error, Result};
use crate::nn::checkpoint::Reader;

pub const CACHE_MAGIC: &[u8; 8] = b"SOILSERS";
pub const CACHE_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_series(series: &StationSeries, source_hash: &str) -> Result<Vec<u8>> {
    series.validate()?;
    let start = series
        .timestamps
        .first()
        .ok_or_else(|| Error::Data("cannot cache an empty series".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    put_str(&mut out, source_hash);
    put_str(&mut out, &series.station_id);
    out.extend_from_slice(&start.and_utc().timestamp().to_le_bytes());
    out.extend_from_slice(&(series.len() as u64).to_le_bytes());
    out.extend_from_slice(&((series.features.len() + 1) as u32).to_le_bytes());
    for c in series.columns() {
        put_str(&mut out, &c.name);
        for v in &c.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(c.missing.iter().map(|&m| m as u8));
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Returns the stored source hash and the series.
pub fn decode_series(bytes: &[u8]) -> Result<(String, StationSeries)> {
    if bytes.len() < 8 + 32 || &bytes[..8] != CACHE_MAGIC {
        return Err(Error::Format("not a series cache (bad magic)".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::Format("series cache checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let source = r.string()?;
    let station_id = r.string()?;
    let start = DateTime::from_timestamp(r.i64()?, 0)
        .ok_or_else(|| Error::Format("start timestamp out of range".into()))?
        .naive_utc();
    let rows = r.u64()? as usize;
    let n_cols = r.u32()? as usize;
    if n_cols == 0 {
        return Err(Error::Format("series cache has no columns".into()));
    }
    let mut cols = Vec::with_capacity(n_cols);
    for _ in 0..n_cols {
        let name = r.string()?;
        let values = (0..rows).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let missing = r.take(rows)?.iter().map(|&b| b != 0).collect();
        cols.push(Column { name, values, missing });
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes in series cache".into()));
    }
    let target = cols.pop().unwrap();
    let timestamps = (0..rows).map(|k| start + hour() * k as i32).collect();
    let series = StationSeries { station_id, timestamps, features: cols, target };
    series.validate()?;
    Ok((source, series))
}

pub fn write_series_cache(path: &Path, series: &StationSeries, source_hash: &str) -> Result<()> {
    std::fs::write(path, encode_series(series, source_hash)?).map_err(|e| Error::io(path, e))
}

pub fn read_series_cache(path: &Path) -> Result<(String, StationSeries)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_series(&bytes)
}
