//! Deterministic stand-in stations: daily and annual sinusoids plus a slow
//! trend and optional seeded noise, scaled to each site's climate.

use std::f64::consts::{PI, TAU};

use chrono::{NaiveDate, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::series::{hour, Column, StationSeries, FEATURE_NAMES, TARGET_NAME};

/// Climate of one site in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteProfile {
    pub air_mean: f64,
    pub air_annual: f64,
    pub air_daily: f64,
    pub lw_mean: f64,
    pub sw_peak: f64,
    pub pressure: f64,
    pub wind: f64,
    pub precip: f64,
    pub soil_moisture: f64,
    /// Longwave sensor absent (every cell is the sentinel).
    pub lw_missing: bool,
}

impl SiteProfile {
    /// Profile for one of the six sites, or a temperate default.
    pub fn for_station(id: &str) -> Self {
        let p = |air_mean, air_annual, lw_mean, sw_peak, pressure, wind, precip, soil_moisture| SiteProfile {
            air_mean,
            air_annual,
            air_daily: 4.0,
            lw_mean,
            sw_peak,
            pressure,
            wind,
            precip,
            soil_moisture,
            lw_missing: false,
        };
        match id {
            "NL-Loo" => p(10.1, 7.5, 337.7, 1005.0, 101.08, 2.35, 0.047, 8.6),
            "FR-Lbr" => p(12.9, 7.0, 334.1, 1017.0, 101.57, 3.11, 0.039, 38.4),
            "BE-Vie" => SiteProfile { lw_missing: true, ..p(8.4, 7.5, 300.0, 1012.0, 96.03, 2.44, 0.072, 31.3) },
            "IT-Col" => p(7.2, 8.0, 281.7, 1155.0, 84.90, 1.63, 0.098, 31.5),
            "FI-Hyy" => p(4.1, 10.0, 301.9, 855.0, 99.15, 3.27, 0.047, 27.4),
            "CH-Lae" => p(7.8, 8.5, 304.5, 1074.0, 93.24, 2.23, 0.067, 21.9),
            _ => p(9.0, 7.5, 320.0, 1000.0, 100.0, 2.5, 0.05, 25.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub station_id: String,
    pub start: NaiveDateTime,
    pub hours: usize,
    /// Noise standard deviation as a fraction of each variable's amplitude.
    pub noise: f64,
    pub trend_per_year: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(station_id: &str, hours: usize) -> Self {
        Self {
            station_id: station_id.to_string(),
            start: NaiveDate::from_ymd_opt(2010, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            hours,
            noise: 0.0,
            trend_per_year: 0.05,
            seed: 0,
        }
    }
}

const YEAR_HOURS: f64 = 365.25 * 24.0;

/// Generates the station; the sentinel `-9999` fills absent sensors.
pub fn synthetic_station(cfg: &SyntheticConfig) -> StationSeries {
    let p = SiteProfile::for_station(&cfg.station_id);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut noise = |scale: f64| if cfg.noise > 0.0 { cfg.noise * scale * unit.sample(&mut rng) } else { 0.0 };

    let timestamps: Vec<NaiveDateTime> = (0..cfg.hours).map(|k| cfg.start + hour() * k as i32).collect();
    let t0 = cfg.start.and_utc().timestamp() as f64 / 3600.0;
    let mut cols: Vec<Vec<f64>> = (0..8).map(|_| Vec::with_capacity(cfg.hours)).collect();
    for k in 0..cfg.hours {
        let abs_h = t0 + k as f64;
        let hod = abs_h.rem_euclid(24.0);
        // annual phase measured from Jan 1 (the epoch is a Jan 1 midnight)
        let year = TAU * abs_h.rem_euclid(YEAR_HOURS) / YEAR_HOURS;
        let trend = cfg.trend_per_year * k as f64 / YEAR_HOURS;
        let annual = |lag_days: f64| -(year - TAU * (20.0 + lag_days) / 365.25).cos();
        let daily = |peak_hour: f64| (TAU * (hod - peak_hour) / 24.0).cos();

        let air = p.air_mean + p.air_annual * annual(0.0) + p.air_daily * daily(15.0) + trend + noise(p.air_daily);
        let sun = (PI * (hod - 6.0) / 12.0).sin().max(0.0);
        let sw = (p.sw_peak * (0.55 + 0.45 * annual(-10.0)) * sun + noise(0.05 * p.sw_peak)).max(0.0);
        let lw = if p.lw_missing { -9999.0 } else { p.lw_mean + 4.0 * (air - p.air_mean) + noise(10.0) };
        let pressure = p.pressure + 0.6 * (TAU * abs_h / 127.0).sin() + noise(0.3);
        let wind = (p.wind * (1.0 + 0.4 * (TAU * abs_h / 89.0).sin() + 0.2 * daily(14.0)) + noise(0.5)).max(0.0);
        let rain = (3.0 * (TAU * abs_h / 151.0).sin() - 2.0).max(0.0);
        let precip = (p.precip / 0.13 * rain + noise(p.precip)).max(0.0);
        let moisture = p.soil_moisture * (1.0 + 0.25 * annual(60.0)) + noise(1.0);
        let soil =
            p.air_mean + 0.9 * p.air_annual * annual(12.0) + 0.4 * p.air_daily * daily(18.0) + trend + noise(0.5);
        for (c, v) in cols.iter_mut().zip([lw, sw, air, pressure, wind, precip, moisture, soil]) {
            c.push(v);
        }
    }
    let target = Column::new(TARGET_NAME, cols.pop().unwrap());
    let features = FEATURE_NAMES.iter().zip(cols).map(|(n, v)| Column::new(*n, v)).collect();
    StationSeries { station_id: cfg.station_id.clone(), timestamps, features, target }
}
