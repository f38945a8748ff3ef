use std::fmt::Write as _;

use super::series::{StationSeries, FEATURE_NAMES};
use super::stats::ColumnStats;

/// Row labels with units, in [`FEATURE_NAMES`] order.
pub const FEATURE_LABELS: [&str; 7] = [
    "Longwave radiation (W/m2)",
    "Shortwave radiation (W/m2)",
    "Air temperature (deg C)",
    "Atmospheric pressure (kpa)",
    "Wind speed (m/s)",
    "Precipitation (mm)",
    "Soil moisture (% by volume)",
];

/// Min/Max/Mean of every feature over each whole series, stations as column
/// groups. A feature a station lacks prints as the sentinel in all three cells.
pub fn feature_table(stations: &[&StationSeries], sentinel: f64) -> String {
    let label_w = FEATURE_LABELS.iter().map(|l| l.len()).max().unwrap_or(0).max(8);
    let cell = 10;
    let mut out = String::from("Statistical results of features\n");
    let _ = write!(out, "{:<label_w$}", "Features");
    for s in stations {
        let _ = write!(out, " | {:^w$}", s.station_id, w = 3 * cell + 2);
    }
    out.push('\n');
    let _ = write!(out, "{:<label_w$}", "");
    for _ in stations {
        let _ = write!(out, " | {:>cell$} {:>cell$} {:>cell$}", "Min", "Max", "Mean");
    }
    out.push('\n');
    for (name, label) in FEATURE_NAMES.iter().zip(FEATURE_LABELS) {
        let _ = write!(out, "{label:<label_w$}");
        for s in stations {
            let stats = s.feature(name).and_then(|c| ColumnStats::of(c, 0..c.len()));
            let (lo, hi, mean) = stats.map_or((sentinel, sentinel, sentinel), |c| (c.min, c.max, c.mean));
            let _ = write!(out, " | {} {} {}", num(lo, cell), num(hi, cell), num(mean, cell));
        }
        out.push('\n');
    }
    out
}

fn num(v: f64, w: usize) -> String {
    let s = format!("{v:.3}");
    format!("{s:>w$}")
}
