use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::ModelKind;

/// One `(kind, station, horizon)` cell of the evaluation grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub kind: ModelKind,
    pub station: String,
    pub horizon: usize,
    pub samples: usize,
    pub mse_norm: f64,
    pub mae_norm: f64,
    pub mse_phys: f64,
    pub mae_phys: f64,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Mse,
    Mae,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Normalized,
    Physical,
}

impl ReportRow {
    pub fn value(&self, metric: Metric, scale: Scale) -> f64 {
        match (metric, scale) {
            (Metric::Mse, Scale::Normalized) => self.mse_norm,
            (Metric::Mae, Scale::Normalized) => self.mae_norm,
            (Metric::Mse, Scale::Physical) => self.mse_phys,
            (Metric::Mae, Scale::Physical) => self.mae_phys,
        }
    }
}

/// Key of a flagged cell: `(kind, station, horizon, metric)`.
pub type CellKey = (ModelKind, String, usize, Metric);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
}

impl MetricsReport {
    pub fn get(&self, kind: ModelKind, station: &str, horizon: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.kind == kind && r.station == station && r.horizon == horizon)
    }

    /// Stations in first-seen order.
    pub fn stations(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.station) {
                out.push(r.station.clone());
            }
        }
        out
    }

    pub fn horizons(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.horizon).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Cells holding the lowest value across kinds for their station,
    /// horizon and metric; ties flag every minimal kind.
    pub fn best_flags(&self, scale: Scale) -> BTreeSet<CellKey> {
        let mut out = BTreeSet::new();
        for station in self.stations() {
            for h in self.horizons() {
                for metric in [Metric::Mse, Metric::Mae] {
                    let cell: Vec<&ReportRow> =
                        self.rows.iter().filter(|r| r.station == station && r.horizon == h).collect();
                    let best = cell.iter().map(|r| r.value(metric, scale)).fold(f64::INFINITY, f64::min);
                    for r in cell.iter().filter(|r| r.value(metric, scale) == best) {
                        out.insert((r.kind, station.clone(), h, metric));
                    }
                }
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// The conventional-model table followed by the transformer table, each
    /// with stations as column groups, horizons as sub-columns and an MSE and
    /// MAE row per method. `*` marks the best value of a cell.
    pub fn render(&self, scale: Scale) -> String {
        let stations = self.stations();
        let horizons = self.horizons();
        let best = self.best_flags(scale);
        let unit = match scale {
            Scale::Normalized => "normalized scale",
            Scale::Physical => "physical scale (MSE in °C², MAE in °C)",
        };
        let groups = [
            ("Evaluation of conventional deep learning-based models", vec![ModelKind::Lstm, ModelKind::Cnn]),
            (
                "Evaluation of transformer-based models",
                vec![
                    ModelKind::Vanilla,
                    ModelKind::Informer,
                    ModelKind::Autoformer,
                    ModelKind::Reformer,
                    ModelKind::Etsformer,
                ],
            ),
        ];
        const W: usize = 9;
        let mut out = String::new();
        for (title, kinds) in groups {
            let kinds: Vec<ModelKind> =
                kinds.into_iter().filter(|k| self.rows.iter().any(|r| r.kind == *k)).collect();
            if kinds.is_empty() {
                continue;
            }
            let _ = writeln!(out, "{title} ({unit})");
            let mut head = format!("{:<12}{:<8}", "Methods", "Metrics");
            let mut sub = format!("{:<20}", "");
            for s in &stations {
                head.push_str(&format!("{:<width$}", s, width = W * horizons.len()));
                for h in &horizons {
                    sub.push_str(&format!("{:<W$}", h));
                }
            }
            let _ = writeln!(out, "{}", head.trim_end());
            let _ = writeln!(out, "{}", sub.trim_end());
            for kind in kinds {
                for metric in [Metric::Mse, Metric::Mae] {
                    let name = if metric == Metric::Mse { kind.display_name() } else { "" };
                    let label = if metric == Metric::Mse { "MSE" } else { "MAE" };
                    let mut line = format!("{name:<12}{label:<8}");
                    for s in &stations {
                        for &h in &horizons {
                            let cell = match self.get(kind, s, h) {
                                Some(r) => {
                                    let flag = if best.contains(&(kind, s.clone(), h, metric)) { "*" } else { "" };
                                    format!("{:.3}{flag}", r.value(metric, scale))
                                }
                                None => "-".into(),
                            };
                            line.push_str(&format!("{cell:<W$}"));
                        }
                    }
                    let _ = writeln!(out, "{}", line.trim_end());
                }
            }
            out.push('\n');
        }
        out
    }
}
