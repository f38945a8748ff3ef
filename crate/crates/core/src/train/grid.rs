use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Instant;

use super::metrics::evaluate;
use super::report::{MetricsReport, ReportRow};
use super::trainer::{train, EpochRecord, TrainConfig};
use crate::data::{make_windows, FeatureStats, NormalizedSeries, SplitRanges};
use crate::error::{Error, Result};
use crate::models::{build_model, ModelKind, ModelSpec};
use crate::nn::ParamSet;

/// A cleaned, normalized station ready for windowing.
#[derive(Clone, Debug)]
pub struct PreparedStation {
    pub id: String,
    pub series: Arc<NormalizedSeries>,
    pub stats: FeatureStats,
    pub splits: SplitRanges,
}

#[derive(Clone, Debug)]
pub enum StationSlot {
    Ready(PreparedStation),
    Unavailable { id: String, reason: String },
}

impl StationSlot {
    pub fn id(&self) -> &str {
        match self {
            StationSlot::Ready(p) => &p.id,
            StationSlot::Unavailable { id, .. } => id,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GridPlan {
    pub kinds: Vec<ModelKind>,
    pub horizons: Vec<usize>,
    /// Step between consecutive window starts.
    pub stride: usize,
    /// Worker threads; cells are independent jobs.
    pub workers: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub row: ReportRow,
    pub curve: Vec<EpochRecord>,
    pub params: ParamSet,
    pub spec: ModelSpec,
}

#[derive(Clone, Debug, Default)]
pub struct GridOutcome {
    pub report: MetricsReport,
    pub cells: Vec<CellResult>,
    pub warnings: Vec<String>,
}

/// Trains and evaluates one cell: best-validation parameters on the test split.
pub fn run_cell(station: &PreparedStation, spec: &ModelSpec, cfg: &TrainConfig, stride: usize) -> Result<CellResult> {
    let started = Instant::now();
    let (l, h) = (spec.lookback, spec.horizon);
    let s = &station.splits;
    let train_w = make_windows(&station.series, s.train.clone(), l, h, stride)?;
    let val_w = make_windows(&station.series, s.val.clone(), l, h, stride)?;
    let test_w = make_windows(&station.series, s.test.clone(), l, h, stride)?;
    if train_w.is_empty() || test_w.is_empty() {
        return Err(Error::Data(format!(
            "{}: {} train / {} test windows for L={l}, H={h}",
            station.id,
            train_w.len(),
            test_w.len()
        )));
    }
    let mut model = build_model(spec, cfg.seed)?;
    let outcome = train(&mut model, &train_w, Some(&val_w), cfg)?;
    model.params = outcome.best_params.clone();
    let m = evaluate(&model, &test_w, &station.stats)?;
    Ok(CellResult {
        row: ReportRow {
            kind: spec.kind,
            station: station.id.clone(),
            horizon: h,
            samples: m.windows,
            mse_norm: m.mse_norm,
            mae_norm: m.mae_norm,
            mse_phys: m.mse_phys,
            mae_phys: m.mae_phys,
            wall_seconds: started.elapsed().as_secs_f64(),
        },
        curve: outcome.curve,
        params: model.params,
        spec: spec.clone(),
    })
}

/// Runs every `(station, kind, horizon)` cell on a bounded worker pool.
/// Failed cells and unavailable stations are skipped with a warning; rows
/// come back in station, kind, horizon order regardless of scheduling.
pub fn run_grid<S, C>(stations: &[StationSlot], plan: &GridPlan, spec_for: S, cfg_for: C) -> GridOutcome
where
    S: Fn(ModelKind, &PreparedStation, usize) -> ModelSpec + Sync,
    C: Fn(ModelKind) -> TrainConfig + Sync,
{
    let mut warnings = Vec::new();
    let mut jobs = Vec::new();
    for slot in stations {
        match slot {
            StationSlot::Ready(p) => {
                for &kind in &plan.kinds {
                    for &h in &plan.horizons {
                        jobs.push((p, kind, h));
                    }
                }
            }
            StationSlot::Unavailable { id, reason } => {
                let w = format!("station {id} skipped: {reason}");
                log::warn!("{w}");
                warnings.push(w);
            }
        }
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    let workers = plan.workers.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, next, spec_for, cfg_for) = (&jobs, &next, &spec_for, &cfg_for);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(station, kind, h)) = jobs.get(i) else { break };
                let spec = spec_for(kind, station, h);
                let cfg = cfg_for(kind).with_seed(plan.seed);
                let result = run_cell(station, &spec, &cfg, plan.stride);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut results: Vec<(usize, Result<CellResult>)> = rx.into_iter().collect();
    results.sort_by_key(|(i, _)| *i);
    let mut outcome = GridOutcome::default();
    for (i, r) in results {
        let (station, kind, h) = jobs[i];
        match r {
            Ok(cell) => {
                log::info!(
                    "{} {} H={h}: test MSE {:.4} ({:.1}s)",
                    station.id,
                    kind,
                    cell.row.mse_norm,
                    cell.row.wall_seconds
                );
                outcome.report.rows.push(cell.row.clone());
                outcome.cells.push(cell);
            }
            Err(e) => {
                let w = format!("{} {} H={h} skipped: {e}", station.id, kind);
                log::warn!("{w}");
                warnings.push(w);
            }
        }
    }
    outcome.warnings = warnings;
    outcome
}
