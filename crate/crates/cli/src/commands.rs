use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use soilcast::checks::{kernel_gradient_suite, model_gradient_suite, op_gradient_suite, reversibility_suite, CheckResult};
use soilcast::data::*;
use soilcast::models::{build_model, ModelKind, ModelSpec};
use soilcast::nn::encode_checkpoint;
use soilcast::train::*;

use crate::config::{RunConfig, StationConfig};
use crate::manifest::Manifest;
use crate::{CliError, JOBS_ENV};

fn mkdir(p: &Path) -> Result<(), CliError> {
    fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

fn write(p: &Path, bytes: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
    if let Some(parent) = p.parent() {
        mkdir(parent)?;
    }
    fs::write(p, bytes).map_err(|e| CliError::io(p, e))?;
    Ok(p.to_path_buf())
}

/// `(series cache, stats sidecar)` for a station.
pub fn cache_paths(out: &Path, id: &str) -> (PathBuf, PathBuf) {
    let dir = out.join("cache");
    (dir.join(format!("{id}.series")), dir.join(format!("{id}.stats.json")))
}

/// Pool size: `SOILCAST_JOBS`, then `workers` from the config, then the
/// number of available cores.
pub fn resolve_workers(cfg: &RunConfig) -> Result<usize, CliError> {
    if let Ok(v) = std::env::var(JOBS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("{JOBS_ENV} must be a positive integer, got {v:?}"))),
        };
    }
    Ok(cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1))
}

// ---- ingest -------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct IngestedStation {
    pub id: String,
    pub rows: usize,
    pub cache_hit: bool,
    pub dropped: Vec<String>,
    pub source_hash: String,
    pub series: StationSeries,
}

#[derive(Clone, Debug, Default)]
pub struct IngestSummary {
    pub stations: Vec<IngestedStation>,
    /// Stations that could not be used, with the reason.
    pub failures: Vec<(String, String)>,
}

impl IngestSummary {
    /// Feature statistics of every ingested station in one table.
    pub fn table(&self, sentinel: f64) -> String {
        let refs: Vec<&StationSeries> = self.stations.iter().map(|s| &s.series).collect();
        feature_table(&refs, sentinel)
    }
}

/// Raw CSV bytes of a station. Generated stations are first written to
/// `out/raw/<id>.csv` in the configured column layout.
pub fn raw_source(cfg: &RunConfig, st: &StationConfig) -> Result<(PathBuf, Vec<u8>), CliError> {
    let path = match &st.path {
        Some(p) => p.clone(),
        None => {
            let p = cfg.out.join("raw").join(format!("{}.csv", st.id));
            mkdir(&cfg.out.join("raw"))?;
            let series = synthetic_station(&st.synthetic_config(cfg.seed));
            write_csv(&p, &series, &cfg.columns, cfg.clean.sentinel)?;
            p
        }
    };
    let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    Ok((path, bytes))
}

/// Content hash of the raw bytes together with every setting that shapes the cache.
pub fn source_hash(cfg: &RunConfig, id: &str, raw: &[u8]) -> String {
    let settings = serde_json::to_vec(&(id, &cfg.columns, &cfg.clean, &cfg.split)).expect("settings serialize");
    let mut bytes = raw.to_vec();
    bytes.extend_from_slice(&settings);
    sha256_hex(&bytes)
}

fn cached(series_path: &Path, stats_path: &Path, hash: &str) -> Option<StationSeries> {
    if !stats_path.is_file() {
        return None;
    }
    match read_series_cache(series_path) {
        Ok((h, s)) if h == hash => Some(s),
        _ => None,
    }
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestSummary, CliError> {
    let mut summary = IngestSummary::default();
    let mut written = Vec::new();
    for st in &cfg.stations {
        let (raw_path, raw) = raw_source(cfg, st)?;
        if raw_path.starts_with(&cfg.out) {
            written.push(raw_path.clone());
        }
        let hash = source_hash(cfg, &st.id, &raw);
        let (series_path, stats_path) = cache_paths(&cfg.out, &st.id);
        let (series, hit) = match cached(&series_path, &stats_path, &hash) {
            Some(s) => {
                log::info!("{}: cache up to date", st.id);
                (s, true)
            }
            None => {
                let loaded = read_csv(raw.as_slice(), &st.id, &cfg.columns)?;
                let (cleaned, report) = match clean(&loaded, &cfg.clean) {
                    Ok(r) => r,
                    Err(e @ soilcast::Error::UnusableStation { .. }) => {
                        log::error!("{e}");
                        summary.failures.push((st.id.clone(), e.to_string()));
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                };
                log::info!(
                    "{}: {} rows, {} sentinel cells, {} interpolated, {} incomplete rows",
                    st.id,
                    cleaned.len(),
                    report.sentinel_cells,
                    report.interpolated_cells,
                    report.incomplete_rows
                );
                let splits = chronological_split(&cleaned, &cfg.split)?;
                let stats = compute_stats(&cleaned, splits.train)?;
                mkdir(&cfg.out.join("cache"))?;
                write_series_cache(&series_path, &cleaned, &hash)?;
                stats.write_json(&stats_path)?;
                (cleaned, false)
            }
        };
        written.push(series_path);
        written.push(stats_path);
        let present = series.feature_names();
        let dropped: Vec<String> = FEATURE_NAMES.iter().filter(|f| !present.contains(f)).map(|f| f.to_string()).collect();
        summary.stations.push(IngestedStation {
            id: st.id.clone(),
            rows: series.len(),
            cache_hit: hit,
            dropped,
            source_hash: hash,
            series,
        });
    }
    Manifest::record(&cfg.out, &written)?;
    Ok(summary)
}

/// Loads a station's cache and stats and re-derives splits and the normalized series.
pub fn prepare_station(cfg: &RunConfig, id: &str) -> Result<PreparedStation, CliError> {
    let (series_path, stats_path) = cache_paths(&cfg.out, id);
    if !series_path.is_file() || !stats_path.is_file() {
        return Err(CliError::MissingCache { station: id.to_string(), path: series_path.display().to_string() });
    }
    let (_, series) = read_series_cache(&series_path)?;
    let stats = FeatureStats::read_json(&stats_path)?;
    let splits = chronological_split(&series, &cfg.split)?;
    let normalized = normalize(&series, &stats)?;
    Ok(PreparedStation { id: id.to_string(), series: Arc::new(normalized), stats, splits })
}

// ---- train --------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub dir: PathBuf,
    pub spec: ModelSpec,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub final_train_mse: f64,
    pub final_val_mse: Option<f64>,
    pub final_checkpoint_sha256: String,
    pub best_checkpoint_sha256: String,
}

pub fn curve_csv(curve: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for e in curve {
        let val = e.val_loss.map_or(String::new(), |v| format!("{v:e}"));
        let _ = writeln!(s, "{},{:e},{}", e.epoch, e.train_loss, val);
    }
    s
}

pub fn run_dir(out: &Path, station: &str, kind: ModelKind, horizon: usize) -> PathBuf {
    out.join("runs").join(station).join(format!("{kind}-h{horizon}"))
}

pub fn cmd_train(cfg: &RunConfig, kind: ModelKind, station: &str, horizon: usize) -> Result<TrainSummary, CliError> {
    cfg.station(station)?;
    let p = prepare_station(cfg, station)?;
    let spec = cfg.model_spec(kind, p.series.n_features(), horizon);
    let tcfg = cfg.train_config(kind);
    tcfg.validate()?;
    let (l, stride) = (spec.lookback, cfg.window.stride);
    let train_w = make_windows(&p.series, p.splits.train.clone(), l, horizon, stride)?;
    if train_w.is_empty() {
        return Err(CliError::Failed(format!("{station}: no complete training windows for L={l}, H={horizon}")));
    }
    let val_w = make_windows(&p.series, p.splits.val.clone(), l, horizon, stride)?;
    let mut model = build_model(&spec, cfg.seed)?;
    let outcome = train(&mut model, &train_w, (!val_w.is_empty()).then_some(&val_w), &tcfg)?;

    let dir = run_dir(&cfg.out, station, kind, horizon);
    let header = serde_json::to_string(&spec).expect("spec serializes");
    let final_ckpt = encode_checkpoint(&model.params, &header);
    let best_ckpt = encode_checkpoint(&outcome.best_params, &header);
    let files = vec![
        write(&dir.join("final.ckpt"), &final_ckpt)?,
        write(&dir.join("best.ckpt"), &best_ckpt)?,
        write(&dir.join("loss.csv"), curve_csv(&outcome.curve))?,
        write(&dir.join("spec.json"), serde_json::to_string_pretty(&spec).expect("spec serializes") + "\n")?,
    ];
    Manifest::record(&cfg.out, &files)?;
    let last = outcome.curve.last();
    let final_train_mse = window_loss(&model, &train_w)?;
    Ok(TrainSummary {
        dir,
        spec,
        best_epoch: outcome.best_epoch,
        final_train_mse,
        final_val_mse: last.and_then(|e| e.val_loss),
        final_checkpoint_sha256: sha256_hex(&final_ckpt),
        best_checkpoint_sha256: sha256_hex(&best_ckpt),
        curve: outcome.curve,
    })
}

// ---- grid ---------------------------------------------------------------

pub fn cmd_grid(cfg: &RunConfig, workers: usize) -> Result<GridOutcome, CliError> {
    let slots: Vec<StationSlot> = cfg
        .stations
        .iter()
        .map(|st| match prepare_station(cfg, &st.id) {
            Ok(p) => StationSlot::Ready(p),
            Err(e) => StationSlot::Unavailable { id: st.id.clone(), reason: e.to_string() },
        })
        .collect();
    let plan = GridPlan {
        kinds: cfg.grid.kinds.clone(),
        horizons: cfg.grid.horizons.clone(),
        stride: cfg.grid_stride(),
        workers,
        seed: cfg.seed,
    };
    let outcome = run_grid(
        &slots,
        &plan,
        |kind, st, h| cfg.model_spec(kind, st.series.n_features(), h),
        |kind| cfg.train_config(kind),
    );
    let dir = cfg.out.join("grid");
    mkdir(&dir)?;
    outcome.report.write_csv(&dir.join("report.csv"))?;
    let mut files = vec![
        dir.join("report.csv"),
        write(&dir.join("table_normalized.txt"), outcome.report.render(Scale::Normalized))?,
        write(&dir.join("table_physical.txt"), outcome.report.render(Scale::Physical))?,
        write(&dir.join("warnings.txt"), outcome.warnings.iter().map(|w| format!("{w}\n")).collect::<String>())?,
    ];
    for cell in &outcome.cells {
        let r = &cell.row;
        let name = format!("{}_{}_h{}.csv", r.station, r.kind, r.horizon);
        files.push(write(&dir.join("curves").join(name), curve_csv(&cell.curve))?);
    }
    Manifest::record(&cfg.out, &files)?;
    Ok(outcome)
}

// ---- benchmark ----------------------------------------------------------

#[derive(Clone, Debug)]
pub struct BenchSummary {
    pub rows: Vec<BenchRow>,
    /// `(description, passed)` per trend check.
    pub trends: Vec<(String, bool)>,
}

pub fn slope_of(rows: &[BenchRow], kernel: BenchKernel) -> Option<f64> {
    rows.iter().find(|r| r.kernel == kernel.as_str()).map(|r| r.slope)
}

pub fn cmd_benchmark(cfg: &RunConfig) -> Result<BenchSummary, CliError> {
    let b = &cfg.benchmark;
    let rows = complexity_benchmark(&BenchKernel::ALL, &b.lengths, b.trials, b.d_model)?;
    let mut csv = String::from("kernel,L,median_ms,slope\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{:.6},{:.4}", r.kernel, r.length, r.median_ms, r.slope);
    }
    let file = write(&cfg.out.join("benchmark.csv"), csv)?;
    Manifest::record(&cfg.out, &[file])?;
    let mut trends = Vec::new();
    if let Some(s) = slope_of(&rows, BenchKernel::Full) {
        trends.push((format!("full slope {s:.3} >= 1.7"), s >= 1.7));
    }
    for k in [BenchKernel::Lsh, BenchKernel::ProbSparse] {
        if let Some(s) = slope_of(&rows, k) {
            trends.push((format!("{} slope {s:.3} <= 1.5", k.as_str()), s <= 1.5));
        }
    }
    Ok(BenchSummary { rows, trends })
}

// ---- gradcheck ----------------------------------------------------------

pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<Vec<CheckResult>, CliError> {
    let mut results = op_gradient_suite(10, cfg.seed)?;
    results.extend(kernel_gradient_suite(10, cfg.seed)?);
    results.extend(model_gradient_suite(cfg.seed)?);
    results.extend(reversibility_suite(10, cfg.seed)?);
    let mut csv = String::from("check,instances,worst,tolerance,passed\n");
    for r in &results {
        let _ = writeln!(csv, "{},{},{:e},{:e},{}", r.name, r.instances, r.worst, r.tolerance, r.passed());
    }
    let file = write(&cfg.out.join("gradcheck.csv"), csv)?;
    Manifest::record(&cfg.out, &[file])?;
    Ok(results)
}
