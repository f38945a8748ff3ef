//! Training, metrics, the evaluation grid and the attention timing benchmark.

mod bench;
mod grid;
mod metrics;
mod report;
mod trainer;

pub use bench::{complexity_benchmark, loglog_slope, time_kernel, BenchKernel, BenchRow, BENCH_LENGTHS};
pub use grid::{run_cell, run_grid, CellResult, GridOutcome, GridPlan, PreparedStation, StationSlot};
pub use metrics::{evaluate, mae, mse, predict_windows, ErrorSums, EvalMetrics, EVAL_BATCH};
pub use report::{CellKey, Metric, MetricsReport, ReportRow, Scale};
pub use trainer::{train, window_loss, EpochRecord, Forecaster, TrainConfig, TrainOutcome};
