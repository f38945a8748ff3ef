use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use soilcast::models::{ModelKind, HORIZONS};
use soilcast_cli::{
    cmd_benchmark, cmd_grid, cmd_gradcheck, cmd_ingest, cmd_train, resolve_workers, CliError, RunConfig,
};

#[derive(Parser)]
#[command(name = "soilcast", version, about = "Soil temperature forecasting from flux tower records")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for caches, checkpoints and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    station: Option<String>,
    #[arg(long, global = true)]
    model: Option<ModelKind>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean station records and write per-station caches.
    Ingest,
    /// Train one model on one station and horizon.
    Train,
    /// Train and evaluate every station, model and horizon.
    Grid,
    /// Time the attention kernels over growing sequence lengths.
    Benchmark,
    /// Run the finite-difference and reversibility checks.
    Gradcheck,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest => {
            if let Some(id) = &cli.station {
                cfg.stations = vec![cfg.station(id)?.clone()];
            }
            let summary = cmd_ingest(&cfg)?;
            println!("{}", summary.table(cfg.clean.sentinel));
            for s in &summary.stations {
                let state = if s.cache_hit { "cached" } else { "written" };
                println!("{}: {} rows ({state})", s.id, s.rows);
                if !s.dropped.is_empty() {
                    println!("{}: dropped {}", s.id, s.dropped.join(", "));
                }
            }
            if !summary.failures.is_empty() {
                let ids: Vec<&str> = summary.failures.iter().map(|(id, _)| id.as_str()).collect();
                return Err(CliError::Failed(format!("unusable stations: {}", ids.join(", "))));
            }
        }
        Command::Train => {
            let kind = cli.model.ok_or_else(|| CliError::Config("train needs --model".into()))?;
            let station = match &cli.station {
                Some(s) => s.clone(),
                None => cfg.stations[0].id.clone(),
            };
            let horizon = cli.horizon.unwrap_or(HORIZONS[0]);
            let s = cmd_train(&cfg, kind, &station, horizon)?;
            let val = s.final_val_mse.map_or("n/a".to_string(), |v| format!("{v:.6}"));
            println!(
                "{kind} on {station}, H={horizon}: train mse {:.6}, val mse {val}, best epoch {} -> {}",
                s.final_train_mse,
                s.best_epoch,
                s.dir.display()
            );
        }
        Command::Grid => {
            if let Some(id) = &cli.station {
                cfg.stations = vec![cfg.station(id)?.clone()];
            }
            if let Some(kind) = cli.model {
                cfg.grid.kinds = vec![kind];
            }
            if let Some(h) = cli.horizon {
                cfg.grid.horizons = vec![h];
            }
            let workers = resolve_workers(&cfg)?;
            let outcome = cmd_grid(&cfg, workers)?;
            for w in &outcome.warnings {
                log::warn!("{w}");
            }
            println!("{}", outcome.report.render(soilcast::train::Scale::Normalized));
            println!("{} cells, {} skipped", outcome.cells.len(), outcome.warnings.len());
        }
        Command::Benchmark => {
            let b = cmd_benchmark(&cfg)?;
            println!("kernel,L,median_ms,slope");
            for r in &b.rows {
                println!("{},{},{:.6},{:.4}", r.kernel, r.length, r.median_ms, r.slope);
            }
            for (what, ok) in &b.trends {
                println!("{} {what}", if *ok { "PASS" } else { "FAIL" });
            }
        }
        Command::Gradcheck => {
            let results = cmd_gradcheck(&cfg)?;
            let mut failed = 0;
            for r in &results {
                let flag = if r.passed() { "ok  " } else { "FAIL" };
                println!("{flag} {:<40} worst {:.3e} (tol {:.0e}, n={})", r.name, r.worst, r.tolerance, r.instances);
                failed += usize::from(!r.passed());
            }
            if failed > 0 {
                return Err(CliError::Failed(format!("{failed} check(s) failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    // clap exits with 2 on usage errors, including unknown model kinds.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
