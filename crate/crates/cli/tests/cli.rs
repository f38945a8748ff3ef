use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use soilcast_cli::{cmd_grid, cmd_ingest, cmd_train, prepare_station, CliError, Manifest, RunConfig};
use soilcast::models::ModelKind;

const TINY: &str = r#"
seed = 3
[[stations]]
id = "NL-Loo"
[stations.synthetic]
hours = 1500
noise = 0.0
trend_per_year = 0.0
[[stations]]
id = "BE-Vie"
[stations.synthetic]
hours = 1500
noise = 0.0
trend_per_year = 0.0
[window]
lookback = 24
stride = 60
[grid]
kinds = ["vanilla", "lstm"]
horizons = [24]
[train.transformer]
epochs = 1
[train.deep_learning]
epochs = 1
[models]
preset = "tiny"
"#;

fn tiny(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_toml(TINY).unwrap();
    cfg.out = out.to_path_buf();
    cfg.validate().unwrap();
    cfg
}

fn soilcast(dir: &Path, args: &[&str]) -> Output {
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    Command::new(env!("CARGO_BIN_EXE_soilcast"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(["--config", "tiny.toml", "--out", "out"])
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn unknown_config_keys_are_rejected() {
    for text in ["sead = 1", "[window]\nlookbak = 3", "[[stations]]\nid = \"x\"\nfile = \"a.csv\""] {
        assert!(matches!(RunConfig::from_toml(text), Err(CliError::Config(_))), "{text}");
    }
    let cfg = RunConfig::from_toml("").unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.stations.len(), 6);
}

#[test]
fn validation_catches_bad_values() {
    let base = RunConfig::default();
    let mut c = base.clone();
    c.window.stride = 0;
    assert_eq!(c.validate().unwrap_err().exit_code(), 2);
    let mut c = base.clone();
    c.stations[1].id = c.stations[0].id.clone();
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.stations[0].path = Some("/definitely/not/here.csv".into());
    assert!(c.validate().is_err());
    let mut c = base;
    c.grid.horizons.clear();
    assert!(c.validate().is_err());
}

#[test]
fn train_overrides_apply_per_family() {
    let cfg = RunConfig::from_toml("seed = 9\n[train.transformer]\nlearning_rate = 0.01\n").unwrap();
    let t = cfg.train_config(ModelKind::Informer);
    assert_eq!((t.learning_rate, t.epochs, t.batch_size, t.seed), (0.01, 5, 32, 9));
    let d = cfg.train_config(ModelKind::Cnn);
    assert_eq!((d.learning_rate, d.epochs), (1e-3, 20));
}

#[test]
fn ingest_reuses_the_cache_until_settings_change() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    let first = cmd_ingest(&cfg).unwrap();
    assert!(first.failures.is_empty());
    assert!(first.stations.iter().all(|s| !s.cache_hit && s.rows == 1500));
    let be = first.stations.iter().find(|s| s.id == "BE-Vie").unwrap();
    assert_eq!(be.dropped, vec!["lw_rad".to_string()]);
    let manifest = fs::read(dir.path().join("manifest.json")).unwrap();

    let again = cmd_ingest(&cfg).unwrap();
    assert!(again.stations.iter().all(|s| s.cache_hit));
    assert_eq!(fs::read(dir.path().join("manifest.json")).unwrap(), manifest);

    cfg.clean.max_gap += 1;
    let changed = cmd_ingest(&cfg).unwrap();
    assert!(changed.stations.iter().all(|s| !s.cache_hit));
}

#[test]
fn missing_cache_names_the_ingest_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let err = prepare_station(&cfg, "NL-Loo").unwrap_err();
    assert!(matches!(err, CliError::MissingCache { .. }));
    assert!(err.to_string().contains("soilcast ingest"));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn train_writes_deterministic_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut sums = Vec::new();
    for d in [&a, &b] {
        let cfg = tiny(d.path());
        cmd_ingest(&cfg).unwrap();
        let s = cmd_train(&cfg, ModelKind::Informer, "NL-Loo", 24).unwrap();
        for f in ["best.ckpt", "final.ckpt", "loss.csv", "spec.json"] {
            assert!(s.dir.join(f).is_file(), "{f}");
        }
        assert!(s.final_train_mse.is_finite());
        sums.push((s.final_checkpoint_sha256, Manifest::load(d.path()).unwrap()));
    }
    assert_eq!(sums[0], sums[1]);
    let m = &sums[0].1;
    assert!(m.artifacts.contains_key("runs/NL-Loo/informer-h24/final.ckpt"));
    assert!(m.artifacts.contains_key("cache/NL-Loo.series"));
}

#[test]
fn grid_covers_every_cell_and_skips_quietly() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cmd_ingest(&cfg).unwrap();
    cfg.grid.horizons = vec![24, 5000];
    let outcome = cmd_grid(&cfg, 1).unwrap();
    assert_eq!(outcome.report.rows.len(), 4);
    assert_eq!(outcome.warnings.len(), 4);
    let grid = dir.path().join("grid");
    let csv = fs::read_to_string(grid.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(fs::read_dir(grid.join("curves")).unwrap().count(), 4);
    for f in ["table_normalized.txt", "table_physical.txt", "warnings.txt"] {
        assert!(grid.join(f).is_file());
    }
}

#[test]
fn grid_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_ingest(&cfg).unwrap();
    cmd_grid(&cfg, 1).unwrap();
    let first = Manifest::load(dir.path()).unwrap();
    cmd_grid(&cfg, 2).unwrap();
    assert_eq!(Manifest::load(dir.path()).unwrap(), first);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(soilcast(d, &["train", "--model", "transformer-xl"]).status.code(), Some(2));
    assert_eq!(soilcast(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(soilcast(d, &["train"]).status.code(), Some(2));

    let missing = soilcast(d, &["train", "--model", "lstm", "--horizon", "24"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("run `soilcast ingest` first"));

    let bad = Command::new(env!("CARGO_BIN_EXE_soilcast"))
        .current_dir(d)
        .args(["--config", "nope.toml", "ingest"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));

    let ingest = soilcast(d, &["ingest"]);
    assert_eq!(ingest.status.code(), Some(0));
    let table = String::from_utf8_lossy(&ingest.stdout);
    assert!(table.contains("Statistical results of features"));
    assert!(table.lines().any(|l| l.starts_with("Longwave") && l.contains("-9999")));

    let train = soilcast(d, &["train", "--model", "cnn", "--horizon", "24", "--station", "BE-Vie"]);
    assert_eq!(train.status.code(), Some(0), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(d.join("out/runs/BE-Vie/cnn-h24/final.ckpt").is_file());

    let grid = soilcast(d, &["grid", "--horizon", "9999"]);
    assert_eq!(grid.status.code(), Some(0));
}
