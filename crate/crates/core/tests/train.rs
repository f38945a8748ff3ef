use std::sync::Arc;

use chrono::NaiveDate;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soilcast::autodiff::{Tape, Var};
use soilcast::data::*;
use soilcast::models::{ModelInput, ModelKind, ModelSpec};
use soilcast::nn::ParamSet;
use soilcast::train::*;
use soilcast::{Error, Tensor};

/// `ŷ = w · history[L−1, channel]`, the same value for every horizon step.
struct LastValue {
    params: ParamSet,
    channel: usize,
    lookback: usize,
    horizon: usize,
}

impl LastValue {
    fn new(w: f64, channel: usize, lookback: usize, horizon: usize) -> Self {
        let mut params = ParamSet::new();
        params.add("w", Tensor::new(vec![1, 1], vec![w]).unwrap()).unwrap();
        Self { params, channel, lookback, horizon }
    }

    fn weight(&self) -> f64 {
        self.params.tensors()[0].data()[0]
    }
}

impl Forecaster for LastValue {
    fn params(&self) -> &ParamSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
    fn window_shape(&self) -> (usize, usize) {
        (self.lookback, self.horizon)
    }
    fn label(&self) -> String {
        "last-value".into()
    }
    fn forward_batch(&self, tape: &mut Tape, pv: &[Var], batch: &[ModelInput<'_>]) -> soilcast::Result<Var> {
        let x: Vec<f64> = batch.iter().map(|b| b.history.at(&[self.lookback - 1, self.channel])).collect();
        let x = tape.constant(Tensor::new(vec![batch.len(), 1], x)?);
        let y = tape.mul(x, pv[0])?;
        let ones = tape.constant(Tensor::ones(vec![1, self.horizon]));
        tape.matmul(y, ones)
    }
}

fn series_from(feature: Vec<f64>, target: Vec<f64>) -> Arc<NormalizedSeries> {
    let start = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let n = target.len();
    let timestamps: Vec<_> = (0..n).map(|k| start + chrono::TimeDelta::hours(k as i64)).collect();
    let mut rows = Vec::with_capacity(n * 6);
    for t in 0..n {
        rows.push(feature[t]);
        rows.push(target[t]);
        rows.extend(time_features(timestamps[t]));
    }
    Arc::new(NormalizedSeries {
        station_id: "LIN".into(),
        timestamps,
        feature_names: vec!["x".into()],
        rows,
        width: 6,
        complete: vec![true; n],
        target_mean: 0.0,
        target_std: 1.0,
    })
}

/// `target[t] = 2 · x[t−1]`
fn doubling_series(n: usize, seed: u64) -> Arc<NormalizedSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..n).map(|t| if t == 0 { 0.0 } else { 2.0 * x[t - 1] }).collect();
    series_from(x, y)
}

#[test]
fn metric_examples() {
    assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(mse(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 4.0);
    assert_eq!(mae(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 2.0);
    assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    assert!(mae(&[], &[]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..3.0)).collect();
    let t: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..3.0)).collect();
    let (mut sq, mut ab) = (0.0, 0.0);
    for i in 0..100 {
        sq += (t[i] - p[i]).powi(2);
        ab += (t[i] - p[i]).abs();
    }
    assert!((mse(&p, &t).unwrap() - sq / 100.0).abs() < 1e-12);
    assert!((mae(&p, &t).unwrap() - ab / 100.0).abs() < 1e-12);
}

#[test]
fn error_sums_merge_by_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p: Vec<f64> = (0..70).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t: Vec<f64> = (0..70).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (mut a, mut b, mut all) = (ErrorSums::default(), ErrorSums::default(), ErrorSums::default());
    a.add(&p[..30], &t[..30]).unwrap();
    b.add(&p[30..], &t[30..]).unwrap();
    all.add(&p, &t).unwrap();
    let merged_mse = (a.mse() * 30.0 + b.mse() * 40.0) / 70.0;
    assert!((merged_mse - all.mse()).abs() < 1e-12);
    a.merge(&b);
    assert!((a.mse() - all.mse()).abs() < 1e-12 && (a.mae() - all.mae()).abs() < 1e-12);
    assert_eq!(a.count, 70);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn mae_squared_bounded_by_mse(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (a, s) = (mae(&p, &t).unwrap(), mse(&p, &t).unwrap());
        prop_assert!(a * a <= s * (1.0 + 1e-12));
    }
}

proptest! {
    #[test]
    fn metrics_are_permutation_invariant(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.reverse();
        let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        let tp: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
        prop_assert!((mse(&p, &t).unwrap() - mse(&pp, &tp).unwrap()).abs() < 1e-12);
        prop_assert!((mae(&p, &t).unwrap() - mae(&pp, &tp).unwrap()).abs() < 1e-12);
    }
}

fn stats_for(mean: f64, std: f64) -> FeatureStats {
    let c = |name: &str| ColumnStats { name: name.into(), min: -1e3, max: 1e3, mean, std, count: 1 };
    FeatureStats { station_id: "LIN".into(), features: vec![c("x")], target: c("t") }
}

#[test]
fn evaluate_examples() {
    // persistence is perfect on a constant target
    let s = series_from(vec![0.3; 50], vec![0.7; 50]);
    let w = make_windows(&s, 0..50, 4, 3, 1).unwrap();
    let perfect = LastValue::new(1.0, 1, 4, 3);
    let m = evaluate(&perfect, &w, &stats_for(2.0, 3.0)).unwrap();
    assert_eq!((m.mse_norm, m.mae_norm, m.mse_phys, m.mae_phys), (0.0, 0.0, 0.0, 0.0));
    assert_eq!(m.windows, 44);
    assert_eq!(m.points, 132);

    // predicting the normalized mean gives the mean square of the targets
    let s = doubling_series(120, 1);
    let w = make_windows(&s, 0..120, 5, 4, 1).unwrap();
    let zero = LastValue::new(0.0, 0, 5, 4);
    let stats = stats_for(11.0, 4.5);
    let m = evaluate(&zero, &w, &stats).unwrap();
    let mut sq = 0.0;
    let mut n = 0;
    for i in 0..w.len() {
        for v in w.target(i) {
            sq += v * v;
            n += 1;
        }
    }
    assert!((m.mse_norm - sq / n as f64).abs() < 1e-12);
    assert!((m.mse_phys - m.mse_norm * 4.5 * 4.5).abs() <= 1e-12 * m.mse_phys);
    assert!((m.mae_phys - m.mae_norm * 4.5).abs() <= 1e-12 * m.mae_phys);

    let empty = make_windows(&s, 0..5, 5, 4, 1).unwrap();
    assert!(evaluate(&zero, &empty, &stats).is_err());
}

#[test]
fn training_recovers_the_least_squares_weight() {
    let s = doubling_series(600, 2);
    let w = make_windows(&s, 0..600, 1, 1, 1).unwrap();
    let mut model = LastValue::new(0.0, 0, 1, 1);
    let cfg = TrainConfig { learning_rate: 0.05, epochs: 30, batch_size: 32, seed: 1 };
    let out = train(&mut model, &w, None, &cfg).unwrap();
    assert!((model.weight() - 2.0).abs() < 1e-2, "{}", model.weight());
    assert_eq!(out.curve.len(), 30);
    assert_eq!(out.steps, 30 * 600usize.div_ceil(32));
    assert!(out.curve.last().unwrap().train_loss < out.curve[0].train_loss);
}

#[test]
fn zero_epochs_leave_the_model_unchanged() {
    let s = doubling_series(100, 2);
    let w = make_windows(&s, 0..100, 1, 1, 1).unwrap();
    let mut model = LastValue::new(0.25, 0, 1, 1);
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::deep_learning() };
    let out = train(&mut model, &w, None, &cfg).unwrap();
    assert_eq!(model.weight(), 0.25);
    assert!(out.curve.is_empty() && out.steps == 0 && out.best_epoch == 0);
    assert!(TrainConfig { epochs: 0, ..TrainConfig::deep_learning() }.validate().is_err());
}

#[test]
fn same_seed_same_bits() {
    let station = synthetic_station(&SyntheticConfig::new("NL-Loo", 400));
    let (c, _) = clean(&station, &CleanConfig::default()).unwrap();
    let r = chronological_split(&c, &SplitSpec::default()).unwrap();
    let st = compute_stats(&c, r.train.clone()).unwrap();
    let n = Arc::new(normalize(&c, &st).unwrap());
    let w = make_windows(&n, r.train.clone(), 16, 8, 4).unwrap();
    for kind in [ModelKind::Informer, ModelKind::Lstm] {
        let spec = ModelSpec::tiny(kind, 7, 16, 8);
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::for_kind(kind) }.with_seed(5);
        let run = || {
            let mut m = soilcast::models::build_model(&spec, 5).unwrap();
            train(&mut m, &w, None, &cfg).unwrap();
            soilcast::nn::encode_checkpoint(&m.params, "")
        };
        assert_eq!(run(), run(), "{kind}");
        let other = {
            let mut m = soilcast::models::build_model(&spec, 5).unwrap();
            train(&mut m, &w, None, &cfg.clone().with_seed(6)).unwrap();
            soilcast::nn::encode_checkpoint(&m.params, "")
        };
        assert_ne!(run(), other, "{kind}");
    }
}

#[test]
fn divergence_keeps_last_good_parameters() {
    let s = series_from(vec![1e200; 40], vec![-1e200; 40]);
    let w = make_windows(&s, 0..40, 1, 1, 1).unwrap();
    let mut model = LastValue::new(0.5, 0, 1, 1);
    let r = train(&mut model, &w, None, &TrainConfig::deep_learning());
    assert!(matches!(r, Err(Error::Diverged { epoch: 1, batch: 0 })), "{r:?}");
    assert_eq!(model.weight(), 0.5);
}

#[test]
fn best_checkpoint_has_the_lowest_validation_loss() {
    let s = doubling_series(400, 4);
    let train_w = make_windows(&s, 0..300, 1, 1, 1).unwrap();
    let val_w = make_windows(&s, 300..400, 1, 1, 1).unwrap();
    let mut model = LastValue::new(0.0, 0, 1, 1);
    let cfg = TrainConfig { learning_rate: 0.01, epochs: 6, batch_size: 32, seed: 0 };
    let out = train(&mut model, &train_w, Some(&val_w), &cfg).unwrap();
    let vals: Vec<f64> = out.curve.iter().map(|e| e.val_loss.unwrap()).collect();
    let best = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(vals[out.best_epoch - 1], best);
    let mut probe = LastValue::new(0.0, 0, 1, 1);
    probe.params = out.best_params.clone();
    assert_eq!(window_loss(&probe, &val_w).unwrap(), best);
}

fn fake_row(kind: ModelKind, station: &str, horizon: usize, rng: &mut ChaCha8Rng) -> ReportRow {
    let mse_norm = rng.random_range(0.01..1.0);
    let mae_norm = rng.random_range(0.05..1.0);
    ReportRow {
        kind,
        station: station.into(),
        horizon,
        samples: 10,
        mse_norm,
        mae_norm,
        mse_phys: mse_norm * 20.0,
        mae_phys: mae_norm * 4.0,
        wall_seconds: 0.0,
    }
}

#[test]
fn full_report_layout_and_best_flags() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut report = MetricsReport::default();
    for s in STATIONS {
        for kind in ModelKind::ALL {
            for h in soilcast::models::HORIZONS {
                report.rows.push(fake_row(kind, s, h, &mut rng));
            }
        }
    }
    assert_eq!(report.rows.len(), 168);
    let flags = report.best_flags(Scale::Normalized);
    // independent argmin over kinds
    let mut want = std::collections::BTreeSet::new();
    for s in STATIONS {
        for h in soilcast::models::HORIZONS {
            for (metric, get) in [(Metric::Mse, (|r: &ReportRow| r.mse_norm) as fn(&ReportRow) -> f64), (Metric::Mae, |r| r.mae_norm)] {
                let mut best: Option<(f64, ModelKind)> = None;
                for r in report.rows.iter().filter(|r| r.station == s && r.horizon == h) {
                    if best.is_none_or(|(v, _)| get(r) < v) {
                        best = Some((get(r), r.kind));
                    }
                }
                want.insert((best.unwrap().1, s.to_string(), h, metric));
            }
        }
    }
    assert_eq!(flags, want);

    let text = report.render(Scale::Normalized);
    let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
    assert_eq!(lines.len(), 2 * 3 + 2 * 2 + 5 * 2);
    assert!(lines[0].starts_with("Evaluation of conventional"));
    assert!(lines[1].starts_with("Methods") && STATIONS.iter().all(|s| lines[1].contains(s)));
    assert_eq!(lines[2].split_whitespace().count(), 24);
    assert!(lines[3].starts_with("LSTM") && lines[3].contains("MSE"));
    assert!(lines[4].trim_start().starts_with("MAE"));
    assert!(lines[7].starts_with("Evaluation of transformer"));
    assert!(lines[10].starts_with("Transformer"));
    let stars = text.matches('*').count();
    assert_eq!(stars, flags.len());
    for l in lines.iter().filter(|l| l.contains("MSE") || l.trim_start().starts_with("MAE")) {
        let cells = l.split_whitespace().filter(|c| c.chars().next().unwrap().is_ascii_digit()).count();
        assert_eq!(cells, 24, "{l}");
    }
}

#[test]
fn csv_report_has_one_row_per_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let report = MetricsReport {
        rows: vec![fake_row(ModelKind::Lstm, "NL-Loo", 96, &mut rng), fake_row(ModelKind::Cnn, "NL-Loo", 96, &mut rng)],
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.csv");
    report.write_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "kind,station,horizon,samples,mse_norm,mae_norm,mse_phys,mae_phys");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("lstm,NL-Loo,96,"));
}

fn prepared(id: &str, hours: usize) -> PreparedStation {
    let s = synthetic_station(&SyntheticConfig::new(id, hours));
    let (c, _) = clean(&s, &CleanConfig::default()).unwrap();
    let splits = chronological_split(&c, &SplitSpec::default()).unwrap();
    let stats = compute_stats(&c, splits.train.clone()).unwrap();
    PreparedStation { id: id.into(), series: Arc::new(normalize(&c, &stats).unwrap()), stats, splits }
}

#[test]
fn grid_cardinality_and_skips() {
    let stations = vec![
        StationSlot::Ready(prepared("FR-Lbr", 600)),
        StationSlot::Unavailable { id: "IT-Col".into(), reason: "no file".into() },
    ];
    let plan = GridPlan { kinds: vec![ModelKind::Lstm, ModelKind::Cnn], horizons: vec![8], stride: 8, workers: 2, seed: 3 };
    let out = run_grid(
        &stations,
        &plan,
        |kind, st, h| ModelSpec::tiny(kind, st.series.n_features(), 16, h),
        |kind| TrainConfig { epochs: 1, ..TrainConfig::for_kind(kind) },
    );
    assert_eq!(out.report.rows.len(), 2);
    assert_eq!(out.report.rows[0].kind, ModelKind::Lstm);
    assert_eq!(out.report.rows[1].kind, ModelKind::Cnn);
    assert!(out.warnings.iter().any(|w| w.contains("IT-Col")));
    for r in &out.report.rows {
        assert!(r.mae_norm * r.mae_norm <= r.mse_norm * (1.0 + 1e-12));
        let sd = out
            .cells
            .iter()
            .find(|c| c.row.kind == r.kind)
            .map(|_| match &stations[0] {
                StationSlot::Ready(p) => p.stats.target.scale(),
                _ => unreachable!(),
            })
            .unwrap();
        assert!((r.mse_phys - r.mse_norm * sd * sd).abs() <= 1e-12 * r.mse_phys);
        assert!((r.mae_phys - r.mae_norm * sd).abs() <= 1e-12 * r.mae_phys);
    }

    // a horizon longer than the test split is skipped, not fatal
    let plan = GridPlan { horizons: vec![8, 500], workers: 1, ..plan };
    let out = run_grid(
        &stations[..1],
        &plan,
        |kind, st, h| ModelSpec::tiny(kind, st.series.n_features(), 16, h),
        |kind| TrainConfig { epochs: 1, ..TrainConfig::for_kind(kind) },
    );
    assert_eq!(out.report.rows.len(), 2);
    assert_eq!(out.warnings.len(), 2);
}

#[test]
fn slope_fit_and_benchmark_rows() {
    let xs = [256.0, 512.0, 1024.0, 2048.0];
    let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
    assert!((loglog_slope(&xs, &ys) - 1.5).abs() < 1e-12);
    let rows = complexity_benchmark(&BenchKernel::ALL, &[16, 32, 64, 128, 256], 3, 8).unwrap();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.median_ms >= 0.0 && r.slope.is_finite()));
    assert!(complexity_benchmark(&BenchKernel::ALL, &[64, 32], 3, 8).is_err());
    assert!(complexity_benchmark(&BenchKernel::ALL, &[32, 64], 2, 8).is_err());
}
