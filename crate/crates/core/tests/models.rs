use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soilcast::autodiff::{grad_check_many, Tape, Var};
use soilcast::models::*;
use soilcast::{Error, Tensor};

type M = Vec<Vec<f64>>;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn sample(spec: &ModelSpec, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (random(&mut rng, spec.lookback, spec.n_inputs()), random(&mut rng, spec.horizon, TIME_FEATURES))
}

fn predict(model: &ForecastModel, hist: &Tensor, htime: &Tensor) -> Tensor {
    model.forward(&ModelInput { history: hist, horizon_time: htime }).unwrap()
}

#[test]
fn build_is_deterministic_under_seed() {
    for kind in ModelKind::ALL {
        let spec = ModelSpec::tiny(kind, 3, 16, 8);
        let a = build_model(&spec, 11).unwrap();
        let b = build_model(&spec, 11).unwrap();
        let c = build_model(&spec, 12).unwrap();
        let bits = |m: &ForecastModel| -> Vec<u64> {
            m.params.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b), "{kind}");
        assert_ne!(bits(&a), bits(&c), "{kind}");
        let (h, t) = sample(&spec, 3);
        assert_eq!(predict(&a, &h, &t), predict(&b, &h, &t), "{kind}");
    }
}

#[test]
fn invalid_specs_name_the_violation() {
    let mut spec = ModelSpec::tiny(ModelKind::Vanilla, 2, 16, 8);
    assert!(build_model(&spec, 0).is_ok());
    spec.n_heads = 3;
    match build_model(&spec, 0) {
        Err(Error::InvalidSpec(msg)) => assert!(msg.contains("divisible"), "{msg}"),
        other => panic!("expected divisibility error, got {other:?}"),
    }
    let mut spec = ModelSpec::tiny(ModelKind::Vanilla, 2, 16, 8);
    spec.label_len = 17;
    assert!(matches!(build_model(&spec, 0), Err(Error::InvalidSpec(_))));
    let spec = ModelSpec::new(ModelKind::Lstm, 2, 100);
    assert!(spec.validate().is_ok());
    assert!(spec.validate_experiment().is_err());
    for h in HORIZONS {
        assert!(ModelSpec::new(ModelKind::Cnn, 7, h).validate_experiment().is_ok());
    }
}

#[test]
fn vanilla_parameter_count_from_shapes() {
    let spec = ModelSpec::tiny(ModelKind::Vanilla, 7, 16, 8);
    let (d, f, c) = (spec.d_model, spec.d_ff, spec.n_inputs());
    let linear = |i: usize, o: usize| i * o + o;
    let attn = 4 * linear(d, d);
    let ffn = linear(d, f) + linear(f, d);
    let ln = 2 * d;
    let expected = 2 * linear(c, d) + (attn + ffn + 2 * ln) + (2 * attn + ffn + 3 * ln) + linear(d, 1);
    assert_eq!(build_model(&spec, 0).unwrap().parameter_count(), expected);
}

#[test]
fn every_kind_and_horizon_has_the_right_shape() {
    for kind in ModelKind::ALL {
        for h in HORIZONS {
            let spec = ModelSpec::tiny(kind, 2, 24, h);
            let model = build_model(&spec, 1).unwrap();
            let (hist, ht) = sample(&spec, 2);
            let out = predict(&model, &hist, &ht);
            assert_eq!(out.shape(), [h, 1], "{kind} H={h}");
            assert!(out.is_finite(), "{kind} H={h}");
        }
    }
}

#[test]
fn batched_forward_matches_single_samples() {
    for kind in ModelKind::ALL {
        let spec = ModelSpec::tiny(kind, 2, 16, 6);
        let model = build_model(&spec, 4).unwrap();
        let samples: Vec<(Tensor, Tensor)> = (0..3).map(|s| sample(&spec, s)).collect();
        let batch: Vec<ModelInput> = samples.iter().map(|(h, t)| ModelInput { history: h, horizon_time: t }).collect();
        let out = model.predict_batch(&batch).unwrap();
        assert_eq!(out.shape(), [3, 6]);
        for (b, (h, t)) in samples.iter().enumerate() {
            let single = predict(&model, h, t);
            for j in 0..6 {
                assert!((out.at(&[b, j]) - single.data()[j]).abs() < 1e-12, "{kind}");
            }
        }
    }
}

#[test]
fn wrong_window_shape_is_rejected() {
    let spec = ModelSpec::tiny(ModelKind::Cnn, 2, 16, 6);
    let model = build_model(&spec, 0).unwrap();
    let hist = Tensor::zeros(vec![15, spec.n_inputs()]);
    let ht = Tensor::zeros(vec![6, TIME_FEATURES]);
    assert!(model.forward(&ModelInput { history: &hist, horizon_time: &ht }).is_err());
}

#[test]
fn etsformer_constant_input_forecasts_the_constant() {
    let spec = ModelSpec::tiny(ModelKind::Etsformer, 3, 32, 12);
    let model = build_model(&spec, 9).unwrap();
    for c in [0.0, 0.75, -2.5] {
        let hist = Tensor::full(vec![spec.lookback, spec.n_inputs()], c);
        let ht = Tensor::full(vec![spec.horizon, TIME_FEATURES], c);
        let out = predict(&model, &hist, &ht);
        for v in out.data() {
            assert!((v - c).abs() < 1e-12, "{v} vs {c}");
        }
    }
}

#[test]
fn nan_activation_names_the_layer() {
    let spec = ModelSpec::tiny(ModelKind::Vanilla, 2, 8, 4);
    let model = build_model(&spec, 0).unwrap();
    let (mut hist, ht) = sample(&spec, 0);
    hist = Tensor::new(hist.shape().to_vec(), {
        let mut d = hist.into_data();
        d[3] = f64::NAN;
        d
    })
    .unwrap();
    match model.forward(&ModelInput { history: &hist, horizon_time: &ht }) {
        Err(Error::NonFinite { layer }) => assert_eq!(layer, "encoder.0.attention"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

// straight-line re-evaluation of a 1-layer vanilla model

fn param(model: &ForecastModel, name: &str) -> M {
    let t = model.params.by_name(name).unwrap_or_else(|| panic!("missing {name}"));
    match t.shape() {
        [n] => vec![t.data()[..*n].to_vec()],
        [r, c] => (0..*r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect(),
        s => panic!("unexpected shape {s:?}"),
    }
}

fn lin(model: &ForecastModel, name: &str, x: &M) -> M {
    let w = param(model, &format!("{name}.weight"));
    let b = &param(model, &format!("{name}.bias"))[0];
    x.iter()
        .map(|row| {
            w.iter()
                .zip(b)
                .map(|(wo, bo)| row.iter().zip(wo).map(|(a, c)| a * c).sum::<f64>() + bo)
                .collect()
        })
        .collect()
}

fn norm(model: &ForecastModel, name: &str, x: &M) -> M {
    let g = &param(model, &format!("{name}.gamma"))[0];
    let b = &param(model, &format!("{name}.beta"))[0];
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - mu) / (var + 1e-5).sqrt() * g[i] + b[i])
                .collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

fn ffn(model: &ForecastModel, name: &str, x: &M) -> M {
    let up = lin(model, &format!("{name}.up"), x);
    let act: M = up.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
    lin(model, &format!("{name}.down"), &act)
}

fn mha(model: &ForecastModel, name: &str, xq: &M, xkv: &M, heads: usize, causal: bool) -> M {
    let q = lin(model, &format!("{name}.wq"), xq);
    let k = lin(model, &format!("{name}.wk"), xkv);
    let v = lin(model, &format!("{name}.wv"), xkv);
    let dk = q[0].len() / heads;
    let mut cat = vec![vec![0.0; q[0].len()]; q.len()];
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        for i in 0..q.len() {
            let n = if causal { i + 1 } else { k.len() };
            let scores: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                cat[i][c] = (0..n).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    lin(model, &format!("{name}.wo"), &cat)
}

fn pe(len: usize, d: usize) -> M {
    (0..len)
        .map(|p| {
            (0..d)
                .map(|j| {
                    let angle = p as f64 / 10000f64.powf((j - j % 2) as f64 / d as f64);
                    if j % 2 == 0 { angle.sin() } else { angle.cos() }
                })
                .collect()
        })
        .collect()
}

fn naive_vanilla(model: &ForecastModel, hist: &Tensor, ht: &Tensor) -> Vec<f64> {
    let s = &model.spec;
    let rows = |t: &Tensor| -> M { (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect() };
    let x = rows(hist);
    let enc = add(&lin(model, "embed.encoder", &x), &pe(s.lookback, s.d_model));
    let a = mha(model, "encoder.0.attn", &enc, &enc, s.n_heads, false);
    let h = norm(model, "encoder.0.ln1", &add(&enc, &a));
    let memory = norm(model, "encoder.0.ln2", &add(&h, &ffn(model, "encoder.0.ffn", &h)));

    let mut dec_in: M = x[s.lookback - s.label_len..].to_vec();
    for t in rows(ht) {
        let mut r = vec![0.0; s.n_inputs() - TIME_FEATURES];
        r.extend(t);
        dec_in.push(r);
    }
    let g = add(&lin(model, "embed.decoder", &dec_in), &pe(dec_in.len(), s.d_model));
    let a = mha(model, "decoder.0.self_attn", &g, &g, s.n_heads, true);
    let g = norm(model, "decoder.0.ln1", &add(&g, &a));
    let c = mha(model, "decoder.0.cross", &g, &memory, s.n_heads, false);
    let g = norm(model, "decoder.0.ln2", &add(&g, &c));
    let g = norm(model, "decoder.0.ln3", &add(&g, &ffn(model, "decoder.0.ffn", &g)));
    lin(model, "head", &g[s.label_len..].to_vec()).into_iter().map(|r| r[0]).collect()
}

#[test]
fn vanilla_matches_straight_line_oracle() {
    for seed in 0..3 {
        let spec = ModelSpec::tiny(ModelKind::Vanilla, 3, 10, 5);
        let model = build_model(&spec, seed).unwrap();
        let (hist, ht) = sample(&spec, seed + 100);
        let out = predict(&model, &hist, &ht);
        let oracle = naive_vanilla(&model, &hist, &ht);
        for (a, b) in out.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn every_model_passes_parameter_grad_check() {
    for kind in ModelKind::ALL {
        let spec = ModelSpec::tiny(kind, 2, 8, 4);
        let model = build_model(&spec, 5).unwrap();
        let (hist, ht) = sample(&spec, 6);
        let weights = Tensor::new(vec![1, 4], vec![0.7, -1.1, 0.4, 1.3]).unwrap();
        let f = |tape: &mut Tape, pv: &[Var]| {
            let out = model.forward_batch(tape, pv, &[ModelInput { history: &hist, horizon_time: &ht }])?;
            let w = tape.constant(weights.clone());
            let prod = tape.mul(out, w)?;
            tape.sum_all(prod)
        };
        let err = grad_check_many(f, model.params.tensors(), 1e-5).unwrap();
        assert!(err < 1e-3, "{kind}: {err}");
    }
}

// series decomposition

fn naive_trend(x: &Tensor, kernel: usize) -> Vec<f64> {
    let (l, d) = x.dims2().unwrap();
    let half = kernel / 2;
    let mut out = vec![0.0; l * d];
    for t in 0..l {
        for c in 0..d {
            let mut window = Vec::new();
            for s in 0..kernel {
                let pos = (t + s).saturating_sub(half).min(l - 1);
                let pos = if t + s < half { 0 } else { pos };
                window.push(x.at(&[pos, c]));
            }
            out[t * d + c] = window.iter().sum::<f64>() / kernel as f64;
        }
    }
    out
}

#[test]
fn decompose_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, 12, 2);
    let (s, t) = series_decompose(&x, 1).unwrap();
    assert_eq!(t, x);
    assert!(s.data().iter().all(|v| *v == 0.0));

    let ramp = Tensor::new(vec![20, 1], (0..20).map(|i| 0.5 * i as f64 - 3.0).collect()).unwrap();
    let (_, t) = series_decompose(&ramp, 5).unwrap();
    for i in 2..18 {
        assert!((t.data()[i] - ramp.data()[i]).abs() < 1e-12);
    }

    let x = random(&mut rng, 16, 3);
    let (_, t) = series_decompose(&x, 5).unwrap();
    for (a, b) in t.data().iter().zip(naive_trend(&x, 5)) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(series_decompose(&x, 4).is_err());
    assert!(series_decompose(&x, 0).is_err());
}

proptest! {
    #[test]
    fn decomposition_adds_back_bitwise(seed in 0u64..500, l in 1usize..40, half in 0usize..6) {
        // values within one binade keep the trend on the grid of x
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::new(vec![l, 2], (0..2 * l).map(|_| rng.random_range(1.0..2.0)).collect()).unwrap();
        let (s, t) = series_decompose(&x, 2 * half + 1).unwrap();
        for i in 0..x.numel() {
            prop_assert_eq!((s.data()[i] + t.data()[i]).to_bits(), x.data()[i].to_bits());
        }
    }

    #[test]
    fn decomposition_is_close_for_any_sign(seed in 0u64..500, l in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, l, 2);
        let (s, t) = series_decompose(&x, 5).unwrap();
        for i in 0..x.numel() {
            prop_assert!((s.data()[i] + t.data()[i] - x.data()[i]).abs() <= 4.0 * f64::EPSILON);
        }
    }
}

#[test]
fn model_spec_round_trips_through_json() {
    let spec = ModelSpec::tiny(ModelKind::Informer, 7, 96, 96);
    let json = serde_json::to_string(&spec).unwrap();
    let back: ModelSpec = serde_json::from_str(&json).unwrap();
    assert_eq!(back, spec);
    assert!(serde_json::from_str::<ModelSpec>(&json.replace("\"d_ff\"", "\"dff\"")).is_err());
    assert_eq!("autoformer".parse::<ModelKind>().unwrap(), ModelKind::Autoformer);
    assert!("gru".parse::<ModelKind>().is_err());
}
