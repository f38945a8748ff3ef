use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soilcast::attention::*;
use soilcast::autodiff::{grad_check_many, Tape};
use soilcast::nn::ParamSet;
use soilcast::Tensor;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (r, _) = t.dims2().unwrap();
    (0..r).map(|i| t.row(i).to_vec()).collect()
}

/// Two-loop softmax attention with an optional allow-mask.
fn naive_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], allow: impl Fn(usize, usize) -> bool) -> Vec<Vec<f64>> {
    let dk = q[0].len() as f64;
    q.iter()
        .enumerate()
        .map(|(i, qi)| {
            let s: Vec<Option<f64>> = k
                .iter()
                .enumerate()
                .map(|(j, kj)| allow(i, j).then(|| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / dk.sqrt()))
                .collect();
            let m = s.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|x| x.map_or(0.0, |x| (x - m).exp())).collect();
            let z: f64 = e.iter().sum();
            (0..v[0].len())
                .map(|c| e.iter().zip(v).map(|(w, vr)| w / z * vr[c]).sum())
                .collect()
        })
        .collect()
}

fn max_diff(a: &[Vec<f64>], b: &Tensor) -> f64 {
    a.iter()
        .flatten()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn attend(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<Arc<Vec<bool>>>) -> Tensor {
    let mut tape = Tape::new();
    let (q, k, v) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let out = scaled_dot_attention(&mut tape, q, k, v, mask).unwrap();
    tape.value(out).clone()
}

#[test]
fn scaled_dot_matches_two_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (q, k, v) = (random(&mut rng, 3, 2), random(&mut rng, 3, 2), random(&mut rng, 3, 2));
    let out = attend(&q, &k, &v, None);
    assert!(max_diff(&naive_attention(&rows(&q), &rows(&k), &rows(&v), |_, _| true), &out) < 1e-14);
}

#[test]
fn single_key_and_identical_keys() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = random(&mut rng, 4, 3);
    let k = random(&mut rng, 1, 3);
    let v = random(&mut rng, 1, 2);
    let out = attend(&q, &k, &v, None);
    for i in 0..4 {
        assert_eq!(out.row(i), v.row(0));
    }
    let k = Tensor::from_rows(&vec![vec![0.3, -0.2, 0.5]; 5]).unwrap();
    let v = random(&mut rng, 5, 2);
    let out = attend(&q, &k, &v, None);
    for c in 0..2 {
        let mean = (0..5).map(|j| v.row(j)[c]).sum::<f64>() / 5.0;
        assert!((out.row(0)[c] - mean).abs() < 1e-15);
    }
}

#[test]
fn fully_masked_row_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (q, k, v) = (random(&mut rng, 2, 2), random(&mut rng, 2, 2), random(&mut rng, 2, 2));
    let mut tape = Tape::new();
    let (q, k, v) = (tape.constant(q), tape.constant(k), tape.constant(v));
    let mask = Arc::new(vec![true, false, false, false]);
    assert!(scaled_dot_attention(&mut tape, q, k, v, Some(mask)).is_err());
}

fn set_identity(params: &mut ParamSet, layer: &MultiHeadAttention) {
    for lin in [&layer.wq, &layer.wk, &layer.wv, &layer.wo] {
        params.set(lin.weight, Tensor::identity(lin.in_dim)).unwrap();
        params.set(lin.bias, Tensor::zeros(vec![lin.out_dim])).unwrap();
    }
}

#[test]
fn single_head_identity_reduces_to_scaled_dot() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params = ParamSet::new();
    let cfg = AttentionConfig::new(4, 1, false).unwrap();
    let layer = MultiHeadAttention::new(&mut params, &mut rng, "mha", cfg, AttentionKernel::Full).unwrap();
    set_identity(&mut params, &layer);
    let (xq, xkv) = (random(&mut rng, 5, 4), random(&mut rng, 6, 4));
    let mut tape = Tape::new();
    let pv = params.bind(&mut tape);
    let (a, b) = (tape.constant(xq.clone()), tape.constant(xkv.clone()));
    let out = layer.forward(&mut tape, &pv, a, b).unwrap();
    let direct = attend(&xq, &xkv, &xkv, None);
    assert!(tape.value(out).max_abs_diff(&direct) < 1e-12);
}

#[test]
fn two_heads_match_per_head_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = ParamSet::new();
    let cfg = AttentionConfig::new(4, 2, false).unwrap();
    let layer = MultiHeadAttention::new(&mut params, &mut rng, "mha", cfg, AttentionKernel::Full).unwrap();
    let (xq, xkv) = (random(&mut rng, 3, 4), random(&mut rng, 5, 4));
    let mut tape = Tape::new();
    let pv = params.bind(&mut tape);
    let (a, b) = (tape.constant(xq.clone()), tape.constant(xkv.clone()));
    let out = layer.forward(&mut tape, &pv, a, b).unwrap();

    let project = |x: &Tensor, lin: &soilcast::nn::Linear| -> Vec<Vec<f64>> {
        let w = params.get(lin.weight);
        let bias = params.get(lin.bias).data();
        rows(x)
            .iter()
            .map(|r| (0..lin.out_dim).map(|o| bias[o] + r.iter().zip(w.row(o)).map(|(a, b)| a * b).sum::<f64>()).collect())
            .collect()
    };
    let (q, k, v) = (project(&xq, &layer.wq), project(&xkv, &layer.wk), project(&xkv, &layer.wv));
    let slice = |m: &[Vec<f64>], h: usize| -> Vec<Vec<f64>> { m.iter().map(|r| r[h * 2..h * 2 + 2].to_vec()).collect() };
    let h0 = naive_attention(&slice(&q, 0), &slice(&k, 0), &slice(&v, 0), |_, _| true);
    let h1 = naive_attention(&slice(&q, 1), &slice(&k, 1), &slice(&v, 1), |_, _| true);
    let cat: Vec<Vec<f64>> = h0.iter().zip(&h1).map(|(a, b)| [a.clone(), b.clone()].concat()).collect();
    let cat = Tensor::from_rows(&cat).unwrap();
    let expected = project(&cat, &layer.wo);
    assert!(max_diff(&expected, tape.value(out)) < 1e-13);
}

#[test]
fn causal_output_ignores_future_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut params = ParamSet::new();
    let cfg = AttentionConfig::new(4, 2, true).unwrap();
    let layer = MultiHeadAttention::new(&mut params, &mut rng, "mha", cfg, AttentionKernel::Full).unwrap();
    let x = random(&mut rng, 6, 4);
    let mut y = x.clone();
    let run = |x: &Tensor| {
        let mut tape = Tape::new();
        let pv = params.bind(&mut tape);
        let a = tape.constant(x.clone());
        let out = layer.forward(&mut tape, &pv, a, a).unwrap();
        tape.value(out).clone()
    };
    let base = run(&x);
    let mut rows_y = rows(&y);
    for r in rows_y.iter_mut().skip(3) {
        r.iter_mut().for_each(|v| *v += 10.0);
    }
    y = Tensor::from_rows(&rows_y).unwrap();
    let pert = run(&y);
    for t in 0..3 {
        assert_eq!(base.row(t), pert.row(t));
    }
    assert_ne!(base.row(5), pert.row(5));
}

#[test]
fn config_rejects_indivisible_heads() {
    assert!(AttentionConfig::new(6, 4, false).is_err());
}

#[test]
fn sparsity_measurement_examples() {
    let k = Tensor::from_rows(&vec![vec![1.0, 2.0]; 4]).unwrap();
    assert_eq!(sparsity_measurement(&[0.3, -0.7], &k).unwrap(), 0.0);
    // q·k/√1 = 0 and 2
    let k = Tensor::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
    assert_eq!(sparsity_measurement(&[1.0], &k).unwrap(), 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let q: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k = random(&mut rng, 8, 3);
    let scores: Vec<f64> = rows(&k).iter().map(|kj| q.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / 3f64.sqrt()).collect();
    let expected = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - scores.iter().sum::<f64>() / 8.0;
    assert!((sparsity_measurement(&q, &k).unwrap() - expected).abs() < 1e-15);
}

fn prob_sparse(q: &Tensor, k: &Tensor, v: &Tensor, cfg: &ProbSparseConfig, causal: bool) -> Tensor {
    let mut tape = Tape::new();
    let (q, k, v) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let out = prob_sparse_attention(&mut tape, q, k, v, cfg, causal).unwrap();
    tape.value(out).clone()
}

#[test]
fn prob_sparse_degenerates_to_full() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (q, k, v) = (random(&mut rng, 10, 4), random(&mut rng, 10, 4), random(&mut rng, 10, 3));
    let cfg = ProbSparseConfig { factor: 100.0, seed: 1, sample_all_keys: false };
    let out = prob_sparse(&q, &k, &v, &cfg, false);
    assert!(out.max_abs_diff(&attend(&q, &k, &v, None)) < 1e-10);
    let out = prob_sparse(&q, &k, &v, &cfg, true);
    assert!(out.max_abs_diff(&attend(&q, &k, &v, Some(causal_mask(10, 10)))) < 1e-10);

    let q1 = random(&mut rng, 1, 4);
    let small = ProbSparseConfig { factor: 1.0, ..cfg };
    assert!(prob_sparse(&q1, &k, &v, &small, false).max_abs_diff(&attend(&q1, &k, &v, None)) < 1e-12);
}

#[test]
fn prob_sparse_selection_matches_exhaustive_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (q, k) = (random(&mut rng, 16, 4), random(&mut rng, 16, 4));
    let cfg = ProbSparseConfig { factor: 1.0, seed: 3, sample_all_keys: true };
    let sel = prob_sparse_select(&q, &k, &cfg).unwrap();
    let u = (16f64.ln()).ceil() as usize;
    let m: Vec<f64> = rows(&q)
        .iter()
        .map(|qi| {
            let s: Vec<f64> = rows(&k).iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / 2.0).collect();
            s.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - s.iter().sum::<f64>() / 16.0
        })
        .collect();
    let mut idx: Vec<usize> = (0..16).collect();
    idx.sort_by(|&a, &b| m[b].partial_cmp(&m[a]).unwrap().then(a.cmp(&b)));
    let mut expected = idx[..u].to_vec();
    expected.sort_unstable();
    assert_eq!(sel.top_queries, expected);
}

#[test]
fn prob_sparse_fallback_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (q, k, v) = (random(&mut rng, 12, 2), random(&mut rng, 12, 2), random(&mut rng, 12, 2));
    let cfg = ProbSparseConfig { factor: 1.0, seed: 4, sample_all_keys: false };
    let sel = prob_sparse_select(&q, &k, &cfg).unwrap();
    for causal in [false, true] {
        let out = prob_sparse(&q, &k, &v, &cfg, causal);
        for t in (0..12).filter(|t| !sel.top_queries.contains(t)) {
            let n = if causal { t + 1 } else { 12 };
            for c in 0..2 {
                let mean = (0..n).map(|j| v.row(j)[c]).sum::<f64>() / n as f64;
                assert!((out.row(t)[c] - mean).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn lsh_hash_symmetries() {
    let cfg = LshConfig { n_buckets: 2, n_rounds: 5, chunk_len: 4, seed: 11 };
    let x = Tensor::from_rows(&[vec![0.3, -1.2, 0.5], vec![0.3, -1.2, 0.5], vec![-0.3, 1.2, -0.5]]).unwrap();
    let b = lsh_hash(&x, &cfg).unwrap();
    assert_eq!(b.len(), 5);
    for round in &b {
        assert_eq!(round[0], round[1]);
        assert_ne!(round[0], round[2]);
    }
    assert_eq!(b, lsh_hash(&x, &cfg).unwrap());
    assert!(lsh_hash(&x, &LshConfig { n_buckets: 3, ..cfg }).is_err());
}

#[test]
fn lsh_similar_vectors_collide_more_often() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let base: Vec<Vec<f64>> = (0..4).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut set = Vec::new();
    for b in &base {
        set.push(b.clone());
        set.push(b.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect());
    }
    let x = Tensor::from_rows(&set).unwrap();
    let cfg = LshConfig { n_buckets: 8, n_rounds: 100, chunk_len: 4, seed: 13 };
    let b = lsh_hash(&x, &cfg).unwrap();
    let collisions = |i: usize, j: usize| b.iter().filter(|r| r[i] == r[j]).count();
    let cos = |i: usize, j: usize| {
        let d: f64 = set[i].iter().zip(&set[j]).map(|(a, b)| a * b).sum();
        let n = |v: &Vec<f64>| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        d / (n(&set[i]) * n(&set[j]))
    };
    let mut similar = Vec::new();
    let mut dissimilar = Vec::new();
    for i in 0..8 {
        for j in i + 1..8 {
            if cos(i, j) > 0.95 {
                similar.push(collisions(i, j));
            } else if cos(i, j) < 0.3 {
                dissimilar.push(collisions(i, j));
            }
        }
    }
    let avg = |v: &[usize]| v.iter().sum::<usize>() as f64 / v.len() as f64;
    assert!(!similar.is_empty() && !dissimilar.is_empty());
    assert!(avg(&similar) > avg(&dissimilar) + 30.0, "{similar:?} vs {dissimilar:?}");
}

fn normalized(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let n = (r.iter().map(|v| v * v).sum::<f64>() + KEY_NORM_EPS).sqrt();
            r.iter().map(|v| v / n).collect()
        })
        .collect()
}

/// Dense reference: full L×L scores with bucket/chunk/causal/self masks,
/// per-round softmax and logsumexp-weighted round merge.
fn dense_lsh(qk: &Tensor, v: &Tensor, buckets: &[Vec<usize>], chunk: usize, causal: bool) -> Vec<Vec<f64>> {
    let (l, d) = qk.dims2().unwrap();
    let q = rows(qk);
    let k = normalized(&q);
    let v = rows(v);
    let mut outs = Vec::new();
    let mut lses = Vec::new();
    for b in buckets {
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by_key(|&i| (b[i], i));
        let mut slot = vec![0; l];
        for (s, &p) in order.iter().enumerate() {
            slot[p] = s;
        }
        let allowed = |i: usize, j: usize| {
            let (ci, cj) = (slot[i] / chunk, slot[j] / chunk);
            b[i] == b[j] && (cj == ci || cj + 1 == ci) && !(causal && j > i)
        };
        let mut out = vec![vec![0.0; v[0].len()]; l];
        let mut lse = vec![0.0; l];
        for i in 0..l {
            let mut targets: Vec<usize> = (0..l).filter(|&j| j != i && allowed(i, j)).collect();
            if targets.is_empty() {
                targets.push(i);
            }
            let s: Vec<f64> = targets
                .iter()
                .map(|&j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|x| (x - m).exp()).sum();
            lse[i] = m + z.ln();
            for (w, &j) in s.iter().zip(&targets) {
                for c in 0..v[0].len() {
                    out[i][c] += (w - m).exp() / z * v[j][c];
                }
            }
        }
        outs.push(out);
        lses.push(lse);
    }
    if outs.len() == 1 {
        return outs.pop().unwrap();
    }
    (0..l)
        .map(|i| {
            let m = lses.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = lses.iter().map(|r| (r[i] - m).exp()).sum();
            (0..v[0].len())
                .map(|c| outs.iter().zip(&lses).map(|(o, r)| (r[i] - m).exp() / z * o[i][c]).sum())
                .collect()
        })
        .collect()
}

fn lsh_bucketed(qk: &Tensor, v: &Tensor, buckets: &[Vec<usize>], chunk: usize, causal: bool) -> Tensor {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(qk.clone()), tape.constant(v.clone()));
    let out = lsh_attention_bucketed(&mut tape, a, b, buckets, chunk, causal).unwrap();
    tape.value(out).clone()
}

#[test]
fn lsh_single_bucket_equals_dense_shared_qk() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (qk, v) = (random(&mut rng, 7, 3), random(&mut rng, 7, 2));
    let buckets = vec![vec![0; 7]];
    for causal in [false, true] {
        let out = lsh_bucketed(&qk, &v, &buckets, 7, causal);
        let q = rows(&qk);
        let k = normalized(&q);
        let oracle = naive_attention(&q, &k, &rows(&v), |i, j| {
            if causal && j > i {
                return false;
            }
            j != i || (causal && i == 0)
        });
        assert!(max_diff(&oracle, &out) < 1e-10);
    }
}

#[test]
fn lsh_singleton_returns_own_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut params = ParamSet::new();
    let cfg = LshConfig { n_buckets: 4, n_rounds: 2, chunk_len: 3, seed: 1 };
    let layer = LshAttention::new(&mut params, &mut rng, "lsh", 3, cfg.clone()).unwrap();
    let (qk, v) = (random(&mut rng, 1, 3), random(&mut rng, 1, 3));
    let out = lsh_bucketed(&qk, &v, &[vec![0], vec![1]], 3, false);
    assert!(out.max_abs_diff(&v) < 1e-15);
    let mut tape = Tape::new();
    let pv = params.bind(&mut tape);
    let x = tape.constant(qk);
    let y = layer.forward(&mut tape, &pv, x, true).unwrap();
    assert_eq!(tape.shape(y), &[1, 3]);
}

#[test]
fn lsh_matches_masked_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (qk, v) = (random(&mut rng, 8, 4), random(&mut rng, 8, 3));
    let cfg = LshConfig { n_buckets: 4, n_rounds: 2, chunk_len: 3, seed: 17 };
    let buckets = lsh_hash(&qk, &cfg).unwrap();
    for causal in [false, true] {
        let out = lsh_bucketed(&qk, &v, &buckets, cfg.chunk_len, causal);
        assert!(max_diff(&dense_lsh(&qk, &v, &buckets, cfg.chunk_len, causal), &out) < 1e-12);
    }
}

fn naive_lag(q: &Tensor, k: &Tensor) -> Vec<f64> {
    let (l, d) = q.dims2().unwrap();
    (0..l)
        .map(|tau| {
            let mut s = 0.0;
            for t in 0..l {
                for c in 0..d {
                    s += q.row(t)[c] * k.row((t + l - tau) % l)[c];
                }
            }
            s / (l * d) as f64
        })
        .collect()
}

#[test]
fn lag_correlation_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for l in [32, 24] {
        let (q, k) = (random(&mut rng, l, 3), random(&mut rng, l, 3));
        let fast = lag_correlation(&q, &k).unwrap();
        for (a, b) in fast.iter().zip(naive_lag(&q, &k)) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn auto_correlation_picks_period() {
    let sine: Vec<f64> = (0..64).map(|t| (2.0 * PI * t as f64 / 8.0).sin()).collect();
    let x = Tensor::new(vec![64, 1], sine).unwrap();
    let r = naive_lag(&x, &x);
    let best = select_delays(&r, 1, false)[0];
    assert!(best.is_multiple_of(8));
    assert_eq!(select_delays(&lag_correlation(&x, &x).unwrap(), 1, false), vec![0]);
    assert_eq!(select_delays(&lag_correlation(&x, &x).unwrap(), 1, true), vec![8]);
}

#[test]
fn auto_correlation_constant_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let (q, k) = (random(&mut rng, 16, 2), random(&mut rng, 16, 2));
    let v = Tensor::from_rows(&vec![vec![0.7, -1.5]; 16]).unwrap();
    let mut tape = Tape::new();
    let (a, b, c) = (tape.constant(q), tape.constant(k), tape.constant(v.clone()));
    let cfg = AutoCorrelationConfig { c_factor: 2.0, exclude_zero_lag: false };
    let out = auto_correlation_attention(&mut tape, a, b, c, &cfg).unwrap();
    assert!(tape.value(out).max_abs_diff(&v) < 1e-14);
}

#[test]
fn esa_examples() {
    let w = esa_weights(0.37, 6).unwrap();
    for t in 0..6 {
        assert!((w.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert!(esa_weights(1.0, 3).is_err());
    assert!(esa_weights(0.0, 3).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let v = random(&mut rng, 5, 2);
    let init = random(&mut rng, 1, 2);
    let run = |alpha: f64, v: &Tensor, init: &Tensor| {
        let mut tape = Tape::new();
        let (a, vv, i) = (tape.constant(Tensor::scalar(alpha)), tape.constant(v.clone()), tape.constant(init.clone()));
        let out = exponential_smoothing_attention(&mut tape, vv, a, i).unwrap();
        tape.value(out).clone()
    };
    let out = run(0.3, &v, &init);
    let mut s = init.row(0).to_vec();
    for t in 0..5 {
        for c in 0..2 {
            s[c] = 0.3 * v.row(t)[c] + 0.7 * s[c];
            assert!((out.row(t)[c] - s[c]).abs() < 1e-14);
        }
    }
    assert!(run(1.0 - 1e-12, &v, &init).max_abs_diff(&v) < 1e-10);
    let flat = Tensor::from_rows(&vec![vec![0.4, -0.9]; 5]).unwrap();
    let one = Tensor::from_rows(&[vec![0.4, -0.9]]).unwrap();
    assert!(run(0.6, &flat, &one).max_abs_diff(&flat) < 1e-15);
}

fn fa(x: &Tensor, top_k: usize, h: usize) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (a, b) = frequency_attention(&mut tape, xv, top_k, h).unwrap();
    (tape.value(a).clone(), tape.value(b).clone())
}

#[test]
fn frequency_attention_single_tone() {
    let f = |t: usize| (2.0 * PI * t as f64 / 8.0).sin() * 1.3 + (2.0 * PI * t as f64 / 8.0).cos() * 0.2;
    let x = Tensor::new(vec![32, 1], (0..32).map(f).collect()).unwrap();
    let (sin, sout) = fa(&x, 1, 12);
    assert!(sin.max_abs_diff(&x) < 1e-9);
    for h in 0..12 {
        assert!((sout.data()[h] - f(32 + h)).abs() < 1e-9);
    }
    let c = Tensor::full(vec![16, 2], 3.5);
    let (sin, _) = fa(&c, 2, 3);
    assert!(sin.data().iter().all(|v| v.abs() < 1e-12));
    assert!(frequency_select(&c, 9).is_err());
    assert!(frequency_select(&c, 0).is_err());
}

#[test]
fn frequency_attention_keeps_louder_tone() {
    let l = 40;
    let f = |t: usize| 2.0 * (2.0 * PI * 3.0 * t as f64 / l as f64).cos() + 0.5 * (2.0 * PI * 7.0 * t as f64 / l as f64).sin();
    let x = Tensor::new(vec![l, 1], (0..l).map(f).collect()).unwrap();
    // naive DFT amplitudes
    let amp = |k: usize| {
        let (mut re, mut im) = (0.0, 0.0);
        for t in 0..l {
            let a = -2.0 * PI * (k * t) as f64 / l as f64;
            re += x.data()[t] * a.cos();
            im += x.data()[t] * a.sin();
        }
        (re * re + im * im).sqrt()
    };
    let best = (1..=l / 2).max_by(|&a, &b| amp(a).partial_cmp(&amp(b)).unwrap().then(b.cmp(&a))).unwrap();
    assert_eq!(frequency_select(&x, 1).unwrap(), vec![vec![best]]);
    assert_eq!(best, 3);
    let (sin, _) = fa(&x, 1, 1);
    for t in 0..l {
        let tone = 2.0 * (2.0 * PI * 3.0 * t as f64 / l as f64).cos();
        assert!((sin.data()[t] - tone).abs() < 1e-9);
    }
    let (sin, _) = fa(&x, 2, 1);
    assert!(sin.max_abs_diff(&x) < 1e-9);
}

fn hw_oracle(x: &[f64], a: f64, b: f64, g: f64, p: usize, h: usize, e0: f64, b0: f64, s0: &[f64]) -> f64 {
    // s[i] holds s_{i - p} for i in 0..p, then s_1, s_2, ...
    let mut s: Vec<f64> = s0.to_vec();
    let mut e = vec![e0];
    let mut bb = vec![b0];
    for (i, &xt) in x.iter().enumerate() {
        let t = i + 1;
        let st_p = s[t - 1];
        let et = a * (xt - st_p) + (1.0 - a) * (e[t - 1] + bb[t - 1]);
        let bt = b * (et - e[t - 1]) + (1.0 - b) * bb[t - 1];
        let snew = g * (xt - e[t - 1]) + (1.0 - g) * st_p;
        e.push(et);
        bb.push(bt);
        s.push(snew);
    }
    let tt = x.len();
    let k = (h - 1) / p + 1;
    e[tt] + h as f64 * bb[tt] + s[tt + h - p * k + p - 1]
}

#[test]
fn holt_winters_examples() {
    let init = HoltWintersInit { level: 2.5, growth: 0.0, seasonal: vec![0.0; 4] };
    for h in 1..10 {
        assert!((holt_winters_forecast(&[2.5; 12], 0.4, 0.3, 0.2, 4, h, &init).unwrap() - 2.5).abs() < 1e-12);
    }
    let x: Vec<f64> = (0..10).map(|t| (t as f64 * 1.3).sin() * 3.0).collect();
    let lim = HoltWintersInit { level: 0.0, growth: 0.25, seasonal: vec![0.0; 4] };
    let f = holt_winters_forecast(&x, 1.0 - 1e-12, 1e-12, 1e-12, 4, 3, &lim).unwrap();
    assert!((f - (x[9] + 3.0 * 0.25)).abs() < 1e-9);
    assert!(holt_winters_forecast(&x[..3], 0.5, 0.5, 0.5, 4, 1, &lim).is_err());
    assert!(holt_winters_forecast(&x, 1.0, 0.5, 0.5, 4, 1, &lim).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
    let s0: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
    let init = HoltWintersInit { level: 0.1, growth: -0.05, seasonal: s0.clone() };
    for h in 1..=9 {
        let got = holt_winters_forecast(&x, 0.5, 0.3, 0.2, 4, h, &init).unwrap();
        let want = hw_oracle(&x, 0.5, 0.3, 0.2, 4, h, 0.1, -0.05, &s0);
        assert!((got - want).abs() < 1e-12, "h={h}: {got} vs {want}");
    }
}

fn gc(f: impl Fn(&mut Tape, &[soilcast::autodiff::Var]) -> soilcast::Result<soilcast::autodiff::Var>, xs: &[Tensor]) -> f64 {
    grad_check_many(f, xs, 1e-6).unwrap()
}

// weighted sum so every output entry matters to the gradient
fn weighted(tape: &mut Tape, y: soilcast::autodiff::Var) -> soilcast::Result<soilcast::autodiff::Var> {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = tape.constant(Tensor::new(shape, (0..n).map(|i| ((i * 7 % 5) as f64 - 1.7) * 0.3).collect()).unwrap());
    let p = tape.mul(y, w)?;
    tape.sum_all(p)
}

#[test]
fn kernels_pass_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (q, k, v) = (random(&mut rng, 4, 2), random(&mut rng, 4, 2), random(&mut rng, 4, 2));
    let xs = [q.clone(), k.clone(), v.clone()];

    let full = gc(|t, x| { let y = scaled_dot_attention(t, x[0], x[1], x[2], Some(causal_mask(4, 4)))?; weighted(t, y) }, &xs);
    assert!(full < 1e-4, "full {full}");

    let (q8, k8, v8) = (random(&mut rng, 8, 3), random(&mut rng, 8, 3), random(&mut rng, 8, 3));
    let cfg = ProbSparseConfig { factor: 1.0, seed: 5, sample_all_keys: false };
    let sel = prob_sparse_select(&q8, &k8, &cfg).unwrap();
    for causal in [false, true] {
        let e = gc(|t, x| { let y = prob_sparse_with_selection(t, x[0], x[1], x[2], &sel, causal)?; weighted(t, y) }, &[q8.clone(), k8.clone(), v8.clone()]);
        assert!(e < 1e-4, "prob_sparse {e}");
    }

    let lcfg = LshConfig { n_buckets: 2, n_rounds: 2, chunk_len: 3, seed: 9 };
    let buckets = lsh_hash(&q8, &lcfg).unwrap();
    let e = gc(|t, x| { let y = lsh_attention_bucketed(t, x[0], x[1], &buckets, 3, true)?; weighted(t, y) }, &[q8.clone(), v8.clone()]);
    assert!(e < 1e-4, "lsh {e}");

    let delays = select_delays(&lag_correlation(&q8, &k8).unwrap(), 2, false);
    let e = gc(|t, x| { let y = auto_correlation_with_delays(t, x[0], x[1], x[2], &delays)?; weighted(t, y) }, &[q8.clone(), k8.clone(), v8.clone()]);
    assert!(e < 1e-4, "autocorr {e}");

    let e = gc(
        |t, x| {
            let y = exponential_smoothing_attention(t, x[1], x[0], x[2])?;
            weighted(t, y)
        },
        &[Tensor::scalar(0.35), v.clone(), random(&mut rng, 1, 2)],
    );
    assert!(e < 1e-4, "esa {e}");

    let bins = frequency_select(&v8, 2).unwrap();
    let e = gc(
        |t, x| {
            let (a, b) = frequency_attention_with_bins(t, x[0], bins.clone(), 3)?;
            let both = t.concat(&[a, b], 0)?;
            weighted(t, both)
        },
        std::slice::from_ref(&v8),
    );
    assert!(e < 1e-4, "fa {e}");

    let mut params = ParamSet::new();
    let ac = AutoCorrelationLayer::new(&mut params, &mut rng, "ac", 3, AutoCorrelationConfig::default()).unwrap();
    assert_eq!(params.len(), 8);
    let _ = ac;
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn full_attention_invariant_under_joint_kv_permutation(seed in 0u64..1000, shift in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (q, k, v) = (random(&mut rng, 3, 2), random(&mut rng, 5, 2), random(&mut rng, 5, 2));
        let perm: Vec<usize> = (0..5).map(|i| (i + shift) % 5).collect();
        let pk = Tensor::from_rows(&perm.iter().map(|&i| k.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let pvv = Tensor::from_rows(&perm.iter().map(|&i| v.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let base = attend(&q, &k, &v, None);
        prop_assert!(base.max_abs_diff(&attend(&q, &pk, &pvv, None)) < 1e-12);
        prop_assert!(base.max_abs_diff(&attend(&q, &k, &pvv, None)) > 1e-9);
    }

    #[test]
    fn prob_sparse_selects_at_most_u(seed in 0u64..1000, lq in 1usize..40, c in 0.2f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (q, k) = (random(&mut rng, lq, 3), random(&mut rng, 17, 3));
        let cfg = ProbSparseConfig { factor: c, seed, sample_all_keys: false };
        let sel = prob_sparse_select(&q, &k, &cfg).unwrap();
        let bound = ((c * (lq as f64).ln()).ceil().max(1.0) as usize).min(lq);
        prop_assert!(sel.top_queries.len() <= bound);
        prop_assert!(sel.key_sample.len() <= 17);
    }

    #[test]
    fn lsh_hash_is_deterministic(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, 9, 4);
        let cfg = LshConfig { n_buckets: 6, n_rounds: 3, chunk_len: 2, seed };
        let a = lsh_hash(&x, &cfg).unwrap();
        prop_assert_eq!(&a, &lsh_hash(&x, &cfg).unwrap());
        prop_assert!(a.iter().flatten().all(|&b| b < 6));
    }

    #[test]
    fn lag_correlation_fft_equals_naive(seed in 0u64..1000, l in 2usize..20, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (q, k) = (random(&mut rng, l, d), random(&mut rng, l, d));
        for (a, b) in lag_correlation(&q, &k).unwrap().iter().zip(naive_lag(&q, &k)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn delay_weights_form_distribution(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (q, k) = (random(&mut rng, 12, 2), random(&mut rng, 12, 2));
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(q), tape.constant(k));
        let v = tape.constant(Tensor::ones(vec![12, 1]));
        let out = auto_correlation_attention(&mut tape, a, b, v, &AutoCorrelationConfig { c_factor: 1.5, exclude_zero_lag: false }).unwrap();
        prop_assert!(tape.value(out).data().iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn esa_rows_sum_to_one(alpha in 0.001f64..0.999, l in 1usize..40) {
        let w = esa_weights(alpha, l).unwrap();
        for t in 0..l {
            prop_assert!(w.row(t).iter().all(|&x| x >= 0.0));
            prop_assert!((w.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frequency_attention_exact_on_integer_tones(
        seed in 0u64..1000,
        l in 8usize..48,
        n_tones in 1usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let top_k = n_tones + 1;
        prop_assume!(top_k <= l / 2);
        let mut bins: Vec<usize> = Vec::new();
        while bins.len() < n_tones {
            let b = rng.random_range(1..l.div_ceil(2));
            if !bins.contains(&b) { bins.push(b); }
        }
        let tones: Vec<(usize, f64, f64)> = bins.iter().map(|&b| (b, rng.random_range(0.5..2.0), rng.random_range(0.0..2.0 * PI))).collect();
        let f = |t: usize| tones.iter().map(|&(b, a, ph)| a * (2.0 * PI * b as f64 * t as f64 / l as f64 + ph).cos()).sum::<f64>();
        let x = Tensor::new(vec![l, 1], (0..l).map(f).collect()).unwrap();
        let (sin, sout) = fa(&x, top_k, 10);
        prop_assert!(sin.max_abs_diff(&x) < 1e-9);
        for h in 0..10 {
            prop_assert!((sout.data()[h] - f(l + h)).abs() < 1e-6);
        }
    }
}
