//! Seeded invariant suites: finite-difference gradient checks over every
//! differentiable op and attention kernel, and reversible-stack round trips.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::*;
use crate::autodiff::{grad_check_many, Activation, Tape, Var};
use crate::error::Result;
use crate::models::{build_model, ModelInput, ModelKind, ModelSpec, SeriesDecompose, FeedForwardBranch, TIME_FEATURES};
use crate::nn::{layer_norm, FeedForward, LayerNorm, LstmCell, ParamSet};
use crate::reversible::{rev_backward, rev_forward, rev_inverse, rev_stack_on_tape, RevBlock, RevStack};
use crate::tensor::Tensor;

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    /// Largest error seen across instances.
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

type Case = fn(&mut ChaCha8Rng) -> Result<f64>;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn m(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    rand_t(rng, &[r, c], -1.0, 1.0)
}

/// Values with `|x| ≥ 0.1`, away from kinks at zero.
fn off_zero(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    let t = m(rng, r, c);
    t.map(|x| x.signum() * (0.1 + x.abs()))
}

/// Fixed-weight sum so every output entry reaches the gradient.
fn weighted(tape: &mut Tape, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| ((i * 7 % 5) as f64 - 1.7) * 0.3).collect())?;
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum_all(p)
}

fn gc(f: impl Fn(&mut Tape, &[Var]) -> Result<Var>, xs: &[Tensor]) -> Result<f64> {
    grad_check_many(
        |t, x| {
            let y = f(t, x)?;
            weighted(t, y)
        },
        xs,
        GRAD_EPS,
    )
}

fn random_mask(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Arc<Vec<bool>> {
    let mut mask: Vec<bool> = (0..r * c).map(|_| rng.random_bool(0.6)).collect();
    for i in 0..r {
        mask[i * c + rng.random_range(0..c)] = true;
    }
    Arc::new(mask)
}

fn op_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("matmul", |r| gc(|t, x| t.matmul(x[0], x[1]), &[m(r, 3, 4), m(r, 4, 2)])),
        ("matmul_bt", |r| gc(|t, x| t.matmul_bt(x[0], x[1]), &[m(r, 3, 4), m(r, 2, 4)])),
        ("transpose", |r| gc(|t, x| t.transpose(x[0]), &[m(r, 3, 4)])),
        ("add_broadcast", |r| gc(|t, x| t.add(x[0], x[1]), &[m(r, 3, 4), m(r, 1, 4)])),
        ("sub_broadcast", |r| gc(|t, x| t.sub(x[0], x[1]), &[m(r, 3, 4), m(r, 3, 1)])),
        ("mul_broadcast", |r| gc(|t, x| t.mul(x[0], x[1]), &[m(r, 3, 4), m(r, 1, 4)])),
        ("div", |r| gc(|t, x| t.div(x[0], x[1]), &[m(r, 3, 4), rand_t(r, &[3, 4], 0.5, 1.5)])),
        ("neg", |r| gc(|t, x| t.neg(x[0]), &[m(r, 3, 4)])),
        ("scale", |r| gc(|t, x| t.scale(x[0], -1.7), &[m(r, 3, 4)])),
        ("add_scalar", |r| gc(|t, x| t.add_scalar(x[0], 0.3), &[m(r, 3, 4)])),
        ("exp", |r| gc(|t, x| t.exp(x[0]), &[m(r, 3, 4)])),
        ("log", |r| gc(|t, x| t.log(x[0]), &[rand_t(r, &[3, 4], 0.5, 2.0)])),
        ("powf", |r| {
            let x = rand_t(r, &[3, 4], 0.5, 2.0);
            let a = gc(|t, x| t.powf(x[0], -0.5), std::slice::from_ref(&x))?;
            Ok(a.max(gc(|t, x| t.powf(x[0], 1.7), &[x])?))
        }),
        ("relu", |r| gc(|t, x| t.relu(x[0]), &[off_zero(r, 3, 4)])),
        ("gelu", |r| gc(|t, x| t.gelu(x[0]), &[rand_t(r, &[3, 4], -3.0, 3.0)])),
        ("sigmoid", |r| gc(|t, x| t.sigmoid(x[0]), &[rand_t(r, &[3, 4], -3.0, 3.0)])),
        ("tanh", |r| gc(|t, x| t.tanh(x[0]), &[rand_t(r, &[3, 4], -2.0, 2.0)])),
        ("softmax", |r| {
            let x = rand_t(r, &[4, 5], -2.0, 2.0);
            let a = gc(|t, x| t.softmax(x[0], 0), std::slice::from_ref(&x))?;
            Ok(a.max(gc(|t, x| t.softmax(x[0], 1), &[x])?))
        }),
        ("masked_softmax", |r| {
            let mask = random_mask(r, 4, 5);
            gc(move |t, x| t.masked_softmax(x[0], mask.clone()), &[m(r, 4, 5)])
        }),
        ("masked_logsumexp", |r| {
            let mask = random_mask(r, 4, 5);
            gc(move |t, x| t.masked_logsumexp(x[0], mask.clone()), &[m(r, 4, 5)])
        }),
        ("sum", |r| {
            let x = m(r, 3, 4);
            let a = gc(|t, x| t.sum(x[0], 0), std::slice::from_ref(&x))?;
            Ok(a.max(gc(|t, x| t.sum(x[0], 1), &[x])?))
        }),
        ("mean", |r| {
            let x = m(r, 3, 4);
            let a = gc(|t, x| t.mean(x[0], 0), std::slice::from_ref(&x))?;
            Ok(a.max(gc(|t, x| t.mean(x[0], 1), &[x])?))
        }),
        ("max", |r| gc(|t, x| Ok(t.max(x[0], 1)?.0), &[m(r, 3, 4)])),
        ("sum_all", |r| gc(|t, x| t.sum_all(x[0]), &[m(r, 3, 4)])),
        ("mean_all", |r| gc(|t, x| t.mean_all(x[0]), &[m(r, 3, 4)])),
        ("reshape", |r| gc(|t, x| t.reshape(x[0], vec![2, 6]), &[m(r, 3, 4)])),
        ("narrow", |r| {
            let x = m(r, 5, 4);
            let a = gc(|t, x| t.narrow(x[0], 0, 1, 3), std::slice::from_ref(&x))?;
            Ok(a.max(gc(|t, x| t.narrow(x[0], 1, 2, 2), &[x])?))
        }),
        ("concat", |r| {
            let a = gc(|t, x| t.concat(&[x[0], x[1]], 0), &[m(r, 2, 3), m(r, 3, 3)])?;
            Ok(a.max(gc(|t, x| t.concat(&[x[0], x[1]], 1), &[m(r, 3, 2), m(r, 3, 1)])?))
        }),
        ("gather_rows", |r| {
            let idx = Arc::new((0..6).map(|_| r.random_range(0..4)).collect::<Vec<_>>());
            gc(move |t, x| t.gather_rows(x[0], idx.clone()), &[m(r, 4, 3)])
        }),
        ("scatter_rows", |r| {
            let idx = Arc::new(vec![3, 0]);
            gc(move |t, x| t.scatter_rows(x[0], x[1], idx.clone()), &[m(r, 5, 3), m(r, 2, 3)])
        }),
        ("conv1d", |r| {
            let (x, w) = (rand_t(r, &[2, 3, 8], -1.0, 1.0), rand_t(r, &[4, 3, 3], -1.0, 1.0));
            let a = gc(|t, x| t.conv1d(x[0], x[1], 1, 1), &[x.clone(), w.clone()])?;
            Ok(a.max(gc(|t, x| t.conv1d(x[0], x[1], 2, 0), &[x, w])?))
        }),
        ("layer_norm", |r| {
            gc(|t, x| layer_norm(t, x[0], x[1], x[2], 1e-5), &[m(r, 4, 4), rand_t(r, &[4], 0.5, 1.5), m(r, 1, 4).reshaped(vec![4])?])
        }),
        ("lstm_cell", |r| {
            let mut params = ParamSet::new();
            let seed = r.random();
            let cell = LstmCell::new(&mut params, &mut ChaCha8Rng::seed_from_u64(seed), "c", 3, 2)?;
            let mut xs = params.tensors().to_vec();
            xs.push(m(r, 2, 3));
            let n = params.len();
            gc(
                move |t, x| {
                    let state = cell.zero_state(t, 2);
                    let (h, s) = cell.step(t, &x[..n], x[n], state)?;
                    let (h2, s2) = cell.step(t, &x[..n], x[n], s)?;
                    t.concat(&[h, h2, s2.cell], 1)
                },
                &xs,
            )
        }),
        ("series_decompose", |r| {
            gc(|t, x| t.custom(Arc::new(SeriesDecompose { kernel: 3 }), &[x[0]]), &[m(r, 8, 3)])
        }),
        ("cumulative_mean", |r| gc(|t, x| t.custom(Arc::new(CumulativeMean), &[x[0]]), &[m(r, 8, 3)])),
        ("lag_correlation", |r| gc(|t, x| t.custom(Arc::new(LagCorrelation), &[x[0], x[1]]), &[m(r, 8, 3), m(r, 8, 3)])),
        ("rev_stack", |r| {
            let (stack, params) = ffn_stack(r.random(), 2, 4)?;
            let n = params.len();
            let mut xs = vec![m(r, 6, 4), m(r, 6, 4)];
            xs.extend(params.tensors().iter().cloned());
            gc(
                move |t, x| {
                    let (y1, y2) = rev_stack_on_tape(t, &x[2..2 + n], &stack, x[0], x[1])?;
                    t.concat(&[y1, y2], 1)
                },
                &xs,
            )
        }),
    ]
}

fn kernel_cases() -> Vec<(&'static str, Case)> {
    vec![
        ("full_attention", |r| {
            let l = r.random_range(2..=8);
            let d = r.random_range(1..=4);
            let xs = [m(r, l, d), m(r, l, d), m(r, l, d)];
            let a = gc(|t, x| scaled_dot_attention(t, x[0], x[1], x[2], None), &xs)?;
            Ok(a.max(gc(|t, x| scaled_dot_attention(t, x[0], x[1], x[2], Some(causal_mask(l, l))), &xs)?))
        }),
        ("prob_sparse_attention", |r| {
            let (l, d) = (8, r.random_range(1..=4));
            let xs = [m(r, l, d), m(r, l, d), m(r, l, d)];
            let cfg = ProbSparseConfig { factor: 1.0, seed: r.random(), sample_all_keys: false };
            let sel = prob_sparse_select(&xs[0], &xs[1], &cfg)?;
            let a = gc(|t, x| prob_sparse_with_selection(t, x[0], x[1], x[2], &sel, false), &xs)?;
            Ok(a.max(gc(|t, x| prob_sparse_with_selection(t, x[0], x[1], x[2], &sel, true), &xs)?))
        }),
        ("lsh_attention", |r| {
            let (l, d) = (8, r.random_range(2..=4));
            let xs = [m(r, l, d), m(r, l, d)];
            let cfg = LshConfig { n_buckets: 2, n_rounds: 2, chunk_len: 3, seed: r.random() };
            let buckets = lsh_hash(&xs[0], &cfg)?;
            let a = gc(|t, x| lsh_attention_bucketed(t, x[0], x[1], &buckets, 3, false), &xs)?;
            Ok(a.max(gc(|t, x| lsh_attention_bucketed(t, x[0], x[1], &buckets, 3, true), &xs)?))
        }),
        ("auto_correlation", |r| {
            let (l, d) = (8, r.random_range(1..=4));
            let xs = [m(r, l, d), m(r, l, d), m(r, l, d)];
            let delays = select_delays(&lag_correlation(&xs[0], &xs[1])?, 2, false);
            gc(|t, x| auto_correlation_with_delays(t, x[0], x[1], x[2], &delays), &xs)
        }),
        ("exponential_smoothing_attention", |r| {
            let (l, d) = (r.random_range(1..=8), r.random_range(1..=4));
            let xs = [Tensor::scalar(r.random_range(0.1..0.9)), m(r, l, d), m(r, 1, d)];
            gc(|t, x| exponential_smoothing_attention(t, x[1], x[0], x[2]), &xs)
        }),
        ("frequency_attention", |r| {
            let (l, d) = (8, r.random_range(1..=4));
            let x = m(r, l, d);
            let bins = frequency_select(&x, 2)?;
            gc(
                |t, x| {
                    let (a, b) = frequency_attention_with_bins(t, x[0], bins.clone(), 3)?;
                    t.concat(&[a, b], 0)
                },
                &[x],
            )
        }),
    ]
}

/// Reversible stack of LayerNorm + GELU feed-forward branches.
pub fn ffn_stack(seed: u64, depth: usize, d: usize) -> Result<(RevStack, ParamSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let mut blocks = Vec::with_capacity(depth);
    for i in 0..depth {
        let mut branch = |tag: &str| -> Result<FeedForwardBranch> {
            Ok(FeedForwardBranch {
                norm: LayerNorm::new(&mut params, &format!("b{i}.{tag}.norm"), d)?,
                ffn: FeedForward::new(&mut params, &mut rng, &format!("b{i}.{tag}.ffn"), d, 2 * d, Activation::Gelu)?,
            })
        };
        let f = branch("f")?;
        let g = branch("g")?;
        blocks.push(RevBlock::new(Arc::new(f), Arc::new(g)));
    }
    Ok((RevStack::new(blocks), params))
}

fn run_cases(cases: Vec<(&'static str, Case)>, instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::with_capacity(cases.len());
    for (ci, (name, case)) in cases.into_iter().enumerate() {
        let mut worst = 0.0f64;
        for i in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((ci as u64) << 32) ^ i as u64);
            let e = case(&mut rng)?;
            worst = if e.is_nan() || worst.is_nan() { f64::NAN } else { worst.max(e) };
        }
        out.push(CheckResult { name: name.to_string(), instances, worst, tolerance: GRAD_TOL });
    }
    Ok(out)
}

/// Gradient checks at `ε = 1e-5` over every op and custom op.
pub fn op_gradient_suite(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    run_cases(op_cases(), instances, seed)
}

/// Gradient checks over the attention kernels, selections held fixed.
pub fn kernel_gradient_suite(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    run_cases(kernel_cases(), instances, seed)
}

/// Parameter gradient check of each model kind at a tiny size.
pub fn model_gradient_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for kind in ModelKind::ALL {
        let spec = ModelSpec::tiny(kind, 2, 8, 4);
        let model = build_model(&spec, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let hist = m(&mut rng, spec.lookback, spec.n_inputs());
        let ht = m(&mut rng, spec.horizon, TIME_FEATURES);
        let err = gc(
            |tape, pv| model.forward_batch(tape, pv, &[ModelInput { history: &hist, horizon_time: &ht }]),
            model.params.tensors(),
        )?;
        out.push(CheckResult { name: format!("model.{kind}"), instances: 1, worst: err, tolerance: 1e-3 });
    }
    Ok(out)
}

/// Round-trip errors per block and for depth-4 stacks, and the gap between
/// recomputing backward and stored-activation backprop.
pub fn reversibility_suite(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let (mut block, mut stack4, mut grads) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let (l, d) = (rng.random_range(2..=8), rng.random_range(2..=4));
        let (x1, x2) = (m(&mut rng, l, d), m(&mut rng, l, d));

        let (one, p1) = ffn_stack(rng.random(), 1, d)?;
        let (y1, y2) = rev_forward(&one, p1.tensors(), &x1, &x2)?;
        let (a, b) = rev_inverse(&one, p1.tensors(), &y1, &y2)?;
        block = block.max(a.max_abs_diff(&x1)).max(b.max_abs_diff(&x2));

        let (four, p4) = ffn_stack(rng.random(), 4, d)?;
        let (y1, y2) = rev_forward(&four, p4.tensors(), &x1, &x2)?;
        let (a, b) = rev_inverse(&four, p4.tensors(), &y1, &y2)?;
        stack4 = stack4.max(a.max_abs_diff(&x1)).max(b.max_abs_diff(&x2));

        let (w1, w2) = (m(&mut rng, l, d), m(&mut rng, l, d));
        let rev = rev_backward(&four, p4.tensors(), &y1, &y2, &w1, &w2)?;
        let mut tape = Tape::new();
        let pv = p4.bind(&mut tape);
        let v1 = tape.leaf(x1.clone().with_grad());
        let v2 = tape.leaf(x2.clone().with_grad());
        let (o1, o2) = four.forward_on_tape(&mut tape, &pv, v1, v2)?;
        let (c1, c2) = (tape.constant(w1), tape.constant(w2));
        let s1 = tape.mul(o1, c1)?;
        let s1 = tape.sum_all(s1)?;
        let s2 = tape.mul(o2, c2)?;
        let s2 = tape.sum_all(s2)?;
        let loss = tape.add(s1, s2)?;
        tape.backward(loss)?;
        let diff = |g: &Tensor, v: Var| -> f64 {
            let t = tape.grad(v).expect("leaf gradient");
            g.data().iter().zip(t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        grads = grads.max(diff(&rev.grad_x1, v1)).max(diff(&rev.grad_x2, v2));
        let pg = p4.grads(&tape, &pv);
        for (slot, &id) in four.param_ids().iter().enumerate() {
            grads = grads.max(rev.param_grads[slot].max_abs_diff(&pg[id]));
        }
    }
    Ok(vec![
        CheckResult { name: "rev_block_round_trip".into(), instances, worst: block, tolerance: 1e-9 },
        CheckResult { name: "rev_stack4_round_trip".into(), instances, worst: stack4, tolerance: 1e-8 },
        CheckResult { name: "rev_backward_vs_tape".into(), instances, worst: grads, tolerance: 1e-9 },
    ])
}
