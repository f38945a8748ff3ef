use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{
    auto_correlation_attention, lsh_attention_bucketed, lsh_hash, prob_sparse_attention, scaled_dot_attention,
    AutoCorrelationConfig, LshConfig, ProbSparseConfig,
};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchKernel {
    Full,
    Lsh,
    ProbSparse,
    AutoCorrelation,
}

impl BenchKernel {
    pub const ALL: [BenchKernel; 4] =
        [BenchKernel::Full, BenchKernel::Lsh, BenchKernel::ProbSparse, BenchKernel::AutoCorrelation];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchKernel::Full => "full",
            BenchKernel::Lsh => "lsh",
            BenchKernel::ProbSparse => "prob_sparse",
            BenchKernel::AutoCorrelation => "auto_correlation",
        }
    }
}

pub const BENCH_LENGTHS: [usize; 5] = [256, 512, 1024, 2048, 4096];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub kernel: &'static str,
    #[serde(rename = "L")]
    pub length: usize,
    pub median_ms: f64,
    /// Fitted log-log slope of the kernel, repeated on each of its rows.
    pub slope: f64,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Wall time in milliseconds of one forward pass of `kernel` at length `l`.
pub fn time_kernel(kernel: BenchKernel, l: usize, d: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (q, k, v) = (random(&mut rng, l, d), random(&mut rng, l, d), random(&mut rng, l, d));
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.constant(q.clone()), tape.constant(k), tape.constant(v));
    let start = Instant::now();
    match kernel {
        BenchKernel::Full => {
            scaled_dot_attention(&mut tape, qv, kv, vv, None)?;
        }
        BenchKernel::Lsh => {
            let cfg = LshConfig { n_buckets: 32, n_rounds: 2, chunk_len: 32, seed };
            let buckets = lsh_hash(&q, &cfg)?;
            lsh_attention_bucketed(&mut tape, qv, vv, &buckets, cfg.chunk_len, false)?;
        }
        BenchKernel::ProbSparse => {
            let cfg = ProbSparseConfig { seed, ..ProbSparseConfig::default() };
            prob_sparse_attention(&mut tape, qv, kv, vv, &cfg, false)?;
        }
        BenchKernel::AutoCorrelation => {
            auto_correlation_attention(&mut tape, qv, kv, vv, &AutoCorrelationConfig::default())?;
        }
    }
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

/// Median forward time per kernel and length, plus each kernel's slope.
pub fn complexity_benchmark(kernels: &[BenchKernel], lengths: &[usize], trials: usize, d_model: usize) -> Result<Vec<BenchRow>> {
    if trials < 3 {
        return Err(Error::invalid("complexity_benchmark", "need at least 3 trials"));
    }
    if lengths.len() < 2 || lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("complexity_benchmark", "lengths must be ascending, at least two"));
    }
    let mut rows = Vec::new();
    for &kernel in kernels {
        let mut medians = Vec::with_capacity(lengths.len());
        for &l in lengths {
            let mut times = (0..trials)
                .map(|t| time_kernel(kernel, l, d_model, t as u64))
                .collect::<Result<Vec<f64>>>()?;
            times.sort_by(f64::total_cmp);
            medians.push(times[trials / 2]);
        }
        let xs: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
        let slope = loglog_slope(&xs, &medians);
        log::info!("{}: slope {slope:.2}", kernel.as_str());
        for (&l, &m) in lengths.iter().zip(&medians) {
            rows.push(BenchRow { kernel: kernel.as_str(), length: l, median_ms: m, slope });
        }
    }
    Ok(rows)
}
