//! Discrete Fourier transform: iterative radix-2 Cooley-Tukey for power-of-two
//! lengths, Bluestein's chirp-z reduction for other long inputs, and a
//! table-driven direct sum for short ones.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// `X[k] = Σ_t x[t]·e^(−2πi·kt/n)`.
pub fn dft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    transform(x, false)
}

/// Inverse of [`dft`], including the `1/n` scale.
pub fn idft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = x.len() as f64;
    let mut y = transform(x, true)?;
    y.iter_mut().for_each(|v| *v /= n);
    Ok(y)
}

pub fn dft_real(x: &[f64]) -> Result<Vec<Complex64>> {
    let c: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    dft(&c)
}

fn transform(x: &[Complex64], inverse: bool) -> Result<Vec<Complex64>> {
    let n = x.len();
    if n == 0 {
        return Err(Error::invalid("dft", "empty input"));
    }
    if n.is_power_of_two() {
        Ok(radix2(x, inverse))
    } else if n <= DIRECT_MAX {
        Ok(direct(x, inverse))
    } else {
        Ok(bluestein(x, inverse))
    }
}

const DIRECT_MAX: usize = 32;

fn direct(x: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = x.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let table: Vec<Complex64> = (0..n)
        .map(|j| Complex64::from_polar(1.0, sign * 2.0 * PI * j as f64 / n as f64))
        .collect();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .fold(Complex64::new(0.0, 0.0), |acc, (t, &v)| acc + v * table[(k * t) % n])
        })
        .collect()
}

/// Per-length tables for [`radix2`].
struct Radix2Plan {
    perm: Vec<usize>,
    /// One table per stage, `len = 2, 4, …, n`.
    twiddles: Vec<Vec<Complex64>>,
}

impl Radix2Plan {
    fn new(n: usize, inverse: bool) -> Self {
        let bits = n.trailing_zeros();
        let perm = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let sign = if inverse { 1.0 } else { -1.0 };
        let mut twiddles = Vec::new();
        let mut len = 2;
        while len <= n {
            twiddles.push(
                (0..len / 2)
                    .map(|j| Complex64::from_polar(1.0, sign * 2.0 * PI * j as f64 / len as f64))
                    .collect(),
            );
            len <<= 1;
        }
        Self { perm, twiddles }
    }
}

/// Chirp and transformed convolution kernel for [`bluestein`].
struct BluesteinPlan {
    m: usize,
    chirp: Vec<Complex64>,
    kernel: Vec<Complex64>,
}

impl BluesteinPlan {
    fn new(n: usize, inverse: bool) -> Self {
        let m = (2 * n - 1).next_power_of_two();
        let sign = if inverse { 1.0 } else { -1.0 };
        // k² mod 2n keeps the chirp angle small
        let chirp: Vec<Complex64> = (0..n)
            .map(|k| Complex64::from_polar(1.0, sign * PI * ((k * k) % (2 * n)) as f64 / n as f64))
            .collect();
        let mut b = vec![Complex64::new(0.0, 0.0); m];
        b[0] = chirp[0].conj();
        for k in 1..n {
            b[k] = chirp[k].conj();
            b[m - k] = chirp[k].conj();
        }
        let kernel = radix2(&b, false);
        Self { m, chirp, kernel }
    }
}

type PlanCache<P> = RefCell<HashMap<(usize, bool), Rc<P>>>;

thread_local! {
    static RADIX2: PlanCache<Radix2Plan> = RefCell::new(HashMap::new());
    static BLUESTEIN: PlanCache<BluesteinPlan> = RefCell::new(HashMap::new());
}

fn cached<P>(
    cache: &'static std::thread::LocalKey<PlanCache<P>>,
    n: usize,
    inverse: bool,
    make: fn(usize, bool) -> P,
) -> Rc<P> {
    if let Some(p) = cache.with(|c| c.borrow().get(&(n, inverse)).cloned()) {
        return p;
    }
    let p = Rc::new(make(n, inverse));
    cache.with(|c| c.borrow_mut().insert((n, inverse), p.clone()));
    p
}

/// `kt = (k² + t² − (k−t)²)/2` turns the transform into a convolution
/// evaluated with power-of-two FFTs.
fn bluestein(x: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = x.len();
    let plan = cached(&BLUESTEIN, n, inverse, BluesteinPlan::new);
    let mut a = vec![Complex64::new(0.0, 0.0); plan.m];
    for (t, (&v, w)) in x.iter().zip(&plan.chirp).enumerate() {
        a[t] = v * w;
    }
    let fa = radix2(&a, false);
    let prod: Vec<Complex64> = fa.iter().zip(&plan.kernel).map(|(p, q)| p * q).collect();
    let conv = radix2(&prod, true);
    let scale = 1.0 / plan.m as f64;
    (0..n).map(|k| conv[k] * scale * plan.chirp[k]).collect()
}

fn radix2(x: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = x.len();
    let plan = cached(&RADIX2, n, inverse, Radix2Plan::new);
    let mut a: Vec<Complex64> = plan.perm.iter().map(|&j| x[j]).collect();
    for tw in &plan.twiddles {
        let half = tw.len();
        for block in a.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for ((u, v), w) in lo.iter_mut().zip(hi.iter_mut()).zip(tw) {
                let t = *v * w;
                let s = *u;
                *u = s + t;
                *v = s - t;
            }
        }
    }
    a
}
