/// Relative tolerance under which two scores count as tied.
pub const TIE_RTOL: f64 = 1e-10;

/// Indices of the `k` largest `values`, best first.
///
/// Scores within `TIE_RTOL · max(1, |best|)` of the current best are
/// treated as equal and the lowest index among them is taken, so ties that
/// differ only by rounding (e.g. FFT noise) resolve toward the lower index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(values.len());
    let mut taken = vec![false; values.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let best = values
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let tol = TIE_RTOL * best.abs().max(1.0);
        let pick = (0..values.len())
            .find(|&i| !taken[i] && values[i] >= best - tol)
            .expect("non-empty remainder");
        taken[pick] = true;
        out.push(pick);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(top_k_indices(&[1.0, 3.0, 3.0, 2.0], 2), vec![1, 2]);
        assert_eq!(top_k_indices(&[1.0, 3.0 + 1e-14, 3.0], 1), vec![1]);
        assert_eq!(top_k_indices(&[1.0, 3.0, 3.0 + 1e-14], 1), vec![1]);
        assert_eq!(top_k_indices(&[5.0, 1.0], 5), vec![0, 1]);
    }
}
