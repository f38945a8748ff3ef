use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest relative error between the tape gradient of scalar `f` at `x`
/// and its central finite difference with step `eps`, measured per
/// component as `|analytic − numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps)
}

/// [`grad_check`] over several inputs at once.
pub fn grad_check_many<F>(f: F, xs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("grad_check", "eps must be positive"));
    }
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let y = f(&mut tape, &vars)?;
        let v = tape.value(y);
        if v.numel() != 1 {
            return Err(Error::NotScalar(v.shape().to_vec()));
        }
        Ok(v.data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|t| tape.param(t.clone())).collect();
    let y = f(&mut tape, &vars)?;
    tape.backward(y)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(xs)
        .map(|(&v, x)| tape.grad(v).map_or_else(|| vec![0.0; x.numel()], <[f64]>::to_vec))
        .collect();

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = xs.to_vec();
    for (ti, x) in xs.iter().enumerate() {
        for i in 0..x.numel() {
            let orig = x.data()[i];
            probe[ti].data_mut()[i] = orig + eps;
            let fp = eval(&probe)?;
            probe[ti].data_mut()[i] = orig - eps;
            let fm = eval(&probe)?;
            probe[ti].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let err = (analytic[ti][i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_sum_is_exact() {
        let x = Tensor::new(vec![4], vec![0.3, -0.2, 0.9, 1.5]).unwrap();
        let err = grad_check(|t, v| t.sum_all(v), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn softmax_sum_is_constant() {
        let x = Tensor::new(vec![2, 3], vec![0.3, -0.2, 0.9, 1.5, 0.1, -0.7]).unwrap();
        let err = grad_check(
            |t, v| {
                let s = t.softmax(v, 1)?;
                t.sum_all(s)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let x = Tensor::ones(vec![3]);
        assert!(matches!(
            grad_check(|t, v| t.scale(v, 2.0), &x, 1e-5),
            Err(Error::NotScalar(_))
        ));
    }
}
