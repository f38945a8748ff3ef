use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bias-corrected ADAM moments and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }
}

/// One ADAM update of every parameter. Gradients are validated before any
/// parameter is touched, so a NaN leaves `params` and `state` unchanged.
pub fn adam_step(params: &mut ParamSet, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(Error::invalid(
            "adam_step",
            format!("{} gradients for {} parameters", grads.len(), params.len()),
        ));
    }
    for (id, g) in grads.iter().enumerate() {
        if g.shape() != params.get(id).shape() {
            return Err(Error::shape("adam_step", params.get(id).shape(), g.shape()));
        }
        if g.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NanGradient(params.name(id).to_string()));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (id, g) in grads.iter().enumerate() {
        let m = &mut state.first_moment[id];
        let v = &mut state.second_moment[id];
        let p = params.data_mut(id);
        for (k, &gk) in g.data().iter().enumerate() {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            p[k] -= state.learning_rate * mh / (vh.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::scalar(v)).unwrap();
        ps
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut ps = scalar_set(0.7);
        let mut st = AdamState::new(&ps, 0.01);
        for _ in 0..5 {
            adam_step(&mut ps, &[Tensor::scalar(0.0)], &mut st).unwrap();
        }
        assert_eq!(ps.get(0).data(), &[0.7]);
        assert_eq!(st.step_count, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = scalar_set(1.0);
        let mut st = AdamState::new(&ps, 0.001);
        adam_step(&mut ps, &[Tensor::scalar(1.0)], &mut st).unwrap();
        assert!((1.0 - ps.get(0).data()[0] - 0.001).abs() < 1e-10);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut ps = scalar_set(1.0);
        let mut st = AdamState::new(&ps, 0.001);
        let err = adam_step(&mut ps, &[Tensor::scalar(f64::NAN)], &mut st).unwrap_err();
        assert!(matches!(err, Error::NanGradient(ref n) if n == "w"));
        assert_eq!(st.step_count, 0);
        assert_eq!(ps.get(0).data(), &[1.0]);
    }
}
