use rand_chacha::ChaCha8Rng;

use super::params::{uniform_fan_in, ParamId, ParamSet};
use crate::autodiff::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Affine map `y = x·Wᵀ + b` with `W: [out×in]`, `b: [out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let w = uniform_fan_in(rng, &[out_dim, in_dim], in_dim);
        let b = uniform_fan_in(rng, &[out_dim], in_dim);
        Ok(Self {
            weight: params.add(format!("{name}.weight"), w)?,
            bias: params.add(format!("{name}.bias"), b)?,
            in_dim,
            out_dim,
        })
    }

    /// Linear layer that starts as the zero map.
    pub fn zeroed(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            weight: params.add(format!("{name}.weight"), Tensor::zeros(vec![out_dim, in_dim]))?,
            bias: params.add(format!("{name}.bias"), Tensor::zeros(vec![out_dim]))?,
            in_dim,
            out_dim,
        })
    }

    /// Applies the layer over the trailing dimension of `x`.
    pub fn forward(&self, tape: &mut Tape, pv: &[Var], x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let last = *shape.last().unwrap();
        if last != self.in_dim {
            return Err(Error::shape("linear", &shape, tape.shape(pv[self.weight])));
        }
        let rows = shape[..shape.len() - 1].iter().product::<usize>().max(1);
        let x2 = if shape.len() == 2 { x } else { tape.reshape(x, vec![rows, last])? };
        let y = tape.matmul_bt(x2, pv[self.weight])?;
        let b = tape.reshape(pv[self.bias], vec![1, self.out_dim])?;
        let y = tape.add(y, b)?;
        if shape.len() == 2 {
            Ok(y)
        } else {
            let mut out = shape;
            *out.last_mut().unwrap() = self.out_dim;
            tape.reshape(y, out)
        }
    }
}

/// Normalization over the last axis with learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: params.add(format!("{name}.gamma"), Tensor::ones(vec![dim]))?,
            beta: params.add(format!("{name}.beta"), Tensor::zeros(vec![dim]))?,
            dim,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, tape: &mut Tape, pv: &[Var], x: Var) -> Result<Var> {
        layer_norm(tape, x, pv[self.gamma], pv[self.beta], self.eps)
    }
}

/// `(x − mean) / √(var + eps) · γ + β` over the last axis of a rank-2 `x`.
pub fn layer_norm(tape: &mut Tape, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
    let (_, d) = tape.value(x).dims2()?;
    if tape.value(gamma).numel() != d || tape.value(beta).numel() != d {
        return Err(Error::shape("layer_norm", tape.shape(x), tape.shape(gamma)));
    }
    let mu = tape.mean(x, 1)?;
    let centered = tape.sub(x, mu)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.mean(sq, 1)?;
    let var = tape.add_scalar(var, eps)?;
    let inv = tape.powf(var, -0.5)?;
    let normed = tape.mul(centered, inv)?;
    let g = tape.reshape(gamma, vec![1, d])?;
    let b = tape.reshape(beta, vec![1, d])?;
    let scaled = tape.mul(normed, g)?;
    tape.add(scaled, b)
}

/// Position-wise two-layer feed-forward block.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
    pub activation: Activation,
}

impl FeedForward {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        d_ff: usize,
        activation: Activation,
    ) -> Result<Self> {
        Ok(Self {
            up: Linear::new(params, rng, &format!("{name}.up"), d_model, d_ff)?,
            down: Linear::new(params, rng, &format!("{name}.down"), d_ff, d_model)?,
            activation,
        })
    }

    pub fn forward(&self, tape: &mut Tape, pv: &[Var], x: Var) -> Result<Var> {
        let h = self.up.forward(tape, pv, x)?;
        let h = tape.activation(self.activation, h)?;
        self.down.forward(tape, pv, h)
    }
}

/// Convolution over `[batch × channels × length]` with per-output bias.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub kernels: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel_size;
        let w = uniform_fan_in(rng, &[out_channels, in_channels, kernel_size], fan_in);
        let b = uniform_fan_in(rng, &[out_channels], fan_in);
        Ok(Self {
            kernels: params.add(format!("{name}.kernels"), w)?,
            bias: params.add(format!("{name}.bias"), b)?,
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
        })
    }

    pub fn forward(&self, tape: &mut Tape, pv: &[Var], x: Var) -> Result<Var> {
        let y = tape.conv1d(x, pv[self.kernels], self.stride, self.padding)?;
        let b = tape.reshape(pv[self.bias], vec![1, self.out_channels, 1])?;
        tape.add(y, b)
    }
}

/// Sinusoidal encoding: `PE[p, 2i] = sin(p / 10000^(2i/d))`,
/// `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn positional_encoding(len: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::invalid(
            "positional_encoding",
            format!("d_model must be even and positive, got {d_model}"),
        ));
    }
    let mut data = vec![0.0; len * d_model];
    for p in 0..len {
        for i in 0..d_model / 2 {
            let freq = 10000f64.powf(-((2 * i) as f64) / d_model as f64);
            let angle = p as f64 * freq;
            data[p * d_model + 2 * i] = angle.sin();
            data[p * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![len, d_model], data)
}
