use rand_chacha::ChaCha8Rng;

use super::params::{uniform_fan_in, ParamId, ParamSet};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Hidden and cell state, both `[batch × units]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmCellState {
    pub hidden: Var,
    pub cell: Var,
}

/// One LSTM cell with gate order (input, forget, candidate, output).
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub units: usize,
}

impl LstmCell {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        input_dim: usize,
        units: usize,
    ) -> Result<Self> {
        let w_ih = uniform_fan_in(rng, &[4 * units, input_dim], units);
        let w_hh = uniform_fan_in(rng, &[4 * units, units], units);
        let bias = uniform_fan_in(rng, &[4 * units], units);
        Ok(Self {
            w_ih: params.add(format!("{name}.w_ih"), w_ih)?,
            w_hh: params.add(format!("{name}.w_hh"), w_hh)?,
            bias: params.add(format!("{name}.bias"), bias)?,
            input_dim,
            units,
        })
    }

    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> LstmCellState {
        let z = crate::Tensor::zeros(vec![batch, self.units]);
        LstmCellState {
            hidden: tape.constant(z.clone()),
            cell: tape.constant(z),
        }
    }

    /// `f,i,o = σ(·)`, `g = tanh(·)`, `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
    pub fn step(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        x_t: Var,
        state: LstmCellState,
    ) -> Result<(Var, LstmCellState)> {
        let (batch, width) = tape.value(x_t).dims2()?;
        if width != self.input_dim || tape.value(state.hidden).dims2()? != (batch, self.units) {
            return Err(Error::shape("lstm_cell", tape.shape(x_t), tape.shape(state.hidden)));
        }
        if tape.shape(state.cell) != tape.shape(state.hidden) {
            return Err(Error::shape("lstm_cell", tape.shape(state.cell), tape.shape(state.hidden)));
        }
        let u = self.units;
        let zx = tape.matmul_bt(x_t, pv[self.w_ih])?;
        let zh = tape.matmul_bt(state.hidden, pv[self.w_hh])?;
        let z = tape.add(zx, zh)?;
        let b = tape.reshape(pv[self.bias], vec![1, 4 * u])?;
        let z = tape.add(z, b)?;
        let gi = tape.narrow(z, 1, 0, u)?;
        let gf = tape.narrow(z, 1, u, u)?;
        let gg = tape.narrow(z, 1, 2 * u, u)?;
        let go = tape.narrow(z, 1, 3 * u, u)?;
        let i = tape.sigmoid(gi)?;
        let f = tape.sigmoid(gf)?;
        let g = tape.tanh(gg)?;
        let o = tape.sigmoid(go)?;
        let keep = tape.mul(f, state.cell)?;
        let write = tape.mul(i, g)?;
        let cell = tape.add(keep, write)?;
        let tc = tape.tanh(cell)?;
        let hidden = tape.mul(o, tc)?;
        Ok((hidden, LstmCellState { hidden, cell }))
    }
}

/// Stacked LSTM; each layer feeds its hidden sequence to the next.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub layers: Vec<LstmCell>,
}

impl Lstm {
    pub fn new(
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        name: &str,
        input_dim: usize,
        units: usize,
        n_layers: usize,
    ) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|l| {
                let d = if l == 0 { input_dim } else { units };
                LstmCell::new(params, rng, &format!("{name}.{l}"), d, units)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Runs every layer over the sequence `xs` (each `[batch × features]`)
    /// and returns the top layer's hidden states.
    pub fn forward(&self, tape: &mut Tape, pv: &[Var], xs: &[Var]) -> Result<Vec<Var>> {
        let batch = tape.value(xs[0]).dims2()?.0;
        let mut seq = xs.to_vec();
        for cell in &self.layers {
            let mut state = cell.zero_state(tape, batch);
            let mut out = Vec::with_capacity(seq.len());
            for &x in &seq {
                let (h, s) = cell.step(tape, pv, x, state)?;
                state = s;
                out.push(h);
            }
            seq = out;
        }
        Ok(seq)
    }
}
