//! Single-layer LSTM whose last `tail` hidden states are concatenated and
//! projected by a fully connected layer.
//!
//! Gate layout in the stacked weight matrices is `[input, forget, cell, output]`.
//! Sequences shorter than `tail` are left-padded with zero hidden states.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_finite, Dense, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmSpec {
    pub input: usize,
    pub hidden: usize,
    /// Number of trailing hidden states concatenated before the projection.
    pub tail: usize,
    pub output: usize,
}

impl LstmSpec {
    /// 64-unit LSTM, last 32 states (2048 values), projected to `output`.
    pub fn standard(input: usize, output: usize) -> Self {
        Self {
            input,
            hidden: 64,
            tail: 32,
            output,
        }
    }

    pub fn concat_dim(&self) -> usize {
        self.hidden * self.tail
    }

    fn validate(&self) -> Result<()> {
        if [self.input, self.hidden, self.tail, self.output].contains(&0) {
            return Err(Error::Config(format!("LSTM sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmEncoder {
    /// `4H x D`.
    pub w_input: Array2<f64>,
    /// `4H x H`.
    pub w_hidden: Array2<f64>,
    /// `4H`.
    pub bias: Array1<f64>,
    pub head: Dense,
    tail: usize,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    inputs: Array2<f64>,
    /// `hs[t]` is the hidden state after `t` steps; `hs[0]` is zero.
    hs: Vec<Array1<f64>>,
    cs: Vec<Array1<f64>>,
    /// Post-nonlinearity gates per step, stacked `[i, f, g, o]`.
    gates: Vec<Array1<f64>>,
    tanh_c: Vec<Array1<f64>>,
    concat: Array1<f64>,
}

impl LstmCache {
    /// The concatenated tail of hidden states fed to the projection.
    pub fn concat(&self) -> &Array1<f64> {
        &self.concat
    }

    /// Hidden state after step `t` (1-based; 0 is the initial zero state).
    pub fn hidden_state(&self, t: usize) -> &Array1<f64> {
        &self.hs[t]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmEncoder {
    pub fn zeros(spec: &LstmSpec) -> Result<Self> {
        spec.validate()?;
        let g = 4 * spec.hidden;
        Ok(Self {
            w_input: Array2::zeros((g, spec.input)),
            w_hidden: Array2::zeros((g, spec.hidden)),
            bias: Array1::zeros(g),
            head: Dense::zeros(spec.concat_dim(), spec.output),
            tail: spec.tail,
        })
    }

    /// Recurrent weights uniform in `±1/sqrt(H)`, head uniform in `±1/sqrt(H * tail)`.
    pub fn init<R: Rng + ?Sized>(spec: &LstmSpec, rng: &mut R) -> Result<Self> {
        let mut out = Self::zeros(spec)?;
        let k = 1.0 / (spec.hidden as f64).sqrt();
        out.w_input.mapv_inplace(|_| rng.random_range(-k..=k));
        out.w_hidden.mapv_inplace(|_| rng.random_range(-k..=k));
        out.head = Dense::uniform(spec.concat_dim(), spec.output, 1.0 / (spec.concat_dim() as f64).sqrt(), rng);
        Ok(out)
    }

    pub fn spec(&self) -> LstmSpec {
        LstmSpec {
            input: self.w_input.ncols(),
            hidden: self.w_hidden.ncols(),
            tail: self.tail,
            output: self.head.output_dim(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.spec()).expect("spec of an existing network is valid")
    }

    /// Encodes a `T x D` sequence.
    pub fn forward(&self, seq: &Array2<f64>) -> Result<(Array1<f64>, LstmCache)> {
        let spec = self.spec();
        let h = spec.hidden;
        if seq.nrows() == 0 {
            return Err(Error::Shape("empty sequence".into()));
        }
        if seq.ncols() != spec.input {
            return Err(Error::Shape(format!(
                "frame dim {} != LSTM input dim {}",
                seq.ncols(),
                spec.input
            )));
        }
        check_finite("LSTM input", seq.iter().copied())?;
        let steps = seq.nrows();
        let mut hs = Vec::with_capacity(steps + 1);
        let mut cs = Vec::with_capacity(steps + 1);
        let mut gates = Vec::with_capacity(steps);
        let mut tanh_c = Vec::with_capacity(steps);
        hs.push(Array1::zeros(h));
        cs.push(Array1::zeros(h));
        for t in 0..steps {
            let mut z = self.w_input.dot(&seq.row(t)) + self.w_hidden.dot(&hs[t]) + &self.bias;
            z.slice_mut(s![..2 * h]).mapv_inplace(sigmoid);
            z.slice_mut(s![2 * h..3 * h]).mapv_inplace(f64::tanh);
            z.slice_mut(s![3 * h..]).mapv_inplace(sigmoid);
            let (i, f, g, o) = (
                z.slice(s![..h]),
                z.slice(s![h..2 * h]),
                z.slice(s![2 * h..3 * h]),
                z.slice(s![3 * h..]),
            );
            let c = &f * &cs[t] + &i * &g;
            let tc = c.mapv(f64::tanh);
            hs.push(&o * &tc);
            cs.push(c);
            tanh_c.push(tc);
            gates.push(z);
        }
        let mut concat = Array1::zeros(spec.concat_dim());
        for slot in 0..self.tail {
            // Slot `tail - 1` holds the newest state.
            if let Some(t) = (steps + slot + 1).checked_sub(self.tail).filter(|&t| t >= 1) {
                concat.slice_mut(s![slot * h..(slot + 1) * h]).assign(&hs[t]);
            }
        }
        let out = self.head.weight.dot(&concat) + &self.head.bias;
        Ok((
            out,
            LstmCache {
                inputs: seq.clone(),
                hs,
                cs,
                gates,
                tanh_c,
                concat,
            },
        ))
    }

    /// Backpropagation through time. Returns parameter gradients and the
    /// gradient with respect to the input frames.
    pub fn backward(&self, cache: &LstmCache, grad_out: ArrayView1<'_, f64>) -> Result<(LstmEncoder, Array2<f64>)> {
        let spec = self.spec();
        let h = spec.hidden;
        if grad_out.len() != spec.output || cache.concat.len() != spec.concat_dim() {
            return Err(Error::Shape("cache or upstream gradient does not match this LSTM".into()));
        }
        let steps = cache.gates.len();
        let mut grads = self.zeros_like();
        let go = grad_out.insert_axis(Axis(0));
        let concat = cache.concat.view().insert_axis(Axis(0));
        let (head_grad, g_concat) = self.head.backward(concat, go);
        grads.head = head_grad;
        let g_concat = g_concat.index_axis_move(Axis(0), 0);

        let mut grad_inputs = Array2::zeros(cache.inputs.dim());
        let mut dh_next = Array1::<f64>::zeros(h);
        let mut dc_next = Array1::<f64>::zeros(h);
        for t in (0..steps).rev() {
            let mut dh = dh_next.clone();
            // Hidden state after step t+1 sits in slot (t + 1) + tail - steps - 1.
            if let Some(slot) = (t + 1 + self.tail).checked_sub(steps + 1) {
                dh += &g_concat.slice(s![slot * h..(slot + 1) * h]);
            }
            let z = &cache.gates[t];
            let (i, f, g, o) = (
                z.slice(s![..h]),
                z.slice(s![h..2 * h]),
                z.slice(s![2 * h..3 * h]),
                z.slice(s![3 * h..]),
            );
            let tc = &cache.tanh_c[t];
            let d_o = &dh * tc;
            let dc = &dc_next + &(&dh * &o * &tc.mapv(|v| 1.0 - v * v));
            let d_i = &dc * &g;
            let d_g = &dc * &i;
            let d_f = &dc * &cache.cs[t];
            dc_next = &dc * &f;

            let mut dz = Array1::<f64>::zeros(4 * h);
            dz.slice_mut(s![..h]).assign(&(&d_i * &i.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(s![h..2 * h]).assign(&(&d_f * &f.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(s![2 * h..3 * h]).assign(&(&d_g * &g.mapv(|v| 1.0 - v * v)));
            dz.slice_mut(s![3 * h..]).assign(&(&d_o * &o.mapv(|v| v * (1.0 - v))));

            let dz_col = dz.view().insert_axis(Axis(1));
            grads.w_input += &dz_col.dot(&cache.inputs.row(t).insert_axis(Axis(0)));
            grads.w_hidden += &dz_col.dot(&cache.hs[t].view().insert_axis(Axis(0)));
            grads.bias += &dz;
            grad_inputs.row_mut(t).assign(&self.w_input.t().dot(&dz));
            dh_next = self.w_hidden.t().dot(&dz);
        }
        Ok((grads, grad_inputs))
    }

    pub fn forward_sequence(&self, seq: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.forward(&seq.to_owned())?.0)
    }
}

impl Parameters for LstmEncoder {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = vec![
            self.w_input.as_slice().expect("standard layout"),
            self.w_hidden.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ];
        v.extend(self.head.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![
            self.w_input.as_slice_mut().expect("standard layout"),
            self.w_hidden.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ];
        v.extend(self.head.param_slices_mut());
        v
    }
}
