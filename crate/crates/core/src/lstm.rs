//! A standard LSTM cell with exact backpropagation through time.
//!
//! ```text
//! i = σ(W_i [x; h] + b_i)    f = σ(W_f [x; h] + b_f)
//! o = σ(W_o [x; h] + b_o)    g = tanh(W_g [x; h] + b_g)
//! c' = f ⊙ c + i ⊙ g         h' = o ⊙ tanh(c')
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sigmoid, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_input: Matrix,
    pub w_forget: Matrix,
    pub w_output: Matrix,
    pub w_cell: Matrix,
    pub b_input: Vec<f64>,
    pub b_forget: Vec<f64>,
    pub b_output: Vec<f64>,
    pub b_cell: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let m = || Matrix::zeros(hidden_dim, input_dim + hidden_dim);
        LstmLayerParams {
            input_dim,
            hidden_dim,
            w_input: m(),
            w_forget: m(),
            w_output: m(),
            w_cell: m(),
            b_input: vec![0.0; hidden_dim],
            b_forget: vec![0.0; hidden_dim],
            b_output: vec![0.0; hidden_dim],
            b_cell: vec![0.0; hidden_dim],
        }
    }

    /// Uniform weights in `±1/sqrt(hidden_dim)`, forget-gate bias 1, other biases 0.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (hidden_dim as f64).sqrt();
        let cols = input_dim + hidden_dim;
        LstmLayerParams {
            input_dim,
            hidden_dim,
            w_input: Matrix::uniform(hidden_dim, cols, scale, rng),
            w_forget: Matrix::uniform(hidden_dim, cols, scale, rng),
            w_output: Matrix::uniform(hidden_dim, cols, scale, rng),
            w_cell: Matrix::uniform(hidden_dim, cols, scale, rng),
            b_input: vec![0.0; hidden_dim],
            b_forget: vec![1.0; hidden_dim],
            b_output: vec![0.0; hidden_dim],
            b_cell: vec![0.0; hidden_dim],
        }
    }

    pub(crate) fn blocks<'a>(&'a self, prefix: &str) -> Vec<(String, &'a [f64])> {
        vec![
            (format!("{prefix}.W_input"), self.w_input.as_slice()),
            (format!("{prefix}.W_forget"), self.w_forget.as_slice()),
            (format!("{prefix}.W_output"), self.w_output.as_slice()),
            (format!("{prefix}.W_cell"), self.w_cell.as_slice()),
            (format!("{prefix}.b_input"), &self.b_input),
            (format!("{prefix}.b_forget"), &self.b_forget),
            (format!("{prefix}.b_output"), &self.b_output),
            (format!("{prefix}.b_cell"), &self.b_cell),
        ]
    }

    pub(crate) fn blocks_mut<'a>(&'a mut self, prefix: &str) -> Vec<(String, &'a mut [f64])> {
        vec![
            (format!("{prefix}.W_input"), self.w_input.as_mut_slice()),
            (format!("{prefix}.W_forget"), self.w_forget.as_mut_slice()),
            (format!("{prefix}.W_output"), self.w_output.as_mut_slice()),
            (format!("{prefix}.W_cell"), self.w_cell.as_mut_slice()),
            (format!("{prefix}.b_input"), &mut self.b_input),
            (format!("{prefix}.b_forget"), &mut self.b_forget),
            (format!("{prefix}.b_output"), &mut self.b_output),
            (format!("{prefix}.b_cell"), &mut self.b_cell),
        ]
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let (h, cols) = (self.hidden_dim, self.input_dim + self.hidden_dim);
        let mats = [&self.w_input, &self.w_forget, &self.w_output, &self.w_cell];
        let biases = [&self.b_input, &self.b_forget, &self.b_output, &self.b_cell];
        if mats.iter().any(|m| m.rows() != h || m.cols() != cols) || biases.iter().any(|b| b.len() != h) {
            return Err(Error::Dimension(format!(
                "LSTM layer shapes inconsistent with input_dim {} hidden_dim {}",
                self.input_dim, self.hidden_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

/// Everything the backward pass needs from one step.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// One recurrence step.
pub fn lstm_step(layer: &LstmLayerParams, x: &[f64], state: &LstmState) -> Result<LstmState> {
    layer.check_shapes()?;
    if x.len() != layer.input_dim || state.h.len() != layer.hidden_dim || state.c.len() != layer.hidden_dim {
        return Err(Error::Dimension(format!(
            "lstm_step: input {} (expected {}), state {}/{} (expected {})",
            x.len(),
            layer.input_dim,
            state.h.len(),
            state.c.len(),
            layer.hidden_dim
        )));
    }
    let cache = step_cached(layer, x, &state.h, &state.c);
    Ok(LstmState { h: cache.h, c: cache.c })
}

pub(crate) fn step_cached(layer: &LstmLayerParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
    let n = layer.hidden_dim;
    let mut pre = vec![0.0; n];
    let mut gate = |w: &Matrix, b: &[f64], act: fn(f64) -> f64| -> Vec<f64> {
        w.matvec_split(x, h_prev, &mut pre);
        pre.iter().zip(b).map(|(p, b)| act(p + b)).collect()
    };
    let i = gate(&layer.w_input, &layer.b_input, sigmoid);
    let f = gate(&layer.w_forget, &layer.b_forget, sigmoid);
    let o = gate(&layer.w_output, &layer.b_output, sigmoid);
    let g = gate(&layer.w_cell, &layer.b_cell, f64::tanh);
    let c: Vec<f64> = (0..n).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..n).map(|k| o[k] * tanh_c[k]).collect();
    StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        o,
        g,
        tanh_c,
        h,
        c,
    }
}

/// Backpropagates one step. `dh` and `dc` are the total gradients reaching
/// `h'` and `c'`. Accumulates weight gradients into `grads` and returns
/// `(dx, dh_prev, dc_prev)`.
pub(crate) fn step_backward(
    layer: &LstmLayerParams,
    cache: &StepCache,
    dh: &[f64],
    dc: &[f64],
    grads: &mut LstmLayerParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = layer.hidden_dim;
    let mut da_i = vec![0.0; n];
    let mut da_f = vec![0.0; n];
    let mut da_o = vec![0.0; n];
    let mut da_g = vec![0.0; n];
    let mut dc_prev = vec![0.0; n];
    for k in 0..n {
        let (i, f, o, g, tc) = (cache.i[k], cache.f[k], cache.o[k], cache.g[k], cache.tanh_c[k]);
        let d_o = dh[k] * tc;
        let d_c = dc[k] + dh[k] * o * (1.0 - tc * tc);
        da_i[k] = d_c * g * i * (1.0 - i);
        da_f[k] = d_c * cache.c_prev[k] * f * (1.0 - f);
        da_o[k] = d_o * o * (1.0 - o);
        da_g[k] = d_c * i * (1.0 - g * g);
        dc_prev[k] = d_c * f;
    }
    let mut dxh = vec![0.0; layer.input_dim + n];
    for (w, gw, gb, da) in [
        (&layer.w_input, &mut grads.w_input, &mut grads.b_input, &da_i),
        (&layer.w_forget, &mut grads.w_forget, &mut grads.b_forget, &da_f),
        (&layer.w_output, &mut grads.w_output, &mut grads.b_output, &da_o),
        (&layer.w_cell, &mut grads.w_cell, &mut grads.b_cell, &da_g),
    ] {
        gw.add_outer_split(da, &cache.x, &cache.h_prev);
        gb.iter_mut().zip(da.iter()).for_each(|(b, d)| *b += d);
        w.add_transpose_matvec(da, &mut dxh);
    }
    let dh_prev = dxh.split_off(layer.input_dim);
    (dxh, dh_prev, dc_prev)
}
