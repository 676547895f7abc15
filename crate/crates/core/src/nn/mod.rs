//! Small float64 tensor engine with reverse-mode differentiation for
//! convolution, LSTM, LeakyReLU, losses and Adam.

mod adam;
mod checkpoint;
mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use checkpoint::{sha256, Checkpoint};
pub use graph::{conv_output_len, leaky_relu, mae, mse, Gradients, Graph, Padding, Var};
pub use params::ParamStore;
pub use tensor::Tensor;

use crate::error::Result;
use kernels::{lstm_step, LstmKernelWeights};
use tensor::expect_dim;

/// Weights of one LSTM direction; gate rows ordered input, forget, cell,
/// output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    /// `[4H, F]`
    pub w_ih: Tensor,
    /// `[4H, H]`
    pub w_hh: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

impl LstmWeights {
    pub fn zeros(features: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(vec![4 * hidden, features]),
            w_hh: Tensor::zeros(vec![4 * hidden, hidden]),
            bias: Tensor::zeros(vec![4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.w_ih.shape()[1]
    }
}

/// Convolution of `input` `[B, C_in, L]` with `weights` `[C_out, C_in, K]`.
pub fn conv1d(input: &Tensor, weights: &Tensor, bias: &Tensor, dilation: usize, padding: Padding) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.input(input.clone());
    let w = g.input(weights.clone());
    let b = g.input(bias.clone());
    let y = g.conv1d(x, w, b, dilation, padding)?;
    Ok(g.value(y).clone())
}

/// One LSTM step over a batch: `x_t` `[B, F]`, states `[B, H]`.
pub fn lstm_cell_step(x_t: &Tensor, h_prev: &Tensor, c_prev: &Tensor, weights: &LstmWeights) -> Result<(Tensor, Tensor)> {
    let (f, h) = (weights.features(), weights.hidden());
    x_t.expect_rank(2, "lstm step input")?;
    h_prev.expect_rank(2, "lstm step hidden")?;
    c_prev.expect_rank(2, "lstm step cell")?;
    let batch = x_t.shape()[0];
    expect_dim("lstm step features", f, x_t.shape()[1])?;
    expect_dim("lstm step hidden batch", batch, h_prev.shape()[0])?;
    expect_dim("lstm step hidden size", h, h_prev.shape()[1])?;
    expect_dim("lstm step cell batch", batch, c_prev.shape()[0])?;
    expect_dim("lstm step cell size", h, c_prev.shape()[1])?;
    let kw = LstmKernelWeights::<f64>::from_standard(f, h, weights.w_ih.data(), weights.w_hh.data(), weights.bias.data());
    let mut h_out = vec![0.0; batch * h];
    let mut c_out = vec![0.0; batch * h];
    let mut gates = vec![0.0; 4 * h];
    for n in 0..batch {
        lstm_step(
            &kw,
            &x_t.data()[n * f..(n + 1) * f],
            &h_prev.data()[n * h..(n + 1) * h],
            &c_prev.data()[n * h..(n + 1) * h],
            &mut gates,
            &mut h_out[n * h..(n + 1) * h],
            &mut c_out[n * h..(n + 1) * h],
        );
    }
    Ok((Tensor::new(vec![batch, h], h_out)?, Tensor::new(vec![batch, h], c_out)?))
}

/// Bidirectional LSTM: `x` `[B, L, F]` → `[B, L, 2H]`, forward states first.
pub fn bilstm_sequence(x: &Tensor, fwd: &LstmWeights, bwd: &LstmWeights) -> Result<Tensor> {
    let mut g = Graph::new();
    let y = bilstm_graph(&mut g, x.clone(), fwd, bwd)?;
    Ok(g.value(y).clone())
}

fn bilstm_graph(g: &mut Graph, x: Tensor, fwd: &LstmWeights, bwd: &LstmWeights) -> Result<Var> {
    let x = g.input(x);
    let (a, b, c) = (g.input(fwd.w_ih.clone()), g.input(fwd.w_hh.clone()), g.input(fwd.bias.clone()));
    let yf = g.lstm(x, a, b, c, false)?;
    let (a, b, c) = (g.input(bwd.w_ih.clone()), g.input(bwd.w_hh.clone()), g.input(bwd.bias.clone()));
    let yb = g.lstm(x, a, b, c, true)?;
    g.concat_last(yf, yb)
}
