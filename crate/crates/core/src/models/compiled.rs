//! Inference-only form of a trained model at float32 or float64.
//!
//! Weights are converted and laid out once in [`CompiledModel::new`]; the
//! per-window entry points only allocate activation buffers.

use std::sync::atomic::{AtomicUsize, Ordering};

use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModelSpec, FEATURES, OUTPUTS};
use crate::error::{Error, Result};
use crate::nn::kernels::{conv1d_forward, leaky_relu_in_place, lstm_sequence, ConvGeometry, LstmKernelWeights};
use crate::nn::{conv_output_len, Padding, ParamStore};

static COMPILED: AtomicUsize = AtomicUsize::new(0);

/// Number of weight compilations so far in this process. Benchmarks read it
/// around their timed region to prove no weights were laid out inside it.
pub fn compile_count() -> usize {
    COMPILED.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Float32,
    Float64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Float32 => "float32",
            Precision::Float64 => "float64",
        }
    }
}

#[derive(Debug, Clone)]
struct ConvLayer<T> {
    c_in: usize,
    c_out: usize,
    kernel: usize,
    dilation: usize,
    padding: Padding,
    w: Vec<T>,
    b: Vec<T>,
}

impl<T: Float> ConvLayer<T> {
    fn from_params(params: &ParamStore, prefix: &str, dilation: usize, padding: Padding) -> Result<Self> {
        let w = params.get(&format!("{prefix}.weight"))?;
        let b = params.get(&format!("{prefix}.bias"))?;
        let s = w.shape();
        Ok(Self {
            c_out: s[0],
            c_in: s[1],
            kernel: s[2],
            dilation,
            padding,
            w: cast_all(w.data()),
            b: cast_all(b.data()),
        })
    }

    /// `[c_in, len]` → `[c_out, len_out]`
    fn apply(&self, x: &[T], len: usize) -> Result<(Vec<T>, usize)> {
        let len_out = conv_output_len(len, self.kernel, self.dilation, self.padding).ok_or_else(|| {
            Error::Dimension {
                axis: "conv input length".into(),
                expected: (self.kernel - 1) * self.dilation + 1,
                actual: len,
            }
        })?;
        let geom = ConvGeometry {
            channels_in: self.c_in,
            channels_out: self.c_out,
            kernel: self.kernel,
            dilation: self.dilation,
            len_in: len,
            pad_left: match self.padding {
                Padding::Valid => 0,
                Padding::Same => (self.kernel - 1) * self.dilation / 2,
            },
            len_out,
        };
        let mut y = vec![T::zero(); self.c_out * len_out];
        conv1d_forward(&geom, x, &self.w, &self.b, &mut y);
        Ok((y, len_out))
    }
}

fn cast_all<T: Float>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from(x).expect("finite parameter")).collect()
}

#[derive(Debug, Clone)]
enum Body<T> {
    Teacher {
        fwd: LstmKernelWeights<T>,
        bwd: LstmKernelWeights<T>,
    },
    Student {
        layers: Vec<ConvLayer<T>>,
        slope: T,
        bidirectional: bool,
    },
}

#[derive(Debug, Clone)]
pub struct CompiledModel<T> {
    body: Body<T>,
    head: ConvLayer<T>,
}

fn transpose<T: Copy>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for c in 0..cols {
        for r in 0..rows {
            out.push(x[r * cols + c]);
        }
    }
    out
}

impl<T: Float + Send + Sync> CompiledModel<T> {
    pub fn new(model: &super::Model) -> Result<Self> {
        COMPILED.fetch_add(1, Ordering::Relaxed);
        let p = model.params();
        let (body, head) = match model.spec() {
            ModelSpec::Teacher(t) => {
                let dir = |name: &str| -> Result<LstmKernelWeights<T>> {
                    Ok(LstmKernelWeights::from_standard(
                        t.input_features,
                        t.bilstm_hidden,
                        p.get(&format!("{name}.w_ih"))?.data(),
                        p.get(&format!("{name}.w_hh"))?.data(),
                        p.get(&format!("{name}.bias"))?.data(),
                    ))
                };
                (
                    Body::Teacher {
                        fwd: dir("lstm_fwd")?,
                        bwd: dir("lstm_bwd")?,
                    },
                    ConvLayer::from_params(p, "head", 1, Padding::Valid)?,
                )
            }
            ModelSpec::Student(s) => {
                let layers = s
                    .hidden_layers
                    .iter()
                    .enumerate()
                    .map(|(i, l)| ConvLayer::from_params(p, &format!("conv{i}"), l.dilation, s.hidden_padding))
                    .collect::<Result<Vec<_>>>()?;
                (
                    Body::Student {
                        layers,
                        slope: T::from(s.leaky_slope).expect("finite slope"),
                        bidirectional: s.bidirectional_input,
                    },
                    ConvLayer::from_params(p, "head", 1, Padding::Valid)?,
                )
            }
        };
        Ok(Self { body, head })
    }

    /// One window `[len, 4]` (time-major) → `[len_out, 2]`.
    ///
    /// The teacher runs its recurrences strictly step by step; there is no
    /// entry point that evaluates time steps in parallel.
    pub fn infer_window(&self, x: &[T]) -> Result<Vec<T>> {
        if x.is_empty() || x.len() % FEATURES != 0 {
            return Err(Error::Dimension {
                axis: "window values".into(),
                expected: FEATURES,
                actual: x.len(),
            });
        }
        let len = x.len() / FEATURES;
        let (channels, len_in) = match &self.body {
            Body::Teacher { fwd, bwd } => {
                let h = fwd.hidden;
                let mut states = vec![T::zero(); len * 2 * h];
                lstm_sequence(fwd, x, len, false, &mut states, 2 * h, 0, None);
                lstm_sequence(bwd, x, len, true, &mut states, 2 * h, h, None);
                (transpose(&states, len, 2 * h), len)
            }
            Body::Student {
                layers,
                slope,
                bidirectional,
            } => {
                let c = if *bidirectional { 2 * FEATURES } else { FEATURES };
                let mut h = vec![T::zero(); c * len];
                for t in 0..len {
                    for f in 0..FEATURES {
                        h[f * len + t] = x[t * FEATURES + f];
                        if *bidirectional {
                            h[(FEATURES + f) * len + t] = x[(len - 1 - t) * FEATURES + f];
                        }
                    }
                }
                let mut cur_len = len;
                for l in layers {
                    let (mut y, n) = l.apply(&h, cur_len)?;
                    leaky_relu_in_place(&mut y, *slope);
                    h = y;
                    cur_len = n;
                }
                (h, cur_len)
            }
        };
        let (y, len_out) = self.head.apply(&channels, len_in)?;
        Ok(transpose(&y, OUTPUTS, len_out))
    }

    /// `n` windows, processed in parallel on the current rayon pool;
    /// outputs are concatenated in window order.
    pub fn infer_batch_native(&self, inputs: &[T], n: usize) -> Result<Vec<T>> {
        if n == 0 || inputs.len() % n != 0 {
            return Err(Error::Dimension {
                axis: "window batch values".into(),
                expected: n,
                actual: inputs.len(),
            });
        }
        let per = inputs.len() / n;
        let outs = inputs
            .par_chunks(per)
            .map(|w| self.infer_window(w))
            .collect::<Result<Vec<_>>>()?;
        Ok(outs.concat())
    }

    /// As [`Self::infer_batch_native`] with float64 input and output.
    pub fn infer_batch(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        let x: Vec<T> = cast_all(inputs);
        let y = self.infer_batch_native(&x, n)?;
        Ok(y.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
    }
}
