//! Tape-based reverse-mode differentiation over a small, fixed operator set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernels::{
    conv1d_backward_input, conv1d_backward_params, conv1d_forward, lstm_sequence,
    lstm_sequence_backward, ConvGeometry, LstmKernelWeights,
};
use super::tensor::{expect_dim, Tensor};
use crate::error::{Error, Result};

/// Zero padding mode of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    /// Output length equals input length; zeros split symmetrically, any odd
    /// remainder on the right.
    Same,
}

/// Output length of a 1-D convolution.
pub fn conv_output_len(len: usize, kernel: usize, dilation: usize, padding: Padding) -> Option<usize> {
    match padding {
        Padding::Same => Some(len),
        Padding::Valid => len.checked_sub((kernel - 1) * dilation).filter(|&n| n > 0),
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type LstmCache = Vec<Vec<(Vec<f64>, Vec<f64>)>>;

enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
        batch: usize,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Lstm {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        reverse: bool,
        weights: Box<LstmKernelWeights<f64>>,
        cache: LstmCache,
    },
    ConcatLast {
        a: Var,
        b: Var,
    },
    SwapLast2 {
        x: Var,
    },
    Mse {
        a: Var,
        b: Var,
    },
    Mae {
        a: Var,
        b: Var,
    },
    SumSquares {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        s: f64,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. Nodes are appended in evaluation order, so the
/// reverse sweep is a plain walk backwards over the tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that needs them.
pub struct Gradients(Vec<Option<Vec<f64>>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.0.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.0.get_mut(v.0).and_then(Option::take)
    }
}

fn lstm_dims(x: &Tensor, w_ih: &Tensor, w_hh: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize)> {
    x.expect_rank(3, "lstm input")?;
    w_ih.expect_rank(2, "lstm w_ih")?;
    w_hh.expect_rank(2, "lstm w_hh")?;
    bias.expect_rank(1, "lstm bias")?;
    let (b, l, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let g4 = w_ih.shape()[0];
    if g4 % 4 != 0 || g4 == 0 {
        return Err(Error::Shape(format!("lstm gate rows {g4} not a positive multiple of 4")));
    }
    let h = g4 / 4;
    expect_dim("lstm w_ih input features", f, w_ih.shape()[1])?;
    expect_dim("lstm w_hh rows", g4, w_hh.shape()[0])?;
    expect_dim("lstm w_hh hidden", h, w_hh.shape()[1])?;
    expect_dim("lstm bias", g4, bias.shape()[0])?;
    Ok((b, l, f, h))
}

/// Transposed-layout gradients back to the `[4H, F]` / `[4H, H]` layout.
fn untranspose(g: &LstmKernelWeights<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (f, h) = (g.features, g.hidden);
    let g4 = 4 * h;
    let mut w_ih = vec![0.0; g4 * f];
    let mut w_hh = vec![0.0; g4 * h];
    for r in 0..g4 {
        for fe in 0..f {
            w_ih[r * f + fe] = g.w_ih_t[fe * g4 + r];
        }
        for j in 0..h {
            w_hh[r * h + j] = g.w_hh_t[j * g4 + r];
        }
    }
    (w_ih, w_hh, g.bias.clone())
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += v),
        None => *slot = Some(g.to_vec()),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant leaf; no gradient is propagated into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf (copied from `t`).
    pub fn param(&mut self, t: &Tensor) -> Var {
        let mut t = t.clone();
        t.zero_grad();
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// `x` `[B, C_in, L]`, `w` `[C_out, C_in, K]`, `b` `[C_out]` → `[B, C_out, L_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize, padding: Padding) -> Result<Var> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        xt.expect_rank(3, "conv input")?;
        wt.expect_rank(3, "conv weights")?;
        bt.expect_rank(1, "conv bias")?;
        let (batch, cin, len) = (xt.shape()[0], xt.shape()[1], xt.shape()[2]);
        let (cout, kernel) = (wt.shape()[0], wt.shape()[2]);
        expect_dim("conv input channels", wt.shape()[1], cin)?;
        expect_dim("conv bias", cout, bt.shape()[0])?;
        if kernel == 0 || dilation == 0 {
            return Err(Error::Shape("conv kernel and dilation must be positive".into()));
        }
        let len_out = conv_output_len(len, kernel, dilation, padding)
            .ok_or_else(|| Error::Dimension {
                axis: "conv input length".into(),
                expected: (kernel - 1) * dilation + 1,
                actual: len,
            })?;
        let pad_left = match padding {
            Padding::Valid => 0,
            Padding::Same => (kernel - 1) * dilation / 2,
        };
        let geom = ConvGeometry {
            channels_in: cin,
            channels_out: cout,
            kernel,
            dilation,
            len_in: len,
            pad_left,
            len_out,
        };
        let mut out = vec![0.0; batch * cout * len_out];
        let (xd, wd, bd) = (xt.data(), wt.data(), bt.data());
        out.par_chunks_mut(cout * len_out)
            .zip(xd.par_chunks(cin * len))
            .for_each(|(y, xs)| conv1d_forward(&geom, xs, wd, bd, y));
        let value = Tensor::new(vec![batch, cout, len_out], out)?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(value, Op::Conv1d { x, w, b, geom, batch }, ng))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let xt = self.value(x);
        let value = Tensor::from_fn(xt.shape().to_vec(), |i| leaky_relu(xt.data()[i], slope));
        let ng = self.needs(x);
        self.push(value, Op::LeakyRelu { x, slope }, ng)
    }

    /// One LSTM direction: `x` `[B, L, F]` → hidden states `[B, L, H]`.
    /// Gate rows of `w_ih` `[4H, F]`, `w_hh` `[4H, H]` and `bias` `[4H]` are
    /// ordered input, forget, cell, output.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var, reverse: bool) -> Result<Var> {
        let (xt, wi, wh, bt) = (self.value(x), self.value(w_ih), self.value(w_hh), self.value(bias));
        let (batch, len, f, h) = lstm_dims(xt, wi, wh, bt)?;
        let weights = LstmKernelWeights::<f64>::from_standard(f, h, wi.data(), wh.data(), bt.data());
        let results: Vec<(Vec<f64>, Vec<(Vec<f64>, Vec<f64>)>)> = xt
            .data()
            .par_chunks(len * f)
            .map(|xs| {
                let mut out = vec![0.0; len * h];
                let mut cache = Vec::with_capacity(len);
                lstm_sequence(&weights, xs, len, reverse, &mut out, h, 0, Some(&mut cache));
                (out, cache)
            })
            .collect();
        let mut data = Vec::with_capacity(batch * len * h);
        let mut cache = Vec::with_capacity(batch);
        for (o, c) in results {
            data.extend_from_slice(&o);
            cache.push(c);
        }
        let value = Tensor::new(vec![batch, len, h], data)?;
        let ng = [x, w_ih, w_hh, bias].iter().any(|&v| self.needs(v));
        Ok(self.push(
            value,
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                bias,
                reverse,
                weights: Box::new(weights),
                cache,
            },
            ng,
        ))
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        let (sa, sb) = (at.shape(), bt.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::Shape(format!("cannot concatenate {sa:?} and {sb:?}")));
        }
        let (la, lb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = at.numel() / la.max(1);
        let mut data = Vec::with_capacity(at.numel() + bt.numel());
        for r in 0..rows {
            data.extend_from_slice(&at.data()[r * la..(r + 1) * la]);
            data.extend_from_slice(&bt.data()[r * lb..(r + 1) * lb]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = la + lb;
        let value = Tensor::new(shape, data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatLast { a, b }, ng))
    }

    /// Transpose of the last two axes.
    pub fn swap_last2(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let s = xt.shape();
        if s.len() < 2 {
            return Err(Error::Shape(format!("swap_last2 needs rank ≥ 2, got {s:?}")));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let data = transpose_last2(xt.data(), r, c);
        let mut shape = s.to_vec();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        let value = Tensor::new(shape, data)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::SwapLast2 { x }, ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let v = mse(self.value(a).data(), self.value(b).data());
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(v), Op::Mse { a, b }, ng))
    }

    pub fn mae(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mae")?;
        let v = mae(self.value(a).data(), self.value(b).data());
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(v), Op::Mae { a, b }, ng))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let v = self.value(x).sum_squares();
        let ng = self.needs(x);
        self.push(Tensor::scalar(v), Op::SumSquares { x }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (at, bt) = (self.value(a), self.value(b));
        let value = Tensor::from_fn(at.shape().to_vec(), |i| at.data()[i] + bt.data()[i]);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xt = self.value(x);
        let value = Tensor::from_fn(xt.shape().to_vec(), |i| s * xt.data()[i]);
        let ng = self.needs(x);
        self.push(value, Op::Scale { x, s }, ng)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        expect_dim("backward root elements", 1, self.value(loss).numel())?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients(grads))
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Scale { x, s } => {
                if self.needs(*x) {
                    let gx: Vec<f64> = g.iter().map(|v| s * v).collect();
                    accumulate(&mut grads[x.0], &gx);
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if self.needs(*v) {
                        accumulate(&mut grads[v.0], g);
                    }
                }
            }
            Op::SumSquares { x } => {
                if self.needs(*x) {
                    let gx: Vec<f64> = self.value(*x).data().iter().map(|v| 2.0 * v * g[0]).collect();
                    accumulate(&mut grads[x.0], &gx);
                }
            }
            Op::Mse { a, b } => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let k = 2.0 * g[0] / ad.len() as f64;
                let d: Vec<f64> = ad.iter().zip(bd).map(|(x, y)| k * (x - y)).collect();
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], &d);
                }
                if self.needs(*b) {
                    let n: Vec<f64> = d.iter().map(|v| -v).collect();
                    accumulate(&mut grads[b.0], &n);
                }
            }
            Op::Mae { a, b } => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let k = g[0] / ad.len() as f64;
                let d: Vec<f64> = ad
                    .iter()
                    .zip(bd)
                    .map(|(x, y)| {
                        let diff = x - y;
                        if diff > 0.0 {
                            k
                        } else if diff < 0.0 {
                            -k
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], &d);
                }
                if self.needs(*b) {
                    let n: Vec<f64> = d.iter().map(|v| -v).collect();
                    accumulate(&mut grads[b.0], &n);
                }
            }
            Op::LeakyRelu { x, slope } => {
                if self.needs(*x) {
                    let xd = self.value(*x).data();
                    let gx: Vec<f64> = xd
                        .iter()
                        .zip(g)
                        .map(|(&v, &gv)| if v < 0.0 { slope * gv } else { gv })
                        .collect();
                    accumulate(&mut grads[x.0], &gx);
                }
            }
            Op::SwapLast2 { x } => {
                if self.needs(*x) {
                    let s = self.value(*x).shape();
                    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                    // g has the swapped shape (…, c, r)
                    let gx = transpose_last2(g, c, r);
                    accumulate(&mut grads[x.0], &gx);
                }
            }
            Op::ConcatLast { a, b } => {
                let la = *self.value(*a).shape().last().unwrap();
                let lb = *self.value(*b).shape().last().unwrap();
                let rows = g.len() / (la + lb).max(1);
                if self.needs(*a) {
                    let ga: Vec<f64> = (0..rows)
                        .flat_map(|r| g[r * (la + lb)..r * (la + lb) + la].iter().copied())
                        .collect();
                    accumulate(&mut grads[a.0], &ga);
                }
                if self.needs(*b) {
                    let gb: Vec<f64> = (0..rows)
                        .flat_map(|r| g[r * (la + lb) + la..(r + 1) * (la + lb)].iter().copied())
                        .collect();
                    accumulate(&mut grads[b.0], &gb);
                }
            }
            Op::Conv1d { x, w, b, geom, batch } => {
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                let (in_sz, out_sz) = (geom.channels_in * geom.len_in, geom.channels_out * geom.len_out);
                if self.needs(*x) {
                    let mut gx = vec![0.0; batch * in_sz];
                    gx.par_chunks_mut(in_sz)
                        .zip(g.par_chunks(out_sz))
                        .for_each(|(gxs, gys)| conv1d_backward_input(geom, wd, gys, gxs));
                    accumulate(&mut grads[x.0], &gx);
                }
                if self.needs(*w) || self.needs(*b) {
                    let row = geom.channels_in * geom.kernel;
                    let mut gw = vec![0.0; geom.channels_out * row];
                    let mut gb = vec![0.0; geom.channels_out];
                    gw.par_chunks_mut(row)
                        .zip(gb.par_iter_mut())
                        .enumerate()
                        .for_each(|(co, (gw_row, gbv))| {
                            for n in 0..*batch {
                                conv1d_backward_params(
                                    geom,
                                    co,
                                    &xd[n * in_sz..(n + 1) * in_sz],
                                    &g[n * out_sz..(n + 1) * out_sz],
                                    gw_row,
                                    gbv,
                                );
                            }
                        });
                    if self.needs(*w) {
                        accumulate(&mut grads[w.0], &gw);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], &gb);
                    }
                }
            }
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                bias,
                reverse,
                weights,
                cache,
            } => {
                let xt = self.value(*x);
                let (len, f) = (xt.shape()[1], xt.shape()[2]);
                let h = weights.hidden;
                let per_item: Vec<(LstmKernelWeights<f64>, Vec<f64>)> = xt
                    .data()
                    .par_chunks(len * f)
                    .zip(g.par_chunks(len * h))
                    .zip(cache.par_iter())
                    .map(|((xs, gs), c)| {
                        let mut pg = LstmKernelWeights {
                            features: f,
                            hidden: h,
                            w_ih_t: vec![0.0; weights.w_ih_t.len()],
                            w_hh_t: vec![0.0; weights.w_hh_t.len()],
                            bias: vec![0.0; 4 * h],
                        };
                        let mut dx = vec![0.0; len * f];
                        lstm_sequence_backward(weights, xs, len, *reverse, c, gs, h, 0, &mut pg, &mut dx);
                        (pg, dx)
                    })
                    .collect();
                let mut total = LstmKernelWeights {
                    features: f,
                    hidden: h,
                    w_ih_t: vec![0.0; weights.w_ih_t.len()],
                    w_hh_t: vec![0.0; weights.w_hh_t.len()],
                    bias: vec![0.0; 4 * h],
                };
                let mut gx = Vec::with_capacity(xt.numel());
                for (pg, dx) in &per_item {
                    for (a, v) in total.w_ih_t.iter_mut().zip(&pg.w_ih_t) {
                        *a += v;
                    }
                    for (a, v) in total.w_hh_t.iter_mut().zip(&pg.w_hh_t) {
                        *a += v;
                    }
                    for (a, v) in total.bias.iter_mut().zip(&pg.bias) {
                        *a += v;
                    }
                    gx.extend_from_slice(dx);
                }
                let (gi, gh, gbias) = untranspose(&total);
                if self.needs(*x) {
                    accumulate(&mut grads[x.0], &gx);
                }
                if self.needs(*w_ih) {
                    accumulate(&mut grads[w_ih.0], &gi);
                }
                if self.needs(*w_hh) {
                    accumulate(&mut grads[w_hh.0], &gh);
                }
                if self.needs(*bias) {
                    accumulate(&mut grads[bias.0], &gbias);
                }
            }
        }
    }
}

fn transpose_last2(data: &[f64], r: usize, c: usize) -> Vec<f64> {
    let block = r * c;
    let mut out = vec![0.0; data.len()];
    if block == 0 {
        return out;
    }
    for (src, dst) in data.chunks(block).zip(out.chunks_mut(block)) {
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x < 0.0 {
        slope * x
    } else {
        x
    }
}

/// Mean squared error over all elements.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "mse length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

/// Mean absolute error over all elements.
pub fn mae(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "mae length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
    }

    /// Central-difference check of d(loss)/d(leaf) for every leaf element.
    fn check_gradients(leaves: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Var) {
        let eval = |ts: &[Tensor]| {
            let mut g = Graph::new();
            let vs: Vec<Var> = ts.iter().map(|t| g.param(t)).collect();
            let l = build(&mut g, &vs);
            g.value(l).item()
        };
        let mut g = Graph::new();
        let vs: Vec<Var> = leaves.iter().map(|t| g.param(t)).collect();
        let l = build(&mut g, &vs);
        let grads = g.backward(l).unwrap();
        let h = 1e-5;
        for (li, v) in vs.iter().enumerate() {
            let analytic = grads.get(*v).expect("leaf gradient");
            for k in 0..leaves[li].numel() {
                let mut p = leaves.to_vec();
                p[li].data_mut()[k] += h;
                let mut m = leaves.to_vec();
                m[li].data_mut()[k] -= h;
                let numeric = (eval(&p) - eval(&m)) / (2.0 * h);
                let a = analytic[k];
                let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                assert!(err < 1e-4, "leaf {li}[{k}]: analytic {a}, numeric {numeric}, rel {err}");
            }
        }
    }

    #[test]
    fn conv_output_lengths() {
        assert_eq!(conv_output_len(221, 51, 1, Padding::Valid), Some(171));
        assert_eq!(conv_output_len(221, 3, 4, Padding::Valid), Some(213));
        assert_eq!(conv_output_len(221, 23, 4, Padding::Same), Some(221));
        assert_eq!(conv_output_len(10, 6, 2, Padding::Valid), None);
    }

    #[test]
    fn conv_rejects_mismatched_channels() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(vec![1, 3, 10]));
        let w = g.param(&Tensor::zeros(vec![2, 4, 3]));
        let b = g.param(&Tensor::zeros(vec![2]));
        let err = g.conv1d(x, w, b, 1, Padding::Valid).unwrap_err();
        assert!(err.to_string().contains("conv input channels"), "{err}");
    }

    #[test]
    fn conv_gradients_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..10 {
            let batch = rng.random_range(1..4);
            let cin = rng.random_range(1..4);
            let cout = rng.random_range(1..4);
            let k = rng.random_range(1..5);
            let d = rng.random_range(1..3);
            let padding = if case % 2 == 0 { Padding::Same } else { Padding::Valid };
            let len = (k - 1) * d + rng.random_range(1..6);
            let leaves = vec![
                rand_tensor(&mut rng, vec![batch, cin, len], 1.0),
                rand_tensor(&mut rng, vec![cout, cin, k], 1.0),
                rand_tensor(&mut rng, vec![cout], 1.0),
            ];
            let lout = conv_output_len(len, k, d, padding).unwrap();
            let target = rand_tensor(&mut rng, vec![batch, cout, lout], 1.0);
            check_gradients(&leaves, |g, v| {
                let y = g.conv1d(v[0], v[1], v[2], d, padding).unwrap();
                let y = g.leaky_relu(y, 0.01);
                let t = g.input(target.clone());
                g.mse(y, t).unwrap()
            });
        }
    }

    #[test]
    fn lstm_gradients_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for case in 0..10 {
            let batch = rng.random_range(1..3);
            let len = rng.random_range(1..6);
            let f = rng.random_range(1..4);
            let h = rng.random_range(1..4);
            let leaves = vec![
                rand_tensor(&mut rng, vec![batch, len, f], 1.0),
                rand_tensor(&mut rng, vec![4 * h, f], 0.8),
                rand_tensor(&mut rng, vec![4 * h, h], 0.8),
                rand_tensor(&mut rng, vec![4 * h], 0.5),
            ];
            let reverse = case % 2 == 1;
            let target = rand_tensor(&mut rng, vec![batch, len, h], 1.0);
            check_gradients(&leaves, |g, v| {
                let y = g.lstm(v[0], v[1], v[2], v[3], reverse).unwrap();
                let t = g.input(target.clone());
                g.mse(y, t).unwrap()
            });
        }
    }

    #[test]
    fn structural_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let leaves = vec![
            rand_tensor(&mut rng, vec![2, 3, 4], 1.0),
            rand_tensor(&mut rng, vec![2, 3, 2], 1.0),
            rand_tensor(&mut rng, vec![2, 6, 3], 1.0),
        ];
        let target = rand_tensor(&mut rng, vec![2, 6, 3], 1.0);
        check_gradients(&leaves, |g, v| {
            let c = g.concat_last(v[0], v[1]).unwrap();
            let s = g.swap_last2(c).unwrap();
            let s = g.scale(s, 0.7);
            let a = g.add(s, v[2]).unwrap();
            let t = g.input(target.clone());
            let l1 = g.mae(a, t).unwrap();
            let l2 = g.sum_squares(v[2]);
            let l2 = g.scale(l2, 0.1);
            g.add(l1, l2).unwrap()
        });
    }

    #[test]
    fn scalar_ops() {
        assert_eq!(leaky_relu(-2.0, 0.01), -0.02);
        assert_eq!(leaky_relu(3.0, 0.01), 3.0);
        let a = [1.0, -2.0, 3.5];
        assert_eq!(mse(&a, &a), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 3.0]), 5.0);
        assert_eq!(mae(&[0.0, 0.0], &[1.0, -3.0]), 2.0);
    }

    #[test]
    fn mismatched_loss_shapes_error() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(vec![2, 3]));
        let b = g.input(Tensor::zeros(vec![3, 2]));
        assert!(g.mse(a, b).is_err());
        assert!(g.mae(a, b).is_err());
    }

    #[test]
    fn inputs_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_fn(vec![1, 1, 4], |i| i as f64));
        let w = g.param(&Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap());
        let b = g.param(&Tensor::zeros(vec![1]));
        let y = g.conv1d(x, w, b, 1, Padding::Valid).unwrap();
        let l = g.sum_squares(y);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(x).is_none());
        // d/dw Σ(w·x)² = 2w·Σx² = 4·14
        assert!((grads.get(w).unwrap()[0] - 56.0).abs() < 1e-12);
    }
}
