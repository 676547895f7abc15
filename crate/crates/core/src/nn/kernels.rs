//! Per-sample compute kernels shared by the autodiff graph (float64) and the
//! inference engines (float32 or float64).
//!
//! Inner loops are written as contiguous `axpy` updates or multi-accumulator
//! dot products so they vectorize without reassociation flags.

use num_traits::Float;

/// `y[i] += a·x[i]`
#[inline]
pub fn axpy<T: Float>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

/// Dot product with eight independent partial sums (fixed summation order).
#[inline]
pub fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (ac, bc) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] = acc[l] + ac[l] * bc[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail = tail + a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Geometry of a 1-D convolution over one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels_in: usize,
    pub channels_out: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub len_in: usize,
    pub pad_left: usize,
    pub len_out: usize,
}

impl ConvGeometry {
    /// Output index range `[lo, hi)` whose tap `k` reads inside the input,
    /// and the input offset of that tap.
    #[inline]
    fn tap_range(&self, k: usize) -> (usize, usize, isize) {
        let off = (k * self.dilation) as isize - self.pad_left as isize;
        let lo = (-off).max(0) as usize;
        let hi = ((self.len_in as isize - off).max(0) as usize).min(self.len_out);
        (lo, hi.max(lo), off)
    }
}

/// Cross-correlation `y[co,t] = b[co] + Σ_{ci,k} w[co,ci,k]·x[ci, t + k·d − pad]`.
pub fn conv1d_forward<T: Float>(g: &ConvGeometry, x: &[T], w: &[T], b: &[T], y: &mut [T]) {
    let (cin, k) = (g.channels_in, g.kernel);
    for co in 0..g.channels_out {
        let out = &mut y[co * g.len_out..(co + 1) * g.len_out];
        out.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..cin {
            let xin = &x[ci * g.len_in..(ci + 1) * g.len_in];
            for kk in 0..k {
                let (lo, hi, off) = g.tap_range(kk);
                if lo >= hi {
                    continue;
                }
                let wv = w[(co * cin + ci) * k + kk];
                let src = (lo as isize + off) as usize;
                axpy(wv, &xin[src..src + hi - lo], &mut out[lo..hi]);
            }
        }
    }
}

/// Input gradient of one sample: `gx[ci, t+off] += w·gy[co, t]`.
pub fn conv1d_backward_input(g: &ConvGeometry, w: &[f64], gy: &[f64], gx: &mut [f64]) {
    let (cin, k) = (g.channels_in, g.kernel);
    for co in 0..g.channels_out {
        let gout = &gy[co * g.len_out..(co + 1) * g.len_out];
        for ci in 0..cin {
            let gin = &mut gx[ci * g.len_in..(ci + 1) * g.len_in];
            for kk in 0..k {
                let (lo, hi, off) = g.tap_range(kk);
                if lo >= hi {
                    continue;
                }
                let wv = w[(co * cin + ci) * k + kk];
                let dst = (lo as isize + off) as usize;
                axpy(wv, &gout[lo..hi], &mut gin[dst..dst + hi - lo]);
            }
        }
    }
}

/// Accumulates the weight and bias gradient rows of output channel `co`
/// from one sample.
pub fn conv1d_backward_params(
    g: &ConvGeometry,
    co: usize,
    x: &[f64],
    gy: &[f64],
    gw_row: &mut [f64],
    gb: &mut f64,
) {
    let (cin, k) = (g.channels_in, g.kernel);
    let gout = &gy[co * g.len_out..(co + 1) * g.len_out];
    *gb += gout.iter().sum::<f64>();
    for ci in 0..cin {
        let xin = &x[ci * g.len_in..(ci + 1) * g.len_in];
        for kk in 0..k {
            let (lo, hi, off) = g.tap_range(kk);
            if lo >= hi {
                continue;
            }
            let src = (lo as isize + off) as usize;
            gw_row[ci * k + kk] += dot(&gout[lo..hi], &xin[src..src + hi - lo]);
        }
    }
}

pub fn leaky_relu_in_place<T: Float>(x: &mut [T], slope: T) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

#[inline]
fn sigmoid<T: Float>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// LSTM weights in the transposed layout used by the kernels: row `j` of
/// `w_ih_t`/`w_hh_t` holds the contributions of input/hidden unit `j` to all
/// `4·hidden` gate pre-activations, ordered (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct LstmKernelWeights<T> {
    pub features: usize,
    pub hidden: usize,
    pub w_ih_t: Vec<T>,
    pub w_hh_t: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Float> LstmKernelWeights<T> {
    /// From row-major `w_ih` `[4H, F]`, `w_hh` `[4H, H]` and `bias` `[4H]`.
    pub fn from_standard(
        features: usize,
        hidden: usize,
        w_ih: &[f64],
        w_hh: &[f64],
        bias: &[f64],
    ) -> Self {
        let g = 4 * hidden;
        let cast = |v: f64| T::from(v).expect("finite weight");
        let mut w_ih_t = vec![T::zero(); features * g];
        let mut w_hh_t = vec![T::zero(); hidden * g];
        for r in 0..g {
            for f in 0..features {
                w_ih_t[f * g + r] = cast(w_ih[r * features + f]);
            }
            for j in 0..hidden {
                w_hh_t[j * g + r] = cast(w_hh[r * hidden + j]);
            }
        }
        Self {
            features,
            hidden,
            w_ih_t,
            w_hh_t,
            bias: bias.iter().map(|&b| cast(b)).collect(),
        }
    }
}

/// Gate activations and states of one step, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct LstmStepCache {
    /// Post-activation gates `[i | f | g | o]`, `4·hidden`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
}

/// One LSTM step for a single sample:
/// `i,f,o = σ(·)`, `g = tanh(·)`, `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
/// `gates` receives the post-activation gate values.
pub fn lstm_step<T: Float>(
    w: &LstmKernelWeights<T>,
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
    gates: &mut [T],
    h: &mut [T],
    c: &mut [T],
) {
    let hd = w.hidden;
    let g4 = 4 * hd;
    gates.copy_from_slice(&w.bias);
    for (f, &xv) in x.iter().enumerate() {
        axpy(xv, &w.w_ih_t[f * g4..(f + 1) * g4], gates);
    }
    for (j, &hv) in h_prev.iter().enumerate() {
        axpy(hv, &w.w_hh_t[j * g4..(j + 1) * g4], gates);
    }
    for j in 0..hd {
        let i = sigmoid(gates[j]);
        let fg = sigmoid(gates[hd + j]);
        let gg = gates[2 * hd + j].tanh();
        let o = sigmoid(gates[3 * hd + j]);
        gates[j] = i;
        gates[hd + j] = fg;
        gates[2 * hd + j] = gg;
        gates[3 * hd + j] = o;
        c[j] = fg * c_prev[j] + i * gg;
        h[j] = o * c[j].tanh();
    }
}

/// Reverse-mode step for a single sample. Given the upstream gradients of
/// `h` and `c`, accumulates parameter gradients (transposed layout) and
/// writes the gradients of `x`, `h_prev` and `c_prev`.
#[allow(clippy::too_many_arguments)]
pub fn lstm_step_backward(
    w: &LstmKernelWeights<f64>,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    gates: &[f64],
    c: &[f64],
    dh: &[f64],
    dc_in: &[f64],
    grads: &mut LstmKernelWeights<f64>,
    dx: &mut [f64],
    dh_prev: &mut [f64],
    dc_prev: &mut [f64],
    dpre: &mut [f64],
) {
    let hd = w.hidden;
    let g4 = 4 * hd;
    for j in 0..hd {
        let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
        let tc = c[j].tanh();
        let dcj = dc_in[j] + dh[j] * o * (1.0 - tc * tc);
        dpre[j] = dcj * g * i * (1.0 - i);
        dpre[hd + j] = dcj * c_prev[j] * f * (1.0 - f);
        dpre[2 * hd + j] = dcj * i * (1.0 - g * g);
        dpre[3 * hd + j] = dh[j] * tc * o * (1.0 - o);
        dc_prev[j] = dcj * f;
    }
    for (b, d) in grads.bias.iter_mut().zip(dpre.iter()) {
        *b += d;
    }
    for (fe, &xv) in x.iter().enumerate() {
        axpy(xv, dpre, &mut grads.w_ih_t[fe * g4..(fe + 1) * g4]);
        dx[fe] = dot(&w.w_ih_t[fe * g4..(fe + 1) * g4], dpre);
    }
    for (j, &hv) in h_prev.iter().enumerate() {
        axpy(hv, dpre, &mut grads.w_hh_t[j * g4..(j + 1) * g4]);
        dh_prev[j] = dot(&w.w_hh_t[j * g4..(j + 1) * g4], dpre);
    }
}

/// Runs one direction of an LSTM over a single sample `x` (`[len, F]`),
/// writing `h_t` into `out[t·out_stride + out_offset ..][..hidden]`.
/// With `reverse` the sequence is consumed from `t = len−1` down to 0.
/// When `cache` is given it receives one entry per processed step, in
/// processing order.
pub fn lstm_sequence<T: Float>(
    w: &LstmKernelWeights<T>,
    x: &[T],
    len: usize,
    reverse: bool,
    out: &mut [T],
    out_stride: usize,
    out_offset: usize,
    mut cache: Option<&mut Vec<(Vec<T>, Vec<T>)>>,
) {
    let (fd, hd) = (w.features, w.hidden);
    let mut h = vec![T::zero(); hd];
    let mut c = vec![T::zero(); hd];
    let mut h_new = vec![T::zero(); hd];
    let mut c_new = vec![T::zero(); hd];
    let mut gates = vec![T::zero(); 4 * hd];
    for s in 0..len {
        let t = if reverse { len - 1 - s } else { s };
        lstm_step(w, &x[t * fd..(t + 1) * fd], &h, &c, &mut gates, &mut h_new, &mut c_new);
        std::mem::swap(&mut h, &mut h_new);
        std::mem::swap(&mut c, &mut c_new);
        out[t * out_stride + out_offset..t * out_stride + out_offset + hd].copy_from_slice(&h);
        if let Some(cache) = cache.as_deref_mut() {
            cache.push((gates.clone(), c.clone()));
        }
    }
}

/// Backpropagation through time for one direction of one sample.
/// `gout` has the layout of `out` in [`lstm_sequence`]; `dx` (`[len, F]`)
/// is accumulated into.
#[allow(clippy::too_many_arguments)]
pub fn lstm_sequence_backward(
    w: &LstmKernelWeights<f64>,
    x: &[f64],
    len: usize,
    reverse: bool,
    cache: &[(Vec<f64>, Vec<f64>)],
    gout: &[f64],
    out_stride: usize,
    out_offset: usize,
    grads: &mut LstmKernelWeights<f64>,
    dx: &mut [f64],
) {
    let (fd, hd) = (w.features, w.hidden);
    let zeros = vec![0.0; hd];
    let mut dh = vec![0.0; hd];
    let mut dc = vec![0.0; hd];
    let mut dh_prev = vec![0.0; hd];
    let mut dc_prev = vec![0.0; hd];
    let mut dpre = vec![0.0; 4 * hd];
    let mut dx_t = vec![0.0; fd];
    // h_{s−1} for step s is the output written at the previous processing step.
    let h_at = |s: usize| -> Vec<f64> {
        let (gates, c) = &cache[s];
        (0..hd).map(|j| gates[3 * hd + j] * c[j].tanh()).collect()
    };
    for s in (0..len).rev() {
        let t = if reverse { len - 1 - s } else { s };
        let g = &gout[t * out_stride + out_offset..t * out_stride + out_offset + hd];
        for j in 0..hd {
            dh[j] += g[j];
        }
        let (h_prev, c_prev) = if s == 0 {
            (zeros.clone(), zeros.clone())
        } else {
            (h_at(s - 1), cache[s - 1].1.clone())
        };
        let (gates, c) = &cache[s];
        lstm_step_backward(
            w,
            &x[t * fd..(t + 1) * fd],
            &h_prev,
            &c_prev,
            gates,
            c,
            &dh,
            &dc,
            grads,
            &mut dx_t,
            &mut dh_prev,
            &mut dc_prev,
            &mut dpre,
        );
        for (d, v) in dx[t * fd..(t + 1) * fd].iter_mut().zip(&dx_t) {
            *d += v;
        }
        dh.copy_from_slice(&dh_prev);
        dc.copy_from_slice(&dc_prev);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.3).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn conv_identity_kernel() {
        let g = ConvGeometry {
            channels_in: 1,
            channels_out: 1,
            kernel: 1,
            dilation: 1,
            len_in: 5,
            pad_left: 0,
            len_out: 5,
        };
        let x = [1.0, -2.0, 3.0, 0.5, 4.0];
        let mut y = [0.0; 5];
        conv1d_forward(&g, &x, &[1.0], &[0.0], &mut y);
        assert_eq!(x, y);
    }

    #[test]
    fn conv_matches_direct_definition() {
        let g = ConvGeometry {
            channels_in: 2,
            channels_out: 3,
            kernel: 3,
            dilation: 2,
            len_in: 11,
            pad_left: 2,
            len_out: 11,
        };
        let x: Vec<f64> = (0..22).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let w: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = [0.1, -0.2, 0.3];
        let mut y = vec![0.0; 33];
        conv1d_forward(&g, &x, &w, &b, &mut y);
        for co in 0..3 {
            for t in 0..11 {
                let mut acc = b[co];
                for ci in 0..2 {
                    for k in 0..3 {
                        let idx = t as isize + (k * 2) as isize - 2;
                        if (0..11).contains(&idx) {
                            acc += w[(co * 2 + ci) * 3 + k] * x[ci * 11 + idx as usize];
                        }
                    }
                }
                assert!((y[co * 11 + t] - acc).abs() < 1e-12);
            }
        }
    }
}
