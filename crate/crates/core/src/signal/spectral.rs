//! Cached FFT plans and frequency grids for circular (periodic-frame) processing.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use super::C64;

/// Forward/inverse FFT pair of a fixed length with unitary-free scaling:
/// `inverse(forward(x)) == x`.
pub struct Spectral {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<C64>,
}

impl Spectral {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            len,
            forward,
            inverse,
            scratch: vec![C64::new(0.0, 0.0); scratch_len],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&mut self, buf: &mut [C64]) {
        self.forward.process_with_scratch(buf, &mut self.scratch);
    }

    /// Inverse transform including the `1/N` factor.
    pub fn inverse(&mut self, buf: &mut [C64]) {
        self.inverse.process_with_scratch(buf, &mut self.scratch);
        let scale = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Angular frequency (rad/s) of each DFT bin in natural FFT order.
pub fn angular_frequencies(len: usize, sample_rate: f64) -> Vec<f64> {
    let df = sample_rate / len as f64;
    (0..len)
        .map(|k| {
            let signed = if k < len.div_ceil(2) {
                k as f64
            } else {
                k as f64 - len as f64
            };
            2.0 * std::f64::consts::PI * signed * df
        })
        .collect()
}

/// Circular convolution of `signal` with a centered real kernel (tap
/// `kernel.len()/2` sits at lag zero).
pub fn circular_convolve(signal: &[C64], kernel: &[f64]) -> Vec<C64> {
    let n = signal.len();
    let mut spectral = Spectral::new(n);
    let center = kernel.len() / 2;
    let mut h = vec![C64::new(0.0, 0.0); n];
    for (i, &tap) in kernel.iter().enumerate() {
        let lag = (i as isize - center as isize).rem_euclid(n as isize) as usize;
        h[lag] += tap;
    }
    spectral.forward(&mut h);
    let mut buf = signal.to_vec();
    spectral.forward(&mut buf);
    for (b, hk) in buf.iter_mut().zip(&h) {
        *b *= hk;
    }
    spectral.inverse(&mut buf);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let x: Vec<C64> = (0..37).map(|i| C64::new(i as f64, -(i as f64).sin())).collect();
        let mut s = Spectral::new(x.len());
        let mut buf = x.clone();
        s.forward(&mut buf);
        s.inverse(&mut buf);
        for (a, b) in buf.iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn frequency_grid_is_symmetric() {
        let w = angular_frequencies(8, 8.0);
        let tau = std::f64::consts::TAU;
        assert_eq!(w[0], 0.0);
        assert!((w[3] - 3.0 * tau).abs() < 1e-12);
        assert!((w[4] + 4.0 * tau).abs() < 1e-12);
        assert!((w[7] + tau).abs() < 1e-12);
    }

    #[test]
    fn circular_convolution_matches_direct_sum() {
        let x: Vec<C64> = (0..16).map(|i| C64::new((i * i % 7) as f64, i as f64)).collect();
        let k = [0.5, -1.0, 2.0, 0.25, 1.5];
        let y = circular_convolve(&x, &k);
        for (n, yn) in y.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for (i, &tap) in k.iter().enumerate() {
                let idx = (n as isize - (i as isize - 2)).rem_euclid(16) as usize;
                acc += x[idx] * tap;
            }
            assert!((acc - yn).norm() < 1e-12);
        }
    }
}
