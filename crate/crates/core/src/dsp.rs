//! Receiver reference chain: dispersion compensation, digital backpropagation,
//! matched filtering and symbol-rate decimation.

use serde::{Deserialize, Serialize};

use crate::channel::{step_lengths, AmplifierParams, FiberParams, SplitStep, StepScheme};
use crate::error::{Error, Result};
use crate::signal::{db_to_linear, downsample, matched_filter, PulseShape, SampledWaveform, SymbolFrame, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// One complex scalar per polarization fitted to the transmitted symbols.
    LeastSquares,
    /// Rescale to unit mean power only.
    BlindPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DspChainConfig {
    pub cdc_enabled: bool,
    /// 0 disables backpropagation.
    pub dbp_steps_per_span: usize,
    pub downsample_phase: usize,
    pub normalization: Normalization,
    /// Multiplier on γ used by backpropagation.
    #[serde(default = "unit")]
    pub dbp_nonlinear_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for DspChainConfig {
    fn default() -> Self {
        Self::cdc()
    }
}

impl DspChainConfig {
    pub fn cdc() -> Self {
        Self {
            cdc_enabled: true,
            dbp_steps_per_span: 0,
            downsample_phase: 0,
            normalization: Normalization::LeastSquares,
            dbp_nonlinear_scale: 1.0,
        }
    }

    pub fn dbp(steps_per_span: usize) -> Self {
        Self {
            cdc_enabled: false,
            dbp_steps_per_span: steps_per_span,
            ..Self::cdc()
        }
    }

    /// No dispersion compensation at all.
    pub fn raw() -> Self {
        Self {
            cdc_enabled: false,
            ..Self::cdc()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cdc_enabled && self.dbp_steps_per_span > 0 {
            return Err(Error::config("CDC and DBP are mutually exclusive"));
        }
        Ok(())
    }
}

/// Inverts the accumulated chromatic dispersion of the whole link with a
/// single all-pass filter.
pub fn cdc(w: &SampledWaveform, fiber: &FiberParams) -> SampledWaveform {
    let mut out = w.clone();
    let mut solver = SplitStep::new(fiber, w.len(), w.sample_rate, w.center_wavelength);
    solver.dispersion_only(&mut out, -fiber.total_length_m());
    out
}

/// Magnitude and phase of the CDC filter at each DFT bin.
pub fn cdc_response(fiber: &FiberParams, len: usize, sample_rate: f64, wavelength: f64) -> Vec<C64> {
    let b2 = fiber.beta2(wavelength);
    let l = fiber.total_length_m();
    crate::signal::spectral::angular_frequencies(len, sample_rate)
        .into_iter()
        .map(|w| C64::from_polar(1.0, -b2 / 2.0 * w * w * l))
        .collect()
}

/// Digital backpropagation: spans are undone last-to-first, each by removing
/// the amplifier gain and running the split-step integrator backwards.
pub fn dbp(
    w: &SampledWaveform,
    fiber: &FiberParams,
    amp: &AmplifierParams,
    steps_per_span: usize,
) -> Result<SampledWaveform> {
    dbp_scaled(w, fiber, amp, steps_per_span, 1.0)
}

pub fn dbp_scaled(
    w: &SampledWaveform,
    fiber: &FiberParams,
    amp: &AmplifierParams,
    steps_per_span: usize,
    nonlinear_scale: f64,
) -> Result<SampledWaveform> {
    if steps_per_span < 1 {
        return Err(Error::config("DBP needs at least one step per span"));
    }
    let mut out = w.clone();
    let mut solver = SplitStep::new(fiber, w.len(), w.sample_rate, w.center_wavelength);
    solver.nonlinear_scale = nonlinear_scale;
    let steps = step_lengths(fiber, steps_per_span, StepScheme::Uniform);
    let inv_gain = 1.0 / db_to_linear(amp.gain_db(fiber)).sqrt();
    for _ in 0..fiber.spans {
        out.scale(inv_gain);
        solver.backward_span(&mut out, &steps);
    }
    Ok(out)
}

/// Least-squares complex scalar `a` minimizing `Σ|a·rx − tx|²`.
pub fn least_squares_scalar(rx: &[C64], tx: &[C64]) -> C64 {
    let num: C64 = rx.iter().zip(tx).map(|(r, t)| r.conj() * t).sum();
    let den: f64 = rx.iter().map(|r| r.norm_sqr()).sum();
    if den == 0.0 {
        C64::new(1.0, 0.0)
    } else {
        num / den
    }
}

fn normalize(rx: &mut [C64], tx: &[C64], mode: Normalization) {
    let a = match mode {
        Normalization::LeastSquares => least_squares_scalar(rx, tx),
        Normalization::BlindPower => {
            let p: f64 = rx.iter().map(|r| r.norm_sqr()).sum::<f64>() / rx.len().max(1) as f64;
            C64::new(if p > 0.0 { 1.0 / p.sqrt() } else { 1.0 }, 0.0)
        }
    };
    rx.iter_mut().for_each(|r| *r *= a);
}

/// Linear or nonlinear compensation, matched filtering, decimation to one
/// sample per symbol and per-polarization scalar normalization.
pub fn receiver_frontend(
    w: &SampledWaveform,
    tx_x: &[C64],
    tx_y: &[C64],
    cfg: &DspChainConfig,
    fiber: &FiberParams,
    amp: &AmplifierParams,
    shape: &PulseShape,
) -> Result<SymbolFrame> {
    cfg.validate()?;
    let compensated = if cfg.dbp_steps_per_span > 0 {
        dbp_scaled(w, fiber, amp, cfg.dbp_steps_per_span, cfg.dbp_nonlinear_scale)?
    } else if cfg.cdc_enabled {
        cdc(w, fiber)
    } else {
        w.clone()
    };
    let sps = shape.oversampling;
    let mut rx_x = downsample(&matched_filter(&compensated.samples_x, shape)?, sps, cfg.downsample_phase);
    let mut rx_y = downsample(&matched_filter(&compensated.samples_y, shape)?, sps, cfg.downsample_phase);
    if rx_x.len() != tx_x.len() || rx_y.len() != tx_y.len() {
        return Err(Error::Framing(format!(
            "decimated {} / {} symbols against {} / {} transmitted",
            rx_x.len(),
            rx_y.len(),
            tx_x.len(),
            tx_y.len()
        )));
    }
    normalize(&mut rx_x, tx_x, cfg.normalization);
    normalize(&mut rx_y, tx_y, cfg.normalization);
    SymbolFrame::new(tx_x.to_vec(), tx_y.to_vec(), rx_x, rx_y, w.sample_rate / sps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{simulate_link, SsfmConfig};
    use crate::signal::{dbm_to_watts, evm_db, map_bits_to_symbols, random_bits, rrc_shape, ConstellationSpec};

    fn tx(symbols: usize, sps: usize, dbm: f64) -> (Vec<C64>, Vec<C64>, SampledWaveform) {
        let spec = ConstellationSpec::default();
        let bits = random_bits(99, 12 * symbols);
        let sx = map_bits_to_symbols(&bits[..6 * symbols], &spec).unwrap();
        let sy = map_bits_to_symbols(&bits[6 * symbols..], &spec).unwrap();
        let mut w = SampledWaveform::new(
            rrc_shape(&sx, sps, 0.1, 32).unwrap(),
            rrc_shape(&sy, sps, 0.1, 32).unwrap(),
            30e9 * sps as f64,
            1550e-9,
        )
        .unwrap();
        let p = w.mean_power();
        w.scale((dbm_to_watts(dbm) / p).sqrt());
        (sx, sy, w)
    }

    #[test]
    fn zero_length_cdc_is_identity() {
        let (_, _, w) = tx(64, 4, 0.0);
        let fiber = FiberParams {
            span_length: 1e-30,
            spans: 1,
            ..FiberParams::default()
        };
        let out = cdc(&w, &fiber);
        for (a, b) in out.samples_x.iter().zip(&w.samples_x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn cdc_is_all_pass() {
        let h = cdc_response(&FiberParams::default(), 1024, 120e9, 1550e-9);
        assert!(h.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn cdc_inverts_linear_link() {
        let fiber = FiberParams {
            nonlinear_gamma: 0.0,
            spans: 3,
            ..FiberParams::default()
        };
        let (_, _, w) = tx(256, 4, 0.0);
        let cfg = SsfmConfig {
            steps_per_span: 2,
            ..SsfmConfig::default()
        };
        let rx = simulate_link(&w, &fiber, &AmplifierParams::noiseless(), &cfg).unwrap();
        let back = cdc(&rx, &fiber);
        for (a, b) in back.samples_x.iter().zip(&w.samples_x) {
            assert!((a - b).norm() < 1e-9);
        }
        let drift = (back.energy() - rx.energy()).abs() / rx.energy();
        assert!(drift < 1e-9);
    }

    #[test]
    fn dbp_without_nonlinearity_equals_cdc() {
        let fiber = FiberParams {
            spans: 4,
            ..FiberParams::default()
        };
        let (_, _, w) = tx(256, 4, 3.0);
        let a = dbp_scaled(&w, &fiber, &AmplifierParams::default(), 3, 0.0).unwrap();
        let b = cdc(&w, &fiber);
        for (p, q) in a.samples_x.iter().zip(&b.samples_x) {
            assert!((p - q).norm() < 1e-9 * w.mean_power().sqrt());
        }
    }

    #[test]
    fn matched_dbp_inverts_noiseless_link() {
        let fiber = FiberParams {
            spans: 3,
            ..FiberParams::default()
        };
        let cfg = SsfmConfig {
            steps_per_span: 4,
            ..SsfmConfig::default()
        };
        let amp = AmplifierParams::noiseless();
        let (_, _, w) = tx(512, 4, 6.0);
        let rx = simulate_link(&w, &fiber, &amp, &cfg).unwrap();
        let back = dbp(&rx, &fiber, &amp, 4).unwrap();
        let evm = evm_db(&back.samples_x, &w.samples_x);
        assert!(evm < -35.0, "EVM {evm}");
        let drift = (back.energy() - w.energy()).abs() / w.energy();
        assert!(drift < 1e-9);
    }

    #[test]
    fn mutually_exclusive_chains_rejected() {
        let cfg = DspChainConfig {
            dbp_steps_per_span: 1,
            ..DspChainConfig::cdc()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn back_to_back_frontend() {
        let (sx, sy, w) = tx(1024, 8, 0.0);
        let fiber = FiberParams {
            span_length: 1e-30,
            spans: 1,
            ..FiberParams::default()
        };
        let shape = PulseShape {
            oversampling: 8,
            rolloff: 0.1,
            span_symbols: 32,
        };
        let frame = receiver_frontend(
            &w,
            &sx,
            &sy,
            &DspChainConfig::cdc(),
            &fiber,
            &AmplifierParams::noiseless(),
            &shape,
        )
        .unwrap();
        assert!(evm_db(&frame.rx_symbols_x, &sx) < -40.0);
        assert!(evm_db(&frame.rx_symbols_y, &sy) < -40.0);
        // Refitting is a no-op.
        let a = least_squares_scalar(&frame.rx_symbols_x, &sx);
        assert!((a - C64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn least_squares_removes_rotation_and_gain() {
        let t: Vec<C64> = (0..50).map(|i| C64::new((i as f64).cos(), (i as f64 * 0.7).sin())).collect();
        let g = C64::from_polar(0.3, 1.1);
        let r: Vec<C64> = t.iter().map(|v| v * g).collect();
        let a = least_squares_scalar(&r, &t);
        assert!((a * g - C64::new(1.0, 0.0)).norm() < 1e-12);
        let mut once = r.clone();
        normalize(&mut once, &t, Normalization::LeastSquares);
        let mut twice = once.clone();
        normalize(&mut twice, &t, Normalization::LeastSquares);
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn frontend_rejects_misaligned_tx() {
        let (sx, sy, w) = tx(64, 4, 0.0);
        let shape = PulseShape {
            oversampling: 4,
            rolloff: 0.1,
            span_symbols: 16,
        };
        let err = receiver_frontend(
            &w,
            &sx[..60],
            &sy,
            &DspChainConfig::raw(),
            &FiberParams::default(),
            &AmplifierParams::default(),
            &shape,
        );
        assert!(matches!(err, Err(Error::Framing(_))));
    }
}
