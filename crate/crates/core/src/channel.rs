//! Dual-polarization fiber link: symmetric split-step Fourier integration of
//! the Manakov equation with lumped EDFA amplification after every span.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::spectral::{angular_frequencies, Spectral};
use crate::signal::{db_to_linear, SampledWaveform, C64, PLANCK, SPEED_OF_LIGHT};

/// Manakov nonlinear coefficient for randomly varying birefringence.
pub const MANAKOV_FACTOR: f64 = 8.0 / 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberParams {
    /// dB/km
    pub attenuation: f64,
    /// ps/(nm·km)
    pub dispersion_d: f64,
    /// 1/(W·km)
    pub nonlinear_gamma: f64,
    /// km
    pub span_length: f64,
    pub spans: usize,
}

impl Default for FiberParams {
    fn default() -> Self {
        Self {
            attenuation: 0.2,
            dispersion_d: 17.0,
            nonlinear_gamma: 1.3,
            span_length: 50.0,
            spans: 20,
        }
    }
}

impl FiberParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.attenuation >= 0.0) {
            return Err(Error::config("fiber attenuation must be ≥ 0"));
        }
        if !(self.span_length > 0.0) {
            return Err(Error::config("span length must be > 0"));
        }
        if self.spans < 1 {
            return Err(Error::config("link needs at least one span"));
        }
        Ok(())
    }

    /// Field-power attenuation coefficient α in 1/m.
    pub fn alpha(&self) -> f64 {
        self.attenuation * std::f64::consts::LN_10 / 10.0 / 1e3
    }

    /// Group-velocity dispersion β₂ in s²/m at `wavelength` (m).
    pub fn beta2(&self, wavelength: f64) -> f64 {
        // D [ps/(nm·km)] → s/m².
        let d_si = self.dispersion_d * 1e-12 / (1e-9 * 1e3);
        -d_si * wavelength * wavelength / (2.0 * std::f64::consts::PI * SPEED_OF_LIGHT)
    }

    /// γ in 1/(W·m).
    pub fn gamma(&self) -> f64 {
        self.nonlinear_gamma / 1e3
    }

    pub fn span_length_m(&self) -> f64 {
        self.span_length * 1e3
    }

    pub fn total_length_m(&self) -> f64 {
        self.span_length_m() * self.spans as f64
    }

    pub fn span_loss_db(&self) -> f64 {
        self.attenuation * self.span_length
    }

    /// `(1 − e^{−αL})/α` for a fiber section of `length` metres.
    pub fn effective_length(&self, length: f64) -> f64 {
        let a = self.alpha();
        if a == 0.0 {
            length
        } else {
            -(-a * length).exp_m1() / a
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplifierParams {
    /// dB
    pub noise_figure: f64,
    /// dB; `None` compensates the span loss exactly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(default = "default_true")]
    pub ase_enabled: bool,
}

fn default_true() -> bool {
    true
}

impl Default for AmplifierParams {
    fn default() -> Self {
        Self {
            noise_figure: 4.5,
            gain: None,
            ase_enabled: true,
        }
    }
}

impl AmplifierParams {
    pub fn noiseless() -> Self {
        Self {
            ase_enabled: false,
            ..Self::default()
        }
    }

    pub fn gain_db(&self, fiber: &FiberParams) -> f64 {
        self.gain.unwrap_or_else(|| fiber.span_loss_db())
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.gain {
            if g < 0.0 {
                return Err(Error::config(format!("amplifier gain must be ≥ 0 dB, got {g}")));
            }
        }
        if self.noise_figure < 3.0 {
            log::warn!(
                "noise figure {} dB is below the 3 dB quantum limit",
                self.noise_figure
            );
        }
        Ok(())
    }

    /// ASE power spectral density per quadrature per polarization, W/Hz.
    pub fn ase_psd_per_quadrature(&self, gain_linear: f64, carrier_hz: f64) -> f64 {
        (gain_linear - 1.0) * db_to_linear(self.noise_figure) * PLANCK * carrier_hz / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepScheme {
    Uniform,
    /// Steps sized for equal nonlinear phase per step under fiber loss.
    Logarithmic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsfmConfig {
    pub steps_per_span: usize,
    pub step_scheme: StepScheme,
    pub seed: u64,
}

impl Default for SsfmConfig {
    fn default() -> Self {
        Self {
            steps_per_span: 50,
            step_scheme: StepScheme::Uniform,
            seed: 1,
        }
    }
}

impl SsfmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_span < 1 {
            return Err(Error::config("steps_per_span must be ≥ 1"));
        }
        Ok(())
    }
}

/// Step lengths (m) partitioning one span.
pub fn step_lengths(fiber: &FiberParams, steps: usize, scheme: StepScheme) -> Vec<f64> {
    let len = fiber.span_length_m();
    let alpha = fiber.alpha();
    match scheme {
        StepScheme::Logarithmic if alpha > 0.0 => {
            let delta = -(-alpha * len).exp_m1() / steps as f64;
            let mut out: Vec<f64> = (1..=steps)
                .map(|n| {
                    let hi = 1.0 - n as f64 * delta;
                    let lo = 1.0 - (n - 1) as f64 * delta;
                    -(hi / lo).ln() / alpha
                })
                .collect();
            // Absorb rounding so the steps sum to the span length.
            let sum: f64 = out.iter().sum();
            if let Some(last) = out.last_mut() {
                *last += len - sum;
            }
            out
        }
        _ => vec![len / steps as f64; steps],
    }
}

/// Derives an independent stream seed from a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined key.
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fraction of the sampled band holding 99 % of the signal power.
pub fn band_occupancy(w: &SampledWaveform) -> f64 {
    let n = w.len();
    let mut spectral = Spectral::new(n);
    let mut power = vec![0.0; n];
    for pol in [&w.samples_x, &w.samples_y] {
        let mut buf = pol.clone();
        spectral.forward(&mut buf);
        for (p, v) in power.iter_mut().zip(&buf) {
            *p += v.norm_sqr();
        }
    }
    let mut bins: Vec<(usize, f64)> = power
        .into_iter()
        .enumerate()
        .map(|(k, p)| (k.min(n - k), p))
        .collect();
    bins.sort_by_key(|b| b.0);
    let total: f64 = bins.iter().map(|b| b.1).sum();
    if total == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (dist, p) in bins {
        acc += p;
        if acc >= 0.99 * total {
            return (2 * dist + 1) as f64 / n as f64;
        }
    }
    1.0
}

fn check_aliasing(w: &SampledWaveform) -> Result<()> {
    let occupancy = band_occupancy(w);
    if occupancy > 0.8 {
        return Err(Error::Aliasing {
            occupancy: occupancy * 100.0,
        });
    }
    Ok(())
}

/// Reusable split-step integrator for waveforms of one length and rate.
///
/// `direction` is +1 for forward propagation and −1 for digital
/// backpropagation; every step of the backward integrator is the exact
/// inverse of the corresponding forward step.
pub struct SplitStep {
    fiber: FiberParams,
    omega_sq: Vec<f64>,
    beta2: f64,
    fft_x: Spectral,
    fft_y: Spectral,
    /// Scale applied to γ (1.0 for physical propagation).
    pub nonlinear_scale: f64,
}

impl SplitStep {
    pub fn new(fiber: &FiberParams, len: usize, sample_rate: f64, wavelength: f64) -> Self {
        let omega_sq = angular_frequencies(len, sample_rate)
            .into_iter()
            .map(|w| w * w)
            .collect();
        Self {
            fiber: *fiber,
            omega_sq,
            beta2: fiber.beta2(wavelength),
            fft_x: Spectral::new(len),
            fft_y: Spectral::new(len),
            nonlinear_scale: 1.0,
        }
    }

    /// Frequency response of a linear section of `length` metres
    /// (negative lengths invert it).
    fn linear_response(&self, length: f64) -> Vec<C64> {
        let half_alpha = self.fiber.alpha() / 2.0;
        let b = self.beta2 / 2.0;
        self.omega_sq
            .iter()
            .map(|&w2| C64::from_polar((-half_alpha * length).exp(), b * w2 * length))
            .collect()
    }

    /// Nonlinear phase multiplier for a step of length `h` whose field is
    /// sampled at the step midpoint.
    fn nonlinear_length(&self, h: f64) -> f64 {
        // Power at the step start times L_eff, expressed through the mid-step power.
        (self.fiber.alpha() * h / 2.0).exp() * self.fiber.effective_length(h)
    }

    fn nonlinear_step(&self, x: &mut [C64], y: &mut [C64], coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        for (a, b) in x.iter_mut().zip(y.iter_mut()) {
            let phase = coeff * (a.norm_sqr() + b.norm_sqr());
            let rot = C64::from_polar(1.0, phase);
            *a *= rot;
            *b *= rot;
        }
    }

    fn apply_spectrum(buf: &mut [C64], h: &[C64]) {
        for (v, hk) in buf.iter_mut().zip(h) {
            *v *= hk;
        }
    }

    /// Runs the given steps over both polarizations in place. With
    /// `direction = −1` the steps are traversed in reverse with every operator
    /// inverted.
    fn run(&mut self, x: &mut [C64], y: &mut [C64], steps: &[f64], direction: f64) {
        let gamma = self.fiber.gamma() * self.nonlinear_scale * MANAKOV_FACTOR;
        let ordered: Vec<f64> = if direction > 0.0 {
            steps.to_vec()
        } else {
            steps.iter().rev().copied().collect()
        };
        self.fft_x.forward(x);
        self.fft_y.forward(y);
        let mut pending = 0.0;
        for &h in &ordered {
            let resp = self.linear_response(direction * (pending + h / 2.0));
            Self::apply_spectrum(x, &resp);
            Self::apply_spectrum(y, &resp);
            self.fft_x.inverse(x);
            self.fft_y.inverse(y);
            self.nonlinear_step(x, y, direction * gamma * self.nonlinear_length(h));
            self.fft_x.forward(x);
            self.fft_y.forward(y);
            pending = h / 2.0;
        }
        let resp = self.linear_response(direction * pending);
        Self::apply_spectrum(x, &resp);
        Self::apply_spectrum(y, &resp);
        self.fft_x.inverse(x);
        self.fft_y.inverse(y);
    }

    pub fn forward_span(&mut self, w: &mut SampledWaveform, steps: &[f64]) {
        self.run(&mut w.samples_x, &mut w.samples_y, steps, 1.0);
    }

    pub fn backward_span(&mut self, w: &mut SampledWaveform, steps: &[f64]) {
        self.run(&mut w.samples_x, &mut w.samples_y, steps, -1.0);
    }

    /// Pure linear all-pass section over `length` metres without loss.
    pub fn dispersion_only(&mut self, w: &mut SampledWaveform, length: f64) {
        let b = self.beta2 / 2.0;
        let resp: Vec<C64> = self
            .omega_sq
            .iter()
            .map(|&w2| C64::from_polar(1.0, b * w2 * length))
            .collect();
        for (pol, fft) in [
            (&mut w.samples_x, &mut self.fft_x),
            (&mut w.samples_y, &mut self.fft_y),
        ] {
            fft.forward(pol);
            Self::apply_spectrum(pol, &resp);
            fft.inverse(pol);
        }
    }
}

/// Propagates one fiber span with the symmetric split-step method.
pub fn propagate_span(
    w: &SampledWaveform,
    fiber: &FiberParams,
    cfg: &SsfmConfig,
) -> Result<SampledWaveform> {
    fiber.validate()?;
    cfg.validate()?;
    check_aliasing(w)?;
    let mut out = w.clone();
    let mut solver = SplitStep::new(fiber, w.len(), w.sample_rate, w.center_wavelength);
    let steps = step_lengths(fiber, cfg.steps_per_span, cfg.step_scheme);
    solver.forward_span(&mut out, &steps);
    Ok(out)
}

/// Lumped amplifier: field gain `√G` plus circular Gaussian ASE over the full
/// simulation bandwidth.
pub fn amplify(
    w: &SampledWaveform,
    amp: &AmplifierParams,
    fiber: &FiberParams,
    rng_seed: u64,
) -> SampledWaveform {
    let mut out = w.clone();
    amplify_in_place(&mut out, amp, fiber, rng_seed);
    out
}

fn amplify_in_place(w: &mut SampledWaveform, amp: &AmplifierParams, fiber: &FiberParams, seed: u64) {
    let g = db_to_linear(amp.gain_db(fiber));
    w.scale(g.sqrt());
    if !amp.ase_enabled {
        return;
    }
    let variance = amp.ase_psd_per_quadrature(g, w.carrier_frequency()) * w.sample_rate;
    let sigma = variance.sqrt();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for s in w.samples_x.iter_mut().chain(w.samples_y.iter_mut()) {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *s += C64::new(re * sigma, im * sigma);
    }
}

/// Full link: `spans` × (fiber span, amplifier). Span `i` draws its ASE from
/// `derive_seed(cfg.seed, i)`.
pub fn simulate_link(
    tx: &SampledWaveform,
    fiber: &FiberParams,
    amp: &AmplifierParams,
    cfg: &SsfmConfig,
) -> Result<SampledWaveform> {
    fiber.validate()?;
    amp.validate()?;
    cfg.validate()?;
    check_aliasing(tx)?;
    let mut w = tx.clone();
    let mut solver = SplitStep::new(fiber, w.len(), w.sample_rate, w.center_wavelength);
    let steps = step_lengths(fiber, cfg.steps_per_span, cfg.step_scheme);
    for span in 0..fiber.spans {
        solver.forward_span(&mut w, &steps);
        amplify_in_place(&mut w, amp, fiber, derive_seed(cfg.seed, span as u64));
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{dbm_to_watts, map_bits_to_symbols, random_bits, rrc_shape, ConstellationSpec};

    fn test_waveform(symbols: usize, sps: usize, power_dbm: f64, seed: u64) -> SampledWaveform {
        let spec = ConstellationSpec::default();
        let bits = random_bits(seed, 2 * 6 * symbols);
        let (bx, by) = bits.split_at(6 * symbols);
        let x = rrc_shape(&map_bits_to_symbols(bx, &spec).unwrap(), sps, 0.1, 32).unwrap();
        let y = rrc_shape(&map_bits_to_symbols(by, &spec).unwrap(), sps, 0.1, 32).unwrap();
        let mut w = SampledWaveform::new(x, y, 30e9 * sps as f64, 1550e-9).unwrap();
        let p = w.mean_power();
        w.scale((dbm_to_watts(power_dbm) / p).sqrt());
        w
    }

    fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn ssmf_constants() {
        let f = FiberParams::default();
        let b2 = f.beta2(1550e-9);
        assert!((b2 * 1e27 + 21.68).abs() < 0.01, "beta2 {b2}");
        assert!((f.alpha() - 4.605e-5).abs() < 1e-8);
        assert!((f.span_loss_db() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn logarithmic_steps_sum_to_span() {
        let f = FiberParams::default();
        let steps = step_lengths(&f, 10, StepScheme::Logarithmic);
        assert!((steps.iter().sum::<f64>() - 50e3).abs() < 1e-6);
        assert!(steps.windows(2).all(|w| w[1] > w[0]));
        // Equal nonlinear phase: ∫ e^{−αz} dz over each step.
        let a = f.alpha();
        let mut z = 0.0;
        let phases: Vec<f64> = steps
            .iter()
            .map(|h| {
                let p = (-a * z).exp() * f.effective_length(*h);
                z += h;
                p
            })
            .collect();
        for p in &phases {
            assert!((p - phases[0]).abs() / phases[0] < 1e-9);
        }
    }

    #[test]
    fn linear_lossless_span_is_invertible() {
        let fiber = FiberParams {
            nonlinear_gamma: 0.0,
            attenuation: 0.0,
            ..FiberParams::default()
        };
        let w = test_waveform(256, 4, 0.0, 1);
        let out = propagate_span(&w, &fiber, &SsfmConfig::default()).unwrap();
        let mut back = out.clone();
        let mut s = SplitStep::new(&fiber, w.len(), w.sample_rate, w.center_wavelength);
        s.dispersion_only(&mut back, -fiber.span_length_m());
        assert!(max_abs_diff(&back.samples_x, &w.samples_x) < 1e-9);
        assert!(max_abs_diff(&back.samples_y, &w.samples_y) < 1e-9);
    }

    #[test]
    fn lossless_span_conserves_energy() {
        let fiber = FiberParams {
            attenuation: 0.0,
            ..FiberParams::default()
        };
        let w = test_waveform(512, 4, 8.0, 2);
        let out = propagate_span(&w, &fiber, &SsfmConfig::default()).unwrap();
        let drift = (out.energy() - w.energy()).abs() / w.energy();
        assert!(drift < 1e-9, "drift {drift}");
    }

    #[test]
    fn zero_dispersion_is_pure_self_phase_modulation() {
        let fiber = FiberParams {
            attenuation: 0.0,
            dispersion_d: 0.0,
            spans: 1,
            ..FiberParams::default()
        };
        let w = test_waveform(256, 4, 10.0, 3);
        let out = propagate_span(&w, &fiber, &SsfmConfig::default()).unwrap();
        let l = fiber.span_length_m();
        for i in 0..w.len() {
            let p = w.samples_x[i].norm_sqr() + w.samples_y[i].norm_sqr();
            let rot = C64::from_polar(1.0, MANAKOV_FACTOR * fiber.gamma() * l * p);
            for (a, b) in [(w.samples_x[i], out.samples_x[i]), (w.samples_y[i], out.samples_y[i])] {
                assert!((b.norm() - a.norm()).abs() < 1e-12);
                assert!((b - a * rot).norm() < 1e-9 * a.norm().max(1e-3));
            }
        }
    }

    #[test]
    fn loss_is_applied_once_per_span() {
        let fiber = FiberParams {
            nonlinear_gamma: 0.0,
            ..FiberParams::default()
        };
        let w = test_waveform(128, 4, 0.0, 4);
        for scheme in [StepScheme::Uniform, StepScheme::Logarithmic] {
            let cfg = SsfmConfig {
                step_scheme: scheme,
                steps_per_span: 7,
                ..SsfmConfig::default()
            };
            let out = propagate_span(&w, &fiber, &cfg).unwrap();
            let loss_db = 10.0 * (w.energy() / out.energy()).log10();
            assert!((loss_db - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn step_refinement_converges() {
        let fiber = FiberParams {
            spans: 1,
            ..FiberParams::default()
        };
        let w = test_waveform(512, 4, 9.0, 5);
        let run = |steps| {
            let cfg = SsfmConfig {
                steps_per_span: steps,
                ..SsfmConfig::default()
            };
            propagate_span(&w, &fiber, &cfg).unwrap()
        };
        let rms = |a: &SampledWaveform, b: &SampledWaveform| {
            (a.samples_x
                .iter()
                .zip(&b.samples_x)
                .map(|(p, q)| (p - q).norm_sqr())
                .sum::<f64>()
                / a.len() as f64)
                .sqrt()
        };
        let (half, base, double) = (run(25), run(50), run(100));
        assert!(rms(&double, &base) < rms(&half, &base));
    }

    #[test]
    fn amplifier_without_ase_is_pure_gain() {
        let fiber = FiberParams::default();
        let w = test_waveform(64, 4, -3.0, 6);
        let out = amplify(&w, &AmplifierParams::noiseless(), &fiber, 9);
        for (a, b) in w.samples_x.iter().zip(&out.samples_x) {
            assert!((b - a * 10f64.sqrt()).norm() < 1e-15);
        }
    }

    #[test]
    fn ase_power_matches_configured_psd() {
        let fiber = FiberParams::default();
        let n = 1 << 20;
        let fs = 480e9;
        let zero = vec![C64::new(0.0, 0.0); n];
        let w = SampledWaveform::new(zero.clone(), zero, fs, 1550e-9).unwrap();
        let amp = AmplifierParams {
            gain: Some(10.0),
            ..AmplifierParams::default()
        };
        let out = amplify(&w, &amp, &fiber, 17);
        let nu = SPEED_OF_LIGHT / 1550e-9;
        let expected = 9.0 * 10f64.powf(0.45) * PLANCK * nu * fs;
        for pol in [&out.samples_x, &out.samples_y] {
            let p: f64 = pol.iter().map(|s| s.norm_sqr()).sum::<f64>() / n as f64;
            assert!((p / expected - 1.0).abs() < 0.05, "{p} vs {expected}");
        }
    }

    #[test]
    fn amplifier_is_seed_deterministic() {
        let fiber = FiberParams::default();
        let w = test_waveform(64, 4, 0.0, 7);
        let a = amplify(&w, &AmplifierParams::default(), &fiber, 42);
        let b = amplify(&w, &AmplifierParams::default(), &fiber, 42);
        assert_eq!(a, b);
        assert_ne!(a, amplify(&w, &AmplifierParams::default(), &fiber, 43));
    }

    #[test]
    fn single_span_link_is_span_then_amplifier() {
        let fiber = FiberParams {
            spans: 1,
            ..FiberParams::default()
        };
        let cfg = SsfmConfig {
            steps_per_span: 5,
            ..SsfmConfig::default()
        };
        let amp = AmplifierParams::default();
        let w = test_waveform(128, 4, 2.0, 8);
        let link = simulate_link(&w, &fiber, &amp, &cfg).unwrap();
        let manual = amplify(
            &propagate_span(&w, &fiber, &cfg).unwrap(),
            &amp,
            &fiber,
            derive_seed(cfg.seed, 0),
        );
        assert_eq!(link, manual);
        assert_eq!(link, simulate_link(&w, &fiber, &amp, &cfg).unwrap());
    }

    #[test]
    fn undersampled_waveform_is_rejected() {
        let fiber = FiberParams::default();
        // White noise fills the whole band.
        let x: Vec<C64> = (0..256u64)
            .map(|i| {
                let h = derive_seed(i, 0);
                C64::new((h & 0xffff) as f64 / 65536.0 - 0.5, (h >> 48) as f64 / 65536.0 - 0.5)
            })
            .collect();
        let w = SampledWaveform::new(x.clone(), x, 30e9, 1550e-9).unwrap();
        assert!(matches!(
            propagate_span(&w, &fiber, &SsfmConfig::default()),
            Err(Error::Aliasing { .. })
        ));
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(5, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
