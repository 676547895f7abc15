//! Symbol- and sample-domain data model shared by the simulator, the DSP chain
//! and the equalizers.

mod constellation;
mod framing;
mod shaping;
pub mod spectral;

pub use constellation::{demap_symbols_to_bits, map_bits_to_symbols, ConstellationSpec};
pub use framing::{slice_windows, Window, WindowSpec, Windows};
pub use shaping::{downsample, matched_filter, rrc_shape, rrc_taps, PulseShape};

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Speed of light in vacuum [m/s].
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Planck constant [J·s].
pub const PLANCK: f64 = 6.626_070_15e-34;

/// Dual-polarization complex baseband field.
///
/// The envelope is scaled so that the mean of `|x|² + |y|²` is the optical
/// power in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledWaveform {
    pub samples_x: Vec<C64>,
    pub samples_y: Vec<C64>,
    /// Hz
    pub sample_rate: f64,
    /// m
    pub center_wavelength: f64,
}

impl SampledWaveform {
    pub fn new(
        samples_x: Vec<C64>,
        samples_y: Vec<C64>,
        sample_rate: f64,
        center_wavelength: f64,
    ) -> Result<Self> {
        if samples_x.len() != samples_y.len() {
            return Err(Error::Dimension {
                axis: "polarization length".into(),
                expected: samples_x.len(),
                actual: samples_y.len(),
            });
        }
        if samples_x.is_empty() {
            return Err(Error::config("waveform must contain at least one sample"));
        }
        if !(sample_rate > 0.0) {
            return Err(Error::config(format!("sample rate must be positive, got {sample_rate}")));
        }
        Ok(Self {
            samples_x,
            samples_y,
            sample_rate,
            center_wavelength,
        })
    }

    pub fn len(&self) -> usize {
        self.samples_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples_x.is_empty()
    }

    /// Sum of `|x|² + |y|²` over all samples.
    pub fn energy(&self) -> f64 {
        self.samples_x
            .iter()
            .chain(&self.samples_y)
            .map(|s| s.norm_sqr())
            .sum()
    }

    /// Mean total power in watts.
    pub fn mean_power(&self) -> f64 {
        self.energy() / self.len() as f64
    }

    pub fn carrier_frequency(&self) -> f64 {
        SPEED_OF_LIGHT / self.center_wavelength
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.samples_x.iter_mut().chain(self.samples_y.iter_mut()) {
            *s *= factor;
        }
    }
}

/// Aligned transmitted and received symbols at one sample per symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub tx_symbols_x: Vec<C64>,
    pub tx_symbols_y: Vec<C64>,
    pub rx_symbols_x: Vec<C64>,
    pub rx_symbols_y: Vec<C64>,
    /// Baud
    pub symbol_rate: f64,
}

impl SymbolFrame {
    pub fn new(
        tx_symbols_x: Vec<C64>,
        tx_symbols_y: Vec<C64>,
        rx_symbols_x: Vec<C64>,
        rx_symbols_y: Vec<C64>,
        symbol_rate: f64,
    ) -> Result<Self> {
        let n = tx_symbols_x.len();
        for (axis, len) in [
            ("tx_symbols_y", tx_symbols_y.len()),
            ("rx_symbols_x", rx_symbols_x.len()),
            ("rx_symbols_y", rx_symbols_y.len()),
        ] {
            if len != n {
                return Err(Error::Framing(format!(
                    "{axis} has {len} symbols, tx_symbols_x has {n}"
                )));
            }
        }
        Ok(Self {
            tx_symbols_x,
            tx_symbols_y,
            rx_symbols_x,
            rx_symbols_y,
            symbol_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.tx_symbols_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tx_symbols_x.is_empty()
    }

    /// Sub-frame over `range` of symbol indices.
    pub fn slice(&self, range: std::ops::Range<usize>) -> SymbolFrame {
        SymbolFrame {
            tx_symbols_x: self.tx_symbols_x[range.clone()].to_vec(),
            tx_symbols_y: self.tx_symbols_y[range.clone()].to_vec(),
            rx_symbols_x: self.rx_symbols_x[range.clone()].to_vec(),
            rx_symbols_y: self.rx_symbols_y[range].to_vec(),
            symbol_rate: self.symbol_rate,
        }
    }

    /// Same frame with the roles of the X and Y polarizations exchanged.
    pub fn swap_polarizations(&self) -> SymbolFrame {
        SymbolFrame {
            tx_symbols_x: self.tx_symbols_y.clone(),
            tx_symbols_y: self.tx_symbols_x.clone(),
            rx_symbols_x: self.rx_symbols_y.clone(),
            rx_symbols_y: self.rx_symbols_x.clone(),
            symbol_rate: self.symbol_rate,
        }
    }

    /// Checks that every transmitted symbol is an alphabet point.
    pub fn validate_alphabet(&self, spec: &ConstellationSpec) -> Result<()> {
        for (i, s) in self.tx_symbols_x.iter().chain(&self.tx_symbols_y).enumerate() {
            if !spec.contains(*s, 1e-12) {
                return Err(Error::Framing(format!(
                    "tx symbol {i} ({s}) is not a constellation point"
                )));
            }
        }
        Ok(())
    }
}

/// Polarization selector used by datasets and single-polarization models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarization {
    X,
    Y,
}

impl Polarization {
    pub const BOTH: [Polarization; 2] = [Polarization::X, Polarization::Y];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarization::X => "x",
            Polarization::Y => "y",
        }
    }
}

/// Uniform random bits from a ChaCha stream keyed by `seed`.
pub fn random_bits(seed: u64, count: usize) -> Vec<u8> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut bits = Vec::with_capacity(count);
    while bits.len() < count {
        let word: u64 = rng.random();
        let take = (count - bits.len()).min(64);
        bits.extend((0..take).map(|i| ((word >> i) & 1) as u8));
    }
    bits
}

/// Error vector magnitude of `received` against `reference`, in dB
/// (`10·log10(Σ|r−s|² / Σ|s|²)`).
pub fn evm_db(received: &[C64], reference: &[C64]) -> f64 {
    assert_eq!(received.len(), reference.len(), "EVM operands differ in length");
    let err: f64 = received
        .iter()
        .zip(reference)
        .map(|(r, s)| (r - s).norm_sqr())
        .sum();
    let sig: f64 = reference.iter().map(|s| s.norm_sqr()).sum();
    10.0 * (err / sig).log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
