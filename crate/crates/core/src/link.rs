//! Transmitter, fiber link and receiver chains wired together for one
//! launch power.

use serde::{Deserialize, Serialize};

use crate::channel::{derive_seed, simulate_link, AmplifierParams, FiberParams, SsfmConfig};
use crate::dsp::{receiver_frontend, DspChainConfig};
use crate::error::{Error, Result};
use crate::signal::{
    dbm_to_watts, map_bits_to_symbols, random_bits, rrc_shape, ConstellationSpec, PulseShape,
    SampledWaveform, SymbolFrame, C64,
};

/// Everything needed to turn bits into received symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSetup {
    pub fiber: FiberParams,
    pub amplifier: AmplifierParams,
    pub ssfm: SsfmConfig,
    pub shaping: PulseShape,
    pub constellation: ConstellationSpec,
    /// Baud
    pub symbol_rate: f64,
    /// m
    pub wavelength: f64,
}

impl Default for LinkSetup {
    fn default() -> Self {
        Self {
            fiber: FiberParams::default(),
            amplifier: AmplifierParams::default(),
            ssfm: SsfmConfig::default(),
            shaping: PulseShape::default(),
            constellation: ConstellationSpec::default(),
            symbol_rate: 30e9,
            wavelength: 1550e-9,
        }
    }
}

impl LinkSetup {
    pub fn validate(&self) -> Result<()> {
        self.fiber.validate()?;
        self.amplifier.validate()?;
        self.ssfm.validate()?;
        self.shaping.validate()?;
        if !(self.symbol_rate > 0.0) {
            return Err(Error::config("symbol rate must be positive"));
        }
        Ok(())
    }

    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate * self.shaping.oversampling as f64
    }
}

/// Transmitted symbols and the launched waveform.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub bits_x: Vec<u8>,
    pub bits_y: Vec<u8>,
    pub symbols_x: Vec<C64>,
    pub symbols_y: Vec<C64>,
    pub waveform: SampledWaveform,
}

/// Draws bits from `seed`, maps, shapes and scales the total launch power
/// (both polarizations together) to `power_dbm`.
pub fn transmit(setup: &LinkSetup, power_dbm: f64, symbols: usize, seed: u64) -> Result<Transmission> {
    setup.validate()?;
    let k = setup.constellation.bits_per_symbol();
    let bits_x = random_bits(derive_seed(seed, 0), k * symbols);
    let bits_y = random_bits(derive_seed(seed, 1), k * symbols);
    let symbols_x = map_bits_to_symbols(&bits_x, &setup.constellation)?;
    let symbols_y = map_bits_to_symbols(&bits_y, &setup.constellation)?;
    let sh = &setup.shaping;
    let wx = rrc_shape(&symbols_x, sh.oversampling, sh.rolloff, sh.span_symbols)?;
    let wy = rrc_shape(&symbols_y, sh.oversampling, sh.rolloff, sh.span_symbols)?;
    let mut waveform = SampledWaveform::new(wx, wy, setup.sample_rate(), setup.wavelength)?;
    let p = waveform.mean_power();
    waveform.scale((dbm_to_watts(power_dbm) / p).sqrt());
    Ok(Transmission {
        bits_x,
        bits_y,
        symbols_x,
        symbols_y,
        waveform,
    })
}

/// Simulates one transmission and applies every receiver chain to the same
/// received waveform. The link noise uses `derive_seed(seed, 2)` mixed with
/// the configured SSFM seed.
pub fn simulate_frames(
    setup: &LinkSetup,
    power_dbm: f64,
    symbols: usize,
    seed: u64,
    chains: &[DspChainConfig],
) -> Result<Vec<SymbolFrame>> {
    let tx = transmit(setup, power_dbm, symbols, seed)?;
    let ssfm = SsfmConfig {
        seed: derive_seed(setup.ssfm.seed ^ seed, 2),
        ..setup.ssfm
    };
    let rx = simulate_link(&tx.waveform, &setup.fiber, &setup.amplifier, &ssfm)?;
    chains
        .iter()
        .map(|chain| {
            receiver_frontend(
                &rx,
                &tx.symbols_x,
                &tx.symbols_y,
                chain,
                &setup.fiber,
                &setup.amplifier,
                &setup.shaping,
            )
        })
        .collect()
}
