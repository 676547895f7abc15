use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::spectral::circular_convolve;
use super::C64;
use crate::error::{Error, Result};

/// Root-raised-cosine pulse parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseShape {
    /// Samples per symbol in the simulation.
    pub oversampling: usize,
    pub rolloff: f64,
    /// Filter length in symbols.
    pub span_symbols: usize,
}

impl Default for PulseShape {
    fn default() -> Self {
        Self {
            oversampling: 16,
            rolloff: 0.1,
            span_symbols: 64,
        }
    }
}

impl PulseShape {
    pub fn validate(&self) -> Result<()> {
        if self.oversampling < 2 {
            return Err(Error::config(format!(
                "oversampling must be ≥ 2, got {}",
                self.oversampling
            )));
        }
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(Error::config(format!(
                "rolloff must lie in (0, 1], got {}",
                self.rolloff
            )));
        }
        if self.span_symbols < 2 {
            return Err(Error::config(format!(
                "filter span must be ≥ 2 symbols, got {}",
                self.span_symbols
            )));
        }
        Ok(())
    }

    pub fn taps(&self) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(rrc_taps(self.oversampling, self.rolloff, self.span_symbols))
    }
}

/// Unit-energy RRC taps, `span_symbols·oversampling + 1` long, centered.
pub fn rrc_taps(oversampling: usize, rolloff: f64, span_symbols: usize) -> Vec<f64> {
    let n = span_symbols * oversampling + 1;
    let center = (n / 2) as f64;
    let b = rolloff;
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - center) / oversampling as f64;
            if t == 0.0 {
                1.0 - b + 4.0 * b / PI
            } else if ((4.0 * b * t).abs() - 1.0).abs() < 1e-12 {
                b / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * b)).sin()
                        + (1.0 - 2.0 / PI) * (PI / (4.0 * b)).cos())
            } else {
                ((PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos())
                    / (PI * t * (1.0 - (4.0 * b * t).powi(2)))
            }
        })
        .collect();
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let norm = energy.sqrt();
    taps.iter_mut().for_each(|h| *h /= norm);
    taps
}

/// Upsamples by zero insertion and filters with the RRC pulse. The frame is
/// treated as periodic, so the output has exactly `symbols·oversampling`
/// samples.
pub fn rrc_shape(
    symbols: &[C64],
    oversampling: usize,
    rolloff: f64,
    span_symbols: usize,
) -> Result<Vec<C64>> {
    let shape = PulseShape {
        oversampling,
        rolloff,
        span_symbols,
    };
    let taps = shape.taps()?;
    if symbols.is_empty() {
        return Ok(Vec::new());
    }
    let mut up = vec![C64::new(0.0, 0.0); symbols.len() * oversampling];
    for (i, &s) in symbols.iter().enumerate() {
        up[i * oversampling] = s;
    }
    Ok(circular_convolve(&up, &taps))
}

/// Receive-side RRC filter (the pulse is real and symmetric, so the matched
/// filter is the pulse itself).
pub fn matched_filter(samples: &[C64], shape: &PulseShape) -> Result<Vec<C64>> {
    let taps = shape.taps()?;
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    Ok(circular_convolve(samples, &taps))
}

/// Keeps every `factor`-th sample starting at `phase`.
pub fn downsample(samples: &[C64], factor: usize, phase: usize) -> Vec<C64> {
    samples.iter().skip(phase).step_by(factor.max(1)).copied().collect()
}
