use crate::error::{Error, Result};
use crate::models::{build_windows, pairs_to_symbols, FeatureLayout, Model, ModelSpec};
use crate::signal::{slice_windows, ConstellationSpec, Polarization, SymbolFrame, WindowSpec, C64};

use super::report::QSweepRow;
use super::{count_bit_errors, BitErrors};

/// Bit errors below which a Q estimate is flagged as statistically weak.
pub const MIN_RELIABLE_ERRORS: u64 = 10;

/// Recovers the transmitted symbols of one polarization, window by window.
pub trait Equalizer: Sync {
    /// Concatenated target-range outputs of every window of `frame`
    /// (`windows · output_len` symbols).
    fn recover(&self, frame: &SymbolFrame, spec: &WindowSpec, pol: Polarization) -> Result<Vec<C64>>;
}

/// Passes the received symbols through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEqualizer;

impl Equalizer for IdentityEqualizer {
    fn recover(&self, frame: &SymbolFrame, spec: &WindowSpec, pol: Polarization) -> Result<Vec<C64>> {
        let rx = match pol {
            Polarization::X => &frame.rx_symbols_x,
            Polarization::Y => &frame.rx_symbols_y,
        };
        Ok(slice_windows(frame, spec)
            .windows
            .iter()
            .flat_map(|w| rx[w.target.clone()].iter().copied())
            .collect())
    }
}

/// One trained model per polarization.
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub x: Model,
    pub y: Model,
}

impl Equalizer for ModelPair {
    fn recover(&self, frame: &SymbolFrame, spec: &WindowSpec, pol: Polarization) -> Result<Vec<C64>> {
        let model = match pol {
            Polarization::X => &self.x,
            Polarization::Y => &self.y,
        };
        model.spec().validate(spec)?;
        let batch = build_windows(frame, spec, FeatureLayout::new(pol))?;
        if batch.count == 0 {
            return Ok(Vec::new());
        }
        Ok(pairs_to_symbols(&model.predict(&batch.inputs, batch.count)?))
    }
}

impl ModelPair {
    pub fn kind(&self) -> &'static str {
        match self.x.spec() {
            ModelSpec::Teacher(_) => "teacher",
            ModelSpec::Student(_) => "student",
        }
    }
}

/// Tiles `frame`, equalizes both polarizations, counts bit errors of the
/// reassembled streams against the transmitted symbols and converts the
/// combined BER to Q.
pub fn evaluate_equalizer(
    eq: &dyn Equalizer,
    frame: &SymbolFrame,
    spec: &WindowSpec,
    constellation: &ConstellationSpec,
    launch_power_dbm: f64,
    method: &str,
) -> Result<QSweepRow> {
    spec.validate()?;
    let windows = slice_windows(frame, spec);
    let Some(covered) = windows.covered() else {
        return Err(Error::Framing(format!(
            "test frame of {} symbols holds no {}-symbol window",
            frame.len(),
            spec.input_len
        )));
    };
    let mut total = BitErrors::default();
    for pol in Polarization::BOTH {
        let rec = eq.recover(frame, spec, pol)?;
        let tx = match pol {
            Polarization::X => &frame.tx_symbols_x[covered.clone()],
            Polarization::Y => &frame.tx_symbols_y[covered.clone()],
        };
        if rec.len() != tx.len() {
            return Err(Error::Framing(format!(
                "equalizer returned {} symbols for {} targets",
                rec.len(),
                tx.len()
            )));
        }
        total = total.merge(count_bit_errors(&rec, tx, constellation));
    }
    Ok(QSweepRow::from_errors(launch_power_dbm, method, total))
}
