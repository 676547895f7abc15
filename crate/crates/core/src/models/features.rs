//! Window tensors built from symbol frames.
//!
//! Each received symbol contributes four real features. For the model that
//! recovers polarization X the order is `X_I, X_Q, Y_I, Y_Q`; the Y model
//! sees `Y_I, Y_Q, X_I, X_Q`. Targets are `(re, im)` of the recovered
//! polarization's transmitted symbols.

use crate::error::{Error, Result};
use crate::signal::{slice_windows, Polarization, SymbolFrame, WindowSpec, C64};

/// Real features per received symbol.
pub const FEATURES: usize = 4;
/// Outputs per recovered symbol (real, imaginary).
pub const OUTPUTS: usize = 2;

/// Feature ordering for one recovered polarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub polarization: Polarization,
}

impl FeatureLayout {
    pub fn new(polarization: Polarization) -> Self {
        Self { polarization }
    }

    /// `(primary, secondary)` received streams and the target stream.
    fn streams<'a>(&self, frame: &'a SymbolFrame) -> (&'a [C64], &'a [C64], &'a [C64]) {
        match self.polarization {
            Polarization::X => (&frame.rx_symbols_x, &frame.rx_symbols_y, &frame.tx_symbols_x),
            Polarization::Y => (&frame.rx_symbols_y, &frame.rx_symbols_x, &frame.tx_symbols_y),
        }
    }
}

/// Batched model inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    /// `[n, input_len, 4]`, time-major
    pub inputs: Vec<f64>,
    /// `[n, output_len, 2]`
    pub targets: Vec<f64>,
    pub count: usize,
    pub spec: WindowSpec,
}

impl WindowBatch {
    pub fn input_stride(&self) -> usize {
        self.spec.input_len * FEATURES
    }

    pub fn target_stride(&self) -> usize {
        self.spec.output_len * OUTPUTS
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_stride()..(i + 1) * self.input_stride()]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.target_stride()..(i + 1) * self.target_stride()]
    }

    /// Sub-batch made of the windows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> WindowBatch {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_stride());
        let mut targets = Vec::with_capacity(indices.len() * self.target_stride());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            targets.extend_from_slice(self.target(i));
        }
        WindowBatch {
            inputs,
            targets,
            count: indices.len(),
            spec: self.spec,
        }
    }
}

/// Tiles `frame` with windows and gathers inputs and targets for one
/// polarization.
pub fn build_windows(frame: &SymbolFrame, spec: &WindowSpec, layout: FeatureLayout) -> Result<WindowBatch> {
    spec.validate()?;
    let windows = slice_windows(frame, spec);
    let (primary, secondary, target) = layout.streams(frame);
    let mut inputs = Vec::with_capacity(windows.len() * spec.input_len * FEATURES);
    let mut targets = Vec::with_capacity(windows.len() * spec.output_len * OUTPUTS);
    for w in &windows.windows {
        for t in w.input.clone() {
            inputs.extend_from_slice(&[primary[t].re, primary[t].im, secondary[t].re, secondary[t].im]);
        }
        for t in w.target.clone() {
            targets.extend_from_slice(&[target[t].re, target[t].im]);
        }
    }
    Ok(WindowBatch {
        inputs,
        targets,
        count: windows.len(),
        spec: *spec,
    })
}

/// Forward window followed by its time reversal: `[len, 4]` → `[len, 8]`.
pub fn make_bidirectional_input(window: &[f64], len: usize) -> Result<Vec<f64>> {
    if window.len() != len * FEATURES {
        return Err(Error::Dimension {
            axis: "window values".into(),
            expected: len * FEATURES,
            actual: window.len(),
        });
    }
    let mut out = Vec::with_capacity(2 * window.len());
    for t in 0..len {
        out.extend_from_slice(&window[t * FEATURES..(t + 1) * FEATURES]);
        let r = len - 1 - t;
        out.extend_from_slice(&window[r * FEATURES..(r + 1) * FEATURES]);
    }
    Ok(out)
}

/// Symbols from `[n, 2]` real pairs.
pub fn pairs_to_symbols(values: &[f64]) -> Vec<C64> {
    values.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect()
}
