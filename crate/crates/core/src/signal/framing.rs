use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::SymbolFrame;
use crate::error::{Error, Result};

/// Multi-symbol framing: `input_len` received symbols in, the centered
/// `output_len` transmitted symbols out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub input_len: usize,
    pub output_len: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            input_len: 221,
            output_len: 171,
            stride: 171,
        }
    }
}

impl WindowSpec {
    pub fn new(input_len: usize, output_len: usize, stride: usize) -> Result<Self> {
        let spec = Self {
            input_len,
            output_len,
            stride,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_len == 0 || self.input_len < self.output_len {
            return Err(Error::config(format!(
                "window input_len {} must be ≥ output_len {} > 0",
                self.input_len, self.output_len
            )));
        }
        if (self.input_len - self.output_len) % 2 != 0 {
            return Err(Error::config(format!(
                "window guard {} − {} must be even",
                self.input_len, self.output_len
            )));
        }
        if self.stride == 0 {
            return Err(Error::config("window stride must be ≥ 1"));
        }
        Ok(())
    }

    /// Symbols on each side of the target range.
    pub fn guard(&self) -> usize {
        (self.input_len - self.output_len) / 2
    }

    /// Number of whole windows that fit in `frame_len` symbols.
    pub fn count(&self, frame_len: usize) -> usize {
        if frame_len < self.input_len {
            0
        } else {
            (frame_len - self.input_len) / self.stride + 1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub input: Range<usize>,
    pub target: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Windows {
    pub windows: Vec<Window>,
    /// Set when the frame was shorter than one input window.
    pub too_short: bool,
}

impl Windows {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Symbol range covered by the union of all targets, if they tile.
    pub fn covered(&self) -> Option<Range<usize>> {
        let first = self.windows.first()?;
        let last = self.windows.last()?;
        Some(first.target.start..last.target.end)
    }
}

/// Slices a frame into windows; windows overrunning the frame are dropped.
pub fn slice_windows(frame: &SymbolFrame, spec: &WindowSpec) -> Windows {
    slice_len(frame.len(), spec)
}

pub(crate) fn slice_len(frame_len: usize, spec: &WindowSpec) -> Windows {
    let n = spec.count(frame_len);
    if n == 0 {
        log::warn!(
            "frame of {frame_len} symbols is shorter than one {}-symbol window",
            spec.input_len
        );
    }
    let guard = spec.guard();
    Windows {
        windows: (0..n)
            .map(|k| {
                let start = k * spec.stride;
                Window {
                    input: start..start + spec.input_len,
                    target: start + guard..start + guard + spec.output_len,
                }
            })
            .collect(),
        too_short: n == 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::C64;
    use proptest::prelude::*;

    fn frame(len: usize) -> SymbolFrame {
        let z = vec![C64::new(0.0, 0.0); len];
        SymbolFrame::new(z.clone(), z.clone(), z.clone(), z, 30e9).unwrap()
    }

    #[test]
    fn single_window_targets_center() {
        let w = slice_windows(&frame(221), &WindowSpec::default());
        assert_eq!(w.len(), 1);
        assert_eq!(w.windows[0].input, 0..221);
        assert_eq!(w.windows[0].target, 25..196);
        assert!(!w.too_short);
    }

    #[test]
    fn short_frame_is_empty_and_flagged() {
        let w = slice_windows(&frame(220), &WindowSpec::default());
        assert!(w.is_empty());
        assert!(w.too_short);
    }

    #[test]
    fn two_windows_do_not_overlap() {
        let w = slice_windows(&frame(221 + 171), &WindowSpec::default());
        assert_eq!(w.len(), 2);
        assert_eq!(w.windows[0].target.end, w.windows[1].target.start);
        assert_eq!(w.windows[1].input, 171..392);
    }

    #[test]
    fn validation() {
        assert!(WindowSpec::new(221, 171, 171).is_ok());
        assert!(WindowSpec::new(220, 171, 171).is_err());
        assert!(WindowSpec::new(100, 171, 171).is_err());
        assert!(WindowSpec::new(221, 171, 0).is_err());
        assert_eq!(WindowSpec::default().guard(), 25);
    }

    proptest! {
        #[test]
        fn targets_tile_without_gaps(len in 0usize..5000, out in 1usize..60, guard in 0usize..30) {
            let spec = WindowSpec::new(out + 2 * guard, out, out).unwrap();
            let w = slice_len(len, &spec);
            for pair in w.windows.windows(2) {
                prop_assert_eq!(pair[0].target.end, pair[1].target.start);
            }
            for win in &w.windows {
                prop_assert!(win.input.end <= len);
                prop_assert_eq!(win.target.len(), out);
            }
            if let Some(c) = w.covered() {
                prop_assert_eq!(c.len(), w.len() * out);
            }
            // No room for another window.
            prop_assert!(len < (w.len()) * out + spec.input_len);
        }
    }
}
