//! Bit-error counting, BER ↔ Q-factor conversion, equalizer evaluation and
//! weight statistics.

mod evaluate;
mod histogram;
mod report;

pub use evaluate::{evaluate_equalizer, Equalizer, IdentityEqualizer, ModelPair, MIN_RELIABLE_ERRORS};
pub use histogram::{weight_histogram, WeightHistogram, NEAR_ZERO};
pub use report::{QSweepReport, QSweepRow};

use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::signal::{demap_symbols_to_bits, ConstellationSpec, C64};

/// `Q_dB = 20·log10(√2 · erfc⁻¹(2·BER))`.
pub fn q_factor_from_ber(ber: f64) -> Result<f64> {
    if !(ber > 0.0 && ber < 0.5) {
        return Err(Error::Domain(format!("BER {ber} outside (0, 0.5)")));
    }
    Ok(20.0 * (std::f64::consts::SQRT_2 * erfc_inv(2.0 * ber)).log10())
}

/// Inverse of [`q_factor_from_ber`].
pub fn ber_from_q(q_db: f64) -> f64 {
    let q = 10f64.powf(q_db / 20.0);
    0.5 * erfc(q / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BitErrors {
    pub errors: u64,
    pub bits: u64,
    pub symbols: u64,
}

impl BitErrors {
    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.errors as f64 / self.bits as f64
        }
    }

    pub fn merge(self, other: BitErrors) -> BitErrors {
        BitErrors {
            errors: self.errors + other.errors,
            bits: self.bits + other.bits,
            symbols: self.symbols + other.symbols,
        }
    }

    /// Q-factor in dB; `None` when no errors were seen (or BER ≥ 0.5).
    pub fn q_db(&self) -> Option<f64> {
        q_factor_from_ber(self.ber()).ok()
    }
}

/// Hard-decision bit errors of `rx` against the transmitted symbols `tx`.
pub fn count_bit_errors(rx: &[C64], tx: &[C64], spec: &ConstellationSpec) -> BitErrors {
    assert_eq!(rx.len(), tx.len(), "rx/tx length mismatch");
    let rb = demap_symbols_to_bits(rx, spec);
    let tb = demap_symbols_to_bits(tx, spec);
    let errors = rb.iter().zip(&tb).filter(|(a, b)| a != b).count() as u64;
    BitErrors {
        errors,
        bits: rb.len() as u64,
        symbols: rx.len() as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// erfc⁻¹ by bisection on libm's erfc.
    fn q_db_bisection(ber: f64) -> f64 {
        let target = 2.0 * ber;
        let (mut lo, mut hi) = (0.0f64, 10.0f64);
        while hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            if libm::erfc(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        20.0 * (std::f64::consts::SQRT_2 * 0.5 * (lo + hi)).log10()
    }

    #[test]
    fn ber_1e3_is_9_80_db() {
        let oracle = q_db_bisection(1e-3);
        assert!((oracle - 9.80).abs() < 0.01, "oracle {oracle}");
        let q = q_factor_from_ber(1e-3).unwrap();
        assert!((q - oracle).abs() < 1e-9);
    }

    #[test]
    fn unit_q_is_zero_db() {
        let ber = libm::erfc(1.0 / std::f64::consts::SQRT_2) / 2.0;
        assert!(q_factor_from_ber(ber).unwrap().abs() < 1e-9);
    }

    #[test]
    fn out_of_domain() {
        assert!(q_factor_from_ber(0.0).is_err());
        assert!(q_factor_from_ber(0.5).is_err());
        assert!(q_factor_from_ber(-1.0).is_err());
    }

    #[test]
    fn q_is_monotone_decreasing_in_ber() {
        let bers = [1e-9, 1e-6, 1e-4, 1e-3, 1e-2, 0.1, 0.3, 0.49];
        for w in bers.windows(2) {
            assert!(q_factor_from_ber(w[0]).unwrap() > q_factor_from_ber(w[1]).unwrap());
        }
    }

    #[test]
    fn q_round_trip() {
        for i in 0..=150 {
            let q = i as f64 * 0.1;
            let back = q_factor_from_ber(ber_from_q(q)).unwrap();
            assert!((back - q).abs() < 1e-9, "{q} → {back}");
        }
    }

    #[test]
    fn bit_error_counting() {
        let spec = ConstellationSpec::default();
        let tx = vec![spec.point(0), spec.point(5)];
        let rx = vec![spec.point(1), spec.point(5)];
        let e = count_bit_errors(&rx, &tx, &spec);
        assert_eq!(e, BitErrors { errors: 1, bits: 12, symbols: 2 });
    }
}
