use serde::{Deserialize, Serialize};

use super::C64;
use crate::error::{Error, Result};

/// Square QAM alphabet with a per-axis binary-reflected Gray code.
///
/// The first half of each bit word selects the in-phase level, the second half
/// the quadrature level, MSB first. Level index `m` carries amplitude
/// `2m − (L−1)` before normalization, and the bit pattern of `m` is its Gray
/// code `m ^ (m >> 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConstellationConfig", into = "ConstellationConfig")]
pub struct ConstellationSpec {
    order: usize,
    /// `gray_map[word]` is the normalized point carrying `word`.
    gray_map: Vec<C64>,
    normalization: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstellationConfig {
    order: usize,
}

impl TryFrom<ConstellationConfig> for ConstellationSpec {
    type Error = Error;
    fn try_from(c: ConstellationConfig) -> Result<Self> {
        ConstellationSpec::square_qam(c.order)
    }
}

impl From<ConstellationSpec> for ConstellationConfig {
    fn from(c: ConstellationSpec) -> Self {
        ConstellationConfig { order: c.order }
    }
}

impl Default for ConstellationSpec {
    fn default() -> Self {
        Self::square_qam(64).expect("64-QAM is a square constellation")
    }
}

impl ConstellationSpec {
    pub fn square_qam(order: usize) -> Result<Self> {
        let bits = order.trailing_zeros() as usize;
        if order < 4 || !order.is_power_of_two() || bits % 2 != 0 {
            return Err(Error::config(format!(
                "square QAM needs an even power of two ≥ 4, got {order}"
            )));
        }
        let levels = 1usize << (bits / 2);
        // Mean energy of the unnormalized grid is 2(L²−1)/3 (42 for 64-QAM).
        let mean_energy = 2.0 * ((levels * levels) as f64 - 1.0) / 3.0;
        let normalization = 1.0 / mean_energy.sqrt();
        let half = bits / 2;
        let gray_map = (0..order)
            .map(|word| {
                let i_bits = word >> half;
                let q_bits = word & (levels - 1);
                let amp = |g: usize| (2 * gray_decode(g)) as f64 - (levels - 1) as f64;
                C64::new(amp(i_bits), amp(q_bits)) * normalization
            })
            .collect();
        Ok(Self {
            order,
            gray_map,
            normalization,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.order.trailing_zeros() as usize
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn levels_per_axis(&self) -> usize {
        1 << (self.bits_per_symbol() / 2)
    }

    pub fn points(&self) -> &[C64] {
        &self.gray_map
    }

    pub fn point(&self, word: usize) -> C64 {
        self.gray_map[word]
    }

    pub fn contains(&self, s: C64, tol: f64) -> bool {
        let word = self.nearest_word(s);
        (self.gray_map[word] - s).norm() <= tol
    }

    /// Bit word of the nearest point; ties resolve toward the smaller real,
    /// then the smaller imaginary coordinate.
    pub fn nearest_word(&self, s: C64) -> usize {
        let levels = self.levels_per_axis();
        let half = self.bits_per_symbol() / 2;
        let axis_index = |v: f64| -> usize {
            let pos = (v / self.normalization + (levels - 1) as f64) / 2.0;
            // `ceil(pos − ½)` rounds halves down.
            let idx = (pos - 0.5).ceil();
            if idx.is_nan() {
                0
            } else {
                idx.clamp(0.0, (levels - 1) as f64) as usize
            }
        };
        let i = gray_encode(axis_index(s.re));
        let q = gray_encode(axis_index(s.im));
        (i << half) | q
    }
}

fn gray_encode(m: usize) -> usize {
    m ^ (m >> 1)
}

fn gray_decode(mut g: usize) -> usize {
    let mut m = g;
    while g > 0 {
        g >>= 1;
        m ^= g;
    }
    m
}

/// Maps groups of `log2(order)` bits (MSB first) to normalized symbols.
pub fn map_bits_to_symbols(bits: &[u8], spec: &ConstellationSpec) -> Result<Vec<C64>> {
    let k = spec.bits_per_symbol();
    if bits.len() % k != 0 {
        return Err(Error::Framing(format!(
            "{} bits is not a multiple of {k} bits per symbol",
            bits.len()
        )));
    }
    Ok(bits
        .chunks_exact(k)
        .map(|group| {
            let word = group.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
            spec.point(word)
        })
        .collect())
}

/// Hard-decision demapping to the nearest constellation point.
pub fn demap_symbols_to_bits(symbols: &[C64], spec: &ConstellationSpec) -> Vec<u8> {
    let k = spec.bits_per_symbol();
    let mut bits = Vec::with_capacity(symbols.len() * k);
    for &s in symbols {
        let word = spec.nearest_word(s);
        bits.extend((0..k).rev().map(|i| ((word >> i) & 1) as u8));
    }
    bits
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const S42: f64 = 6.480_740_698_407_86; // √42

    /// Independent 8-PAM Gray table: level for each 3-bit pattern.
    fn pam8_table() -> [(u8, f64); 8] {
        // Binary-reflected Gray sequence listed in amplitude order.
        let seq = [0b000, 0b001, 0b011, 0b010, 0b110, 0b111, 0b101, 0b100];
        let mut out = [(0u8, 0.0); 8];
        for (m, &g) in seq.iter().enumerate() {
            out[m] = (g, (2 * m) as f64 - 7.0);
        }
        out
    }

    fn oracle_point(word: usize) -> C64 {
        let table = pam8_table();
        let lvl = |bits: usize| table.iter().find(|(g, _)| *g as usize == bits).unwrap().1;
        C64::new(lvl(word >> 3), lvl(word & 7))
    }

    #[test]
    fn matches_two_pam_gray_oracle() {
        let spec = ConstellationSpec::default();
        let raw: Vec<C64> = (0..64).map(oracle_point).collect();
        let mean: f64 = raw.iter().map(|p| p.norm_sqr()).sum::<f64>() / 64.0;
        assert!((mean - 42.0).abs() < 1e-12);
        for (w, p) in raw.iter().enumerate() {
            assert!((spec.point(w) - p / S42).norm() < 1e-15, "word {w}");
        }
    }

    #[test]
    fn zero_bits_map_to_corner() {
        let spec = ConstellationSpec::default();
        let s = map_bits_to_symbols(&[0; 6], &spec).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s[0] - C64::new(-7.0, -7.0) / S42).norm() < 1e-15);
    }

    #[test]
    fn empty_bits_give_empty_symbols() {
        let spec = ConstellationSpec::default();
        assert!(map_bits_to_symbols(&[], &spec).unwrap().is_empty());
    }

    #[test]
    fn ragged_bits_are_a_framing_error() {
        let spec = ConstellationSpec::default();
        assert!(matches!(
            map_bits_to_symbols(&[1, 0, 1], &spec),
            Err(Error::Framing(_))
        ));
    }

    #[test]
    fn alphabet_is_distinct_with_unit_energy() {
        let spec = ConstellationSpec::default();
        let bits: Vec<u8> = (0..64usize)
            .flat_map(|w| (0..6).rev().map(move |i| ((w >> i) & 1) as u8))
            .collect();
        let pts = map_bits_to_symbols(&bits, &spec).unwrap();
        for i in 0..64 {
            for j in 0..i {
                assert!((pts[i] - pts[j]).norm() > 0.1);
            }
        }
        let mean: f64 = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / 64.0;
        assert!((mean - 1.0).abs() < 1e-12);
        assert!((spec.normalization() - 1.0 / S42).abs() < 1e-15);
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        let spec = ConstellationSpec::default();
        let dmin = 2.0 / S42;
        for a in 0..64usize {
            for b in 0..64usize {
                let d = (spec.point(a) - spec.point(b)).norm();
                if (d - dmin).abs() < 1e-12 {
                    assert_eq!((a ^ b).count_ones(), 1);
                }
            }
        }
    }

    #[test]
    fn origin_ties_break_to_lower_left() {
        let spec = ConstellationSpec::default();
        // Brute-force: among the four equidistant inner points pick the
        // smallest real, then the smallest imaginary coordinate.
        let origin = C64::new(0.0, 0.0);
        let best = spec
            .points()
            .iter()
            .map(|p| (p - origin).norm())
            .fold(f64::INFINITY, f64::min);
        let mut ties: Vec<C64> = spec
            .points()
            .iter()
            .copied()
            .filter(|p| ((p - origin).norm() - best).abs() < 1e-12)
            .collect();
        assert_eq!(ties.len(), 4);
        ties.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
        let expected = C64::new(-1.0, -1.0) / S42;
        assert!((ties[0] - expected).norm() < 1e-15);
        let bits = demap_symbols_to_bits(&[origin], &spec);
        let back = map_bits_to_symbols(&bits, &spec).unwrap();
        assert!((back[0] - expected).norm() < 1e-15);
    }

    #[test]
    fn nearest_matches_brute_force() {
        let spec = ConstellationSpec::default();
        let mut state = 0x1234_5678_u64;
        for _ in 0..5000 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let re = ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 3.0;
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let im = ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 3.0;
            let s = C64::new(re, im);
            let brute = (0..64)
                .min_by(|&a, &b| {
                    (spec.point(a) - s)
                        .norm_sqr()
                        .partial_cmp(&(spec.point(b) - s).norm_sqr())
                        .unwrap()
                })
                .unwrap();
            assert_eq!(spec.nearest_word(s), brute);
        }
    }

    #[test]
    fn rejects_non_square_orders() {
        assert!(ConstellationSpec::square_qam(32).is_err());
        assert!(ConstellationSpec::square_qam(16).is_ok());
    }

    proptest! {
        #[test]
        fn map_demap_round_trip(words in proptest::collection::vec(0u8..64, 0..200)) {
            let spec = ConstellationSpec::default();
            let bits: Vec<u8> = words.iter()
                .flat_map(|&w| (0..6).rev().map(move |i| (w >> i) & 1))
                .collect();
            let syms = map_bits_to_symbols(&bits, &spec).unwrap();
            prop_assert_eq!(demap_symbols_to_bits(&syms, &spec), bits);
        }

        #[test]
        fn sub_half_distance_noise_is_harmless(
            word in 0usize..64,
            r in 0.0f64..0.999,
            theta in 0.0f64..std::f64::consts::TAU,
        ) {
            let spec = ConstellationSpec::default();
            let half_dmin = 1.0 / S42;
            let p = spec.point(word);
            let noisy = p + C64::from_polar(r * half_dmin, theta);
            prop_assert_eq!(spec.nearest_word(noisy), word);
        }
    }
}
