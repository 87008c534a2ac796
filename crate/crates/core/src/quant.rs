//! Fixed-point weight quantization.
//!
//! Weights use a per-tensor fixed format: one sign bit and, by default,
//! `bit_w - 1` fractional bits. Values round to nearest (ties to even) and
//! saturate at the extreme codes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    #[default]
    NearestEven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bit_w: u32,
    pub bit_d: u32,
    pub rounding: Rounding,
    pub frac_bits: u32,
}

impl QuantSpec {
    pub const MAX_BITS: u32 = 32;

    pub fn new(bit_w: u32, bit_d: u32) -> Result<Self> {
        Self::with_frac_bits(bit_w, bit_d, bit_w.saturating_sub(1))
    }

    pub fn with_frac_bits(bit_w: u32, bit_d: u32, frac_bits: u32) -> Result<Self> {
        let spec = Self {
            bit_w,
            bit_d,
            rounding: Rounding::NearestEven,
            frac_bits,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bit_w == 0 || self.bit_w > Self::MAX_BITS {
            return Err(Error::InvalidQuant(format!(
                "bit_w {} outside 1..={}",
                self.bit_w,
                Self::MAX_BITS
            )));
        }
        if self.bit_d == 0 {
            return Err(Error::InvalidQuant("bit_d must be at least 1".into()));
        }
        if self.bit_d > self.bit_w {
            return Err(Error::BitDExceedsBitW {
                bit_d: self.bit_d,
                bit_w: self.bit_w,
            });
        }
        if self.frac_bits > 62 {
            return Err(Error::InvalidQuant(format!("frac_bits {} too large", self.frac_bits)));
        }
        Ok(())
    }

    /// Device cells (crossbar columns) per weight word: `ceil(bit_w / bit_d)`.
    pub fn adjustment_factor(&self) -> u32 {
        self.bit_w.div_ceil(self.bit_d)
    }

    /// Grid step `2^-f`.
    pub fn step(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    /// Signed integer code range `[-2^(bit_w-1), 2^(bit_w-1) - 1]`.
    pub fn code_range(&self) -> (f64, f64) {
        let half = ((self.bit_w - 1) as f64).exp2();
        (-half, half - 1.0)
    }

    /// Smallest and largest representable values.
    pub fn value_range(&self) -> (f64, f64) {
        let (lo, hi) = self.code_range();
        (lo * self.step(), hi * self.step())
    }

    pub fn quantize_value(&self, w: f64) -> f64 {
        let scale = (self.frac_bits as f64).exp2();
        let (lo, hi) = self.code_range();
        let code = match self.rounding {
            Rounding::NearestEven => (w * scale).round_ties_even(),
        };
        code.clamp(lo, hi) / scale
    }
}

pub fn adjustment_factor(spec: &QuantSpec) -> u32 {
    spec.adjustment_factor()
}

/// Quantize a tensor onto the fixed-point grid of `spec`.
pub fn quantize(weights: &[f64], spec: &QuantSpec) -> Result<Vec<f64>> {
    weights
        .iter()
        .enumerate()
        .map(|(index, &w)| {
            if w.is_finite() {
                Ok(spec.quantize_value(w))
            } else {
                Err(Error::NonFiniteWeight { index })
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_values() {
        let q8 = QuantSpec::new(8, 1).unwrap();
        assert_eq!(q8.frac_bits, 7);
        assert_eq!(q8.quantize_value(0.0), 0.0);
        assert_eq!(q8.quantize_value(0.3), 0.296875);
        assert_eq!(q8.quantize_value(5.0), 127.0 / 128.0);
        assert_eq!(q8.quantize_value(-5.0), -1.0);
        // ties go to the even code
        assert_eq!(q8.quantize_value(0.5 / 128.0), 0.0);
        assert_eq!(q8.quantize_value(1.5 / 128.0), 2.0 / 128.0);
    }

    #[test]
    fn adjustment_factors() {
        assert_eq!(QuantSpec::new(8, 1).unwrap().adjustment_factor(), 8);
        assert_eq!(QuantSpec::new(8, 8).unwrap().adjustment_factor(), 1);
        assert_eq!(QuantSpec::new(10, 4).unwrap().adjustment_factor(), 3);
    }

    #[test]
    fn invalid_specs() {
        assert!(matches!(QuantSpec::new(8, 16), Err(Error::BitDExceedsBitW { .. })));
        assert!(QuantSpec::new(0, 1).is_err());
        assert!(QuantSpec::new(33, 1).is_err());
        assert!(QuantSpec::new(8, 0).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let q = QuantSpec::new(8, 1).unwrap();
        let err = quantize(&[0.1, f64::NAN], &q).unwrap_err();
        assert!(err.to_string().contains("non-finite weight"));
        assert!(quantize(&[f64::INFINITY], &q).is_err());
    }

    #[test]
    fn fxp32_extremes_exact() {
        let q = QuantSpec::new(32, 1).unwrap();
        let (lo, hi) = q.value_range();
        assert_eq!(lo, -1.0);
        assert_eq!(hi, 1.0 - 2f64.powi(-31));
        assert_eq!(q.quantize_value(hi), hi);
    }

    proptest! {
        #[test]
        fn idempotent(w in -4.0f64..4.0, bits in 2u32..=32) {
            let q = QuantSpec::new(bits, 1).unwrap();
            let once = q.quantize_value(w);
            prop_assert_eq!(q.quantize_value(once), once);
        }

        #[test]
        fn error_bound_in_range(u in 0.0f64..1.0, bits in 2u32..=32) {
            let q = QuantSpec::new(bits, 1).unwrap();
            let (lo, hi) = q.value_range();
            let w = lo + u * (hi - lo);
            let err = (w - q.quantize_value(w)).abs();
            prop_assert!(err <= q.step() / 2.0);
        }

        #[test]
        fn more_bits_never_worse(ws in proptest::collection::vec(-1.0f64..0.99, 1..64), bits in 2u32..32) {
            let max_err = |b: u32| {
                let q = QuantSpec::new(b, 1).unwrap();
                ws.iter().map(|&w| (w - q.quantize_value(w)).abs()).fold(0.0, f64::max)
            };
            prop_assert!(max_err(bits + 1) <= max_err(bits));
        }
    }
}
