//! Signed fixed-point numbers with 8 integer bits (sign included) and a
//! configurable number of fraction bits. Raw values are scaled integers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QFormat {
    pub int_bits: u32,
    pub frac_bits: u32,
}

impl QFormat {
    pub const Q8_8: QFormat = QFormat {
        int_bits: 8,
        frac_bits: 8,
    };
    pub const Q8_16: QFormat = QFormat {
        int_bits: 8,
        frac_bits: 16,
    };

    pub fn scale(self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    pub fn max_raw(self) -> i64 {
        (1i64 << (self.int_bits + self.frac_bits - 1)) - 1
    }

    pub fn min_raw(self) -> i64 {
        -(1i64 << (self.int_bits + self.frac_bits - 1))
    }

    fn saturate(self, v: i128) -> i64 {
        v.clamp(self.min_raw() as i128, self.max_raw() as i128) as i64
    }

    /// `round(x * 2^n)` clamped to the representable range; NaN maps to 0.
    pub fn quantize(self, x: f64) -> i64 {
        if x.is_nan() {
            return 0;
        }
        let r = (x * self.scale()).round();
        r.clamp(self.min_raw() as f64, self.max_raw() as f64) as i64
    }

    /// Like [`QFormat::quantize`] but refuses values outside the range.
    pub fn quantize_exact_range(self, x: f64) -> Option<i64> {
        let r = (x * self.scale()).round();
        (r.is_finite() && r >= self.min_raw() as f64 && r <= self.max_raw() as f64).then_some(r as i64)
    }

    pub fn to_f64(self, raw: i64) -> f64 {
        raw as f64 / self.scale()
    }

    pub fn add(self, a: i64, b: i64) -> i64 {
        self.saturate(a as i128 + b as i128)
    }

    /// Product rounded half up to the nearest representable value.
    pub fn mul(self, a: i64, b: i64) -> i64 {
        let p = a as i128 * b as i128;
        let half = 1i128 << (self.frac_bits - 1);
        self.saturate((p + half) >> self.frac_bits)
    }

    pub fn min_value(self) -> f64 {
        self.to_f64(self.min_raw())
    }

    pub fn max_value(self) -> f64 {
        self.to_f64(self.max_raw())
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}.{}", self.int_bits, self.frac_bits)
    }
}

impl FromStr for QFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s.strip_prefix('q').ok_or_else(|| format!("bad format `{s}`"))?;
        let (m, n) = body.split_once('.').ok_or_else(|| format!("bad format `{s}`"))?;
        let int_bits: u32 = m.parse().map_err(|_| format!("bad format `{s}`"))?;
        let frac_bits: u32 = n.parse().map_err(|_| format!("bad format `{s}`"))?;
        if int_bits == 0 || frac_bits == 0 || int_bits + frac_bits > 32 {
            return Err(format!("unsupported format `{s}`"));
        }
        Ok(QFormat { int_bits, frac_bits })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const Q: QFormat = QFormat::Q8_8;

    #[test]
    fn range_and_rounding() {
        assert_eq!(Q.min_value(), -128.0);
        assert_eq!(Q.max_value(), 128.0 - 1.0 / 256.0);
        assert_eq!(Q.quantize(0.5), 128);
        assert_eq!(Q.quantize(-0.25), -64);
        assert_eq!(Q.quantize(1000.0), 32767);
        assert_eq!(Q.quantize(-1000.0), -32768);
        assert_eq!(Q.quantize_exact_range(200.0), None);
        assert_eq!(Q.quantize_exact_range(-128.0), Some(-32768));
    }

    #[test]
    fn saturating_ops() {
        assert_eq!(Q.add(32767, 1), 32767);
        assert_eq!(Q.add(-32768, -1), -32768);
        // 0.5 * 0.5 = 0.25
        assert_eq!(Q.mul(128, 128), 64);
        // 100 * 2 saturates
        assert_eq!(Q.mul(Q.quantize(100.0), Q.quantize(2.0)), 32767);
        assert_eq!(Q.mul(Q.quantize(-100.0), Q.quantize(2.0)), -32768);
    }

    #[test]
    fn format_text() {
        assert_eq!(Q.to_string(), "q8.8");
        assert_eq!("q8.16".parse::<QFormat>().unwrap(), QFormat::Q8_16);
        assert!("q8".parse::<QFormat>().is_err());
    }

    proptest! {
        #[test]
        fn quantize_idempotent_and_monotone(a in -300.0f64..300.0, b in -300.0f64..300.0) {
            let qa = Q.quantize(a);
            prop_assert_eq!(Q.quantize(Q.to_f64(qa)), qa);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(Q.quantize(lo) <= Q.quantize(hi));
        }

        #[test]
        fn mul_close_to_real_product(a in -8.0f64..8.0, b in -8.0f64..8.0) {
            let (qa, qb) = (Q.quantize(a), Q.quantize(b));
            let exact = Q.to_f64(qa) * Q.to_f64(qb);
            prop_assert!((Q.to_f64(Q.mul(qa, qb)) - exact).abs() <= 0.5 / 256.0 + 1e-12);
        }
    }
}
