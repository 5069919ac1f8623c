//! Numeric abstraction shared by the similarity and scoring code.
//!
//! Vector math runs over `f32`/`f64`; accuracy aggregation also runs over
//! exact rationals so that printed two-decimal figures can be reproduced
//! without binary floating-point drift.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// A real-valued scalar: `f32`, `f64`, or an exact rational.
pub trait Scalar: Num + Clone + PartialOrd + FromPrimitive + ToPrimitive + Debug {
    fn floor(&self) -> Self;

    fn sqrt(&self) -> Self;

    fn is_finite(&self) -> bool;

    /// Exact conversion from a decimal literal such as `"44.40"`.
    fn from_decimal_str(s: &str) -> Option<Self>;
}

macro_rules! impl_float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn floor(&self) -> Self {
                <$t>::floor(*self)
            }

            fn sqrt(&self) -> Self {
                <$t>::sqrt(*self)
            }

            fn is_finite(&self) -> bool {
                <$t>::is_finite(*self)
            }

            fn from_decimal_str(s: &str) -> Option<Self> {
                s.trim().parse().ok()
            }
        }
    };
}

impl_float_scalar!(f32);
impl_float_scalar!(f64);

impl Scalar for Ratio<i64> {
    fn floor(&self) -> Self {
        Ratio::floor(self)
    }

    /// Rationals are only square-rooted by the cosine path, which never runs
    /// over exact scores; fall back to the nearest `f64` root.
    fn sqrt(&self) -> Self {
        let v = self.to_f64().unwrap_or(0.0).sqrt();
        Ratio::from_f64(v).unwrap_or_else(|| Ratio::from_integer(0))
    }

    fn is_finite(&self) -> bool {
        true
    }

    fn from_decimal_str(s: &str) -> Option<Self> {
        let s = s.trim();
        let (neg, digits) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
        if int.is_empty() && frac.is_empty() {
            return None;
        }
        if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return None;
        }
        let scale = 10i64.checked_pow(u32::try_from(frac.len()).ok()?)?;
        let int_part: i64 = if int.is_empty() { 0 } else { int.parse().ok()? };
        let frac_part: i64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
        let numer = int_part.checked_mul(scale)?.checked_add(frac_part)?;
        let r = Ratio::new(numer, scale);
        Some(if neg { -r } else { r })
    }
}

/// How a value is cut to a fixed number of decimals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Round half away from zero on non-negative values (`x.xx5 -> x.xy`).
    #[default]
    HalfUp,
    /// Drop digits past the last kept decimal.
    Truncate,
}

/// Round a non-negative value to `decimals` places.
pub fn round_to<T: Scalar>(value: &T, decimals: u32, mode: Rounding) -> T {
    let scale = T::from_u64(10u64.pow(decimals)).expect("scale fits the scalar type");
    let shifted = value.clone() * scale.clone();
    let kept = match mode {
        Rounding::HalfUp => {
            let half = T::one() / (T::one() + T::one());
            (shifted + half).floor()
        }
        Rounding::Truncate => shifted.floor(),
    };
    kept / scale
}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let n = T::from_usize(values.len())?;
    let sum = values.iter().cloned().fold(T::zero(), |acc, v| acc + v);
    Some(sum / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    type Q = Ratio<i64>;

    #[test]
    fn decimal_parse_is_exact() {
        assert_eq!(Q::from_decimal_str("44.40"), Some(Q::new(444, 10)));
        assert_eq!(Q::from_decimal_str("4.17"), Some(Q::new(417, 100)));
        assert_eq!(Q::from_decimal_str("100"), Some(Q::from_integer(100)));
        assert_eq!(Q::from_decimal_str("-0.5"), Some(Q::new(-1, 2)));
        assert_eq!(Q::from_decimal_str("1.2.3"), None);
        assert_eq!(Q::from_decimal_str(""), None);
        assert_eq!(Q::from_decimal_str("abc"), None);
    }

    #[test]
    fn half_up_on_exact_ties() {
        // 0.125 -> 0.13 under half-up, 0.12 under truncation
        let v = Q::new(1, 8);
        assert_eq!(round_to(&v, 2, Rounding::HalfUp), Q::new(13, 100));
        assert_eq!(round_to(&v, 2, Rounding::Truncate), Q::new(12, 100));
    }

    #[test]
    fn floats_and_rationals_agree_away_from_ties() {
        let q = Q::new(13321, 300);
        let f = 133.21f64 / 3.0;
        assert_eq!(round_to(&q, 2, Rounding::HalfUp), Q::new(4440, 100));
        assert!((round_to(&f, 2, Rounding::HalfUp) - 44.40).abs() < 1e-9);
    }

    #[test]
    fn mean_of_empty_is_none() {
        assert!(mean::<f64>(&[]).is_none());
        assert_eq!(mean(&[Q::from_integer(1), Q::from_integer(2)]), Some(Q::new(3, 2)));
    }
}
