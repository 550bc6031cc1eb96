use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

/// Number type the scorers compute in: `f64` for reports, `BigRational`
/// when results must be exact.
pub trait Score:
    Clone
    + Debug
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
{
    fn ratio(num: usize, den: usize) -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(&self) -> f64;
    /// Order-independent sum.
    fn total(values: &[Self]) -> Self;

    fn mean(values: &[Self]) -> Self {
        if values.is_empty() {
            return Self::zero();
        }
        Self::total(values) / Self::ratio(values.len(), 1)
    }
}

impl Score for f64 {
    fn ratio(num: usize, den: usize) -> Self {
        num as f64 / den as f64
    }

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    /// Neumaier summation over the sorted values.
    fn total(values: &[Self]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mut sum = 0.0;
        let mut comp = 0.0;
        for x in v {
            let t = sum + x;
            if sum.abs() >= x.abs() {
                comp += (sum - t) + x;
            } else {
                comp += (x - t) + sum;
            }
            sum = t;
        }
        sum + comp
    }
}

impl Score for BigRational {
    fn ratio(num: usize, den: usize) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn from_f64(v: f64) -> Self {
        BigRational::from_float(v).expect("finite weight")
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn total(values: &[Self]) -> Self {
        values.iter().cloned().fold(Self::zero(), |a, b| a + b)
    }
}

/// Rounds half away from zero to `digits` decimals, for table display.
pub fn round_half_up(v: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (v * s + 0.5).floor() / s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_sum_is_order_independent() {
        let a = [1e16, 1.0, -1e16, 3.0, 0.1];
        let mut b = a;
        b.reverse();
        assert_eq!(f64::total(&a), f64::total(&b));
        assert_eq!(f64::total(&a), 4.1);
    }

    #[test]
    fn rational_mean_is_exact() {
        let v = [BigRational::ratio(1, 3), BigRational::ratio(2, 3)];
        assert_eq!(BigRational::mean(&v), BigRational::ratio(1, 2));
    }

    #[test]
    fn table_rounding() {
        assert_eq!(round_half_up(3.549_999_999_999_999_6, 2), 3.55);
        assert_eq!(round_half_up(2.125, 2), 2.13);
        assert_eq!(round_half_up(1.0, 2), 1.0);
    }
}
