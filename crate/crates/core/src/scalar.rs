//! Scalar abstractions shared by the network engine and the metric code.

use std::fmt::Debug;
use std::iter::Sum;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Floating-point element type of tensors and network parameters.
///
/// Training runs in `f32`; `f64` exists so gradients can be checked
/// against finite differences without drowning in roundoff.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
    /// Lossless-as-possible conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Neumaier-compensated sum. Loss reductions run over thousands of terms;
/// a plain running sum loses low bits once the partial sum grows, which
/// swamps central-difference gradient checks.
pub fn compensated_sum<T: Real>(values: impl IntoIterator<Item = T>) -> T {
    let (mut sum, mut carry) = (T::zero(), T::zero());
    for v in values {
        let t = sum + v;
        carry = carry + if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

/// Number type in which segmentation measures are evaluated.
///
/// Implemented for the two floats and for exact rationals, so identities
/// between measures can be checked without rounding.
pub trait MetricScalar: Num + Copy + PartialOrd + Debug {
    fn from_count(n: u64) -> Self;
}

impl MetricScalar for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }
}

impl MetricScalar for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }
}

impl MetricScalar for Ratio<i128> {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(i128::from(n))
    }
}

impl MetricScalar for Ratio<i64> {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(i64::try_from(n).expect("pixel count fits in i64"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_keeps_small_terms() {
        // 1 + 1e-16 * 10_000 is 1 + 1e-12; a running sum drops every small term
        let terms = std::iter::once(1.0f64).chain(std::iter::repeat_n(1e-16, 10_000));
        assert!((compensated_sum(terms.clone()) - (1.0 + 1e-12)).abs() < 1e-15);
        assert_eq!(terms.sum::<f64>(), 1.0);
        assert_eq!(compensated_sum([1e100, 1.0, -1e100]), 1.0);
    }
}
