//! Scalar abstraction shared by the game model and the solvers.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point currency scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Absolute tolerance for funding and budget comparisons.
    fn tolerance() -> Self;

    /// Absolute tolerance targeted by bisection root finding.
    fn root_tolerance() -> Self;

    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for finite inputs on `f32`/`f64`.
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn tolerance() -> Self {
        1e-9
    }

    fn root_tolerance() -> Self {
        1e-10
    }
}

impl Scalar for f32 {
    fn tolerance() -> Self {
        1e-4
    }

    fn root_tolerance() -> Self {
        1e-6
    }
}

/// `a >= b` up to the scalar's absolute tolerance.
pub fn at_least<S: Scalar>(a: S, b: S) -> bool {
    a >= b - S::tolerance()
}

/// `|a - b| <= tolerance`.
pub fn approx_eq<S: Scalar>(a: S, b: S) -> bool {
    (a - b).abs() <= S::tolerance()
}

/// Kahan-compensated sum, used where aggregation order must not matter.
pub fn compensated_sum<S: Scalar, I: IntoIterator<Item = S>>(values: I) -> S {
    let mut sum = S::zero();
    let mut carry = S::zero();
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerances_scale_with_precision() {
        assert!(f64::tolerance() < f32::tolerance() as f64);
        assert!(f64::root_tolerance() < f64::tolerance());
    }

    #[test]
    fn compensated_sum_beats_naive_on_tiny_increments() {
        let values = std::iter::once(1.0f64).chain(std::iter::repeat_n(1e-16, 10_000));
        let s = compensated_sum(values);
        assert!((s - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn at_least_accepts_boundary() {
        assert!(at_least(5.0f64, 5.0));
        assert!(at_least(5.0f64 - 1e-12, 5.0));
        assert!(!at_least(4.99f64, 5.0));
    }
}
