//! Numeric abstractions shared by the estimation code.
//!
//! Everything that only needs field arithmetic (estimation by linear solve,
//! simplex projection, weight adjustment) is written against [`Scalar`], which
//! is implemented for `f32`, `f64` and exact rationals. Code that needs
//! transcendental functions (privacy accounting, quantiles) asks for [`Real`].

use std::fmt;

use num_rational::Rational64;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + fmt::Debug + Send + Sync + 'static
{
    /// Smallest meaningful relative spacing; zero for exact types.
    const MACHINE_EPSILON: f64;

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Converts a literal; panics only for values the type cannot hold at all.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn abs_val(self) -> Self {
        if self < Self::zero() {
            Self::zero() - self
        } else {
            self
        }
    }

    fn max_val(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    /// A tolerance of `base`, widened for low-precision types.
    fn tolerance(base: f64) -> Self {
        Self::lit(base.max(Self::MACHINE_EPSILON * 1e3))
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

/// Floating-point scalars.
pub trait Real: Scalar + Float {}

impl Scalar for f64 {
    const MACHINE_EPSILON: f64 = f64::EPSILON;
}

impl Scalar for f32 {
    const MACHINE_EPSILON: f64 = f32::EPSILON as f64;
}

impl Scalar for Rational64 {
    const MACHINE_EPSILON: f64 = 0.0;
}

impl Real for f64 {}
impl Real for f32 {}

pub(crate) fn sum<T: Scalar>(values: &[T]) -> T {
    values.iter().fold(T::zero(), |acc, &v| acc + v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_tolerance_is_tiny() {
        let tol = Rational64::tolerance(1e-9);
        assert!(tol > Rational64::from_integer(0));
        assert!(tol < Rational64::new(1, 1_000_000));
    }

    #[test]
    fn f32_tolerance_is_widened() {
        assert!(f32::tolerance(1e-12) > 1e-5);
        assert_eq!(f64::tolerance(1e-12), 1e-12);
    }
}
