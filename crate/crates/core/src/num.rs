//! Scalar abstractions shared by the metric and loss code.
//!
//! Field arithmetic (scores, weights, F1 algebra) is written against
//! [`Scalar`], which exact rationals satisfy. Anything that needs a
//! logarithm or non-finite values is written against [`Real`].

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// A number type closed under the four field operations.
pub trait Scalar: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug {
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar")
    }

    fn from_frame(frame: u64) -> Self {
        Self::from_u64(frame).expect("frame index representable in scalar")
    }

    /// Lossy conversion used only for reporting and tolerance checks.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn clamp_unit(self) -> Self {
        if self < Self::zero() {
            Self::zero()
        } else if self > Self::one() {
            Self::one()
        } else {
            self
        }
    }
}

impl<T> Scalar for T where T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug {}

/// Floating point scalar.
pub trait Real: Scalar + Float {}

impl<T> Real for T where T: Scalar + Float {}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    #[test]
    fn rationals_and_floats_are_scalars() {
        fn third<T: Scalar>() -> T {
            T::one() / T::from_count(3)
        }
        assert_eq!(third::<Rational64>(), Rational64::new(1, 3));
        assert!((third::<f64>() - 1.0 / 3.0).abs() < 1e-16);
        assert!((third::<f32>() - 1.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn clamp_unit_bounds() {
        assert_eq!(1.5f64.clamp_unit(), 1.0);
        assert_eq!((-0.5f64).clamp_unit(), 0.0);
        assert_eq!(Rational64::new(1, 2).clamp_unit(), Rational64::new(1, 2));
    }
}
