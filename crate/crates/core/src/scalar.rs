//! Floating-point abstraction for the numeric kernels.
//!
//! The fire-spread arithmetic, the QP solver, and the neural-network code are
//! written against [`Scalar`] so they can be instantiated at `f32` or `f64`.
//! Everything downstream of the simulation loop uses the crate-level
//! [`crate::Real`] alias.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable by every numeric kernel in this crate.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal, panicking only for values outside the
    /// target type's range (never the case for the constants used here).
    #[inline]
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("literal out of range for scalar type")
    }

    /// Lossy widening to `f64` for reporting and serialization.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_of_squares<F: Scalar>(values: &[F]) -> F {
        values.iter().map(|v| *v * *v).sum()
    }

    #[test]
    fn kernels_instantiate_at_both_widths() {
        assert_eq!(sum_of_squares(&[2.0f32, 3.0f32]), 13.0f32);
        assert_eq!(sum_of_squares(&[2.0f64, 3.0f64]), 13.0f64);
    }

    #[test]
    fn literal_conversion_round_trips() {
        assert_eq!(f64::lit(0.35).as_f64(), 0.35);
        assert!((f32::lit(0.35).as_f64() - 0.35).abs() < 1e-7);
    }
}
