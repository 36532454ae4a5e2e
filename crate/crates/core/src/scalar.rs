//! Scalar abstraction so every solver routine works with `f32` or `f64`
//! (or any other IEEE-like float that implements the `num_traits` stack).

use num_traits::{Float, FromPrimitive, NumAssignOps, NumCast};
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

/// Floating-point scalar usable throughout the library.
///
/// Blanket-implemented for any type with the required `num_traits`
/// capabilities, so `f32`, `f64`, and compatible user types all qualify.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + NumAssignOps
    + Sum
    + Send
    + Sync
    + Debug
    + Display
    + LowerExp
    + 'static
{
    /// Converts an `f64` literal. Panics only if the target type cannot
    /// represent any approximation of the value, which cannot happen for
    /// finite literals and ordinary float types.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal not representable in scalar type")
    }

    /// Converts a `usize` exactly where possible, saturating otherwise.
    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).unwrap_or_else(Self::max_value)
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::lit(2.0)
    }

    /// Lossy view as `f64`, for diagnostics and error payloads.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + NumCast
        + NumAssignOps
        + Sum
        + Send
        + Sync
        + Debug
        + Display
        + LowerExp
        + 'static
{
}
