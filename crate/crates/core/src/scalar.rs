//! Floating-point scalar abstraction shared by the numeric layers.
//!
//! Everything from matrices to the optimiser is written against [`Scalar`],
//! so the same network code runs in `f64` (the default used by the
//! experiments) or `f32`. Probability distributions and data generation stay
//! in `f64` and are cast at the boundary.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real floating-point type usable throughout the crate.
///
/// Implemented automatically for every type that satisfies the bounds, which
/// in practice means `f32` and `f64`.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`. Panics only for types that cannot
    /// represent finite doubles at all, which no float type does.
    #[inline]
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("scalar type cannot represent an f64")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar type cannot be widened to f64")
    }

    /// Converts a count, as used for averaging denominators.
    #[inline]
    fn of_usize(value: usize) -> Self {
        Self::from_usize(value).expect("count not representable")
    }
}

impl<T> Scalar for T where
    T: Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
}
