//! Scalar abstraction for the floating-point type used throughout the solver.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast};

/// Floating-point scalar the solver is generic over: `f32` or `f64`.
///
/// Production runs use `f64` (the aliases at the crate root); `f32` is
/// available for experimentation but the shipped tolerances assume `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64` (exact for `Scalar = f64`).
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to Scalar")
    }

    /// Widening conversion to `f64` for reporting.
    fn as_f64(self) -> f64 {
        <f64 as NumCast>::from(self).expect("Scalar converts to f64")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to Scalar")
    }

    fn of_i64(v: i64) -> Self {
        Self::from_i64(v).expect("i64 converts to Scalar")
    }

    fn pi() -> Self {
        Self::of(std::f64::consts::PI)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
