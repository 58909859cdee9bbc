//! Scalar abstraction: all numerics are generic over a floating-point type.
//!
//! `Real` is implemented for `f32` and `f64`; concrete type aliases at the
//! crate root fix `f64` as the working precision for the CLI and tests.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating-point scalar usable throughout the library.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal not representable in scalar type")
    }

    /// Euclidean remainder: result lies in `[0, m)` for `m > 0`.
    fn rem_wrap(self, m: Self) -> Self {
        let r = self - m * (self / m).floor();
        // floor arithmetic can land exactly on m through rounding
        if r >= m {
            r - m
        } else if r < Self::zero() {
            r + m
        } else {
            r
        }
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

/// Pairwise summation over a slice; deterministic and more accurate than
/// a naive left fold for long panel lists.
pub fn pairwise_sum<R: Real>(xs: &[R]) -> R {
    match xs.len() {
        0 => R::zero(),
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}
