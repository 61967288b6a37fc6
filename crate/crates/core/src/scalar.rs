//! Floating-point scalar abstraction shared by the optics, quantization and
//! network code. Implemented for `f32` and `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::LinalgScalar;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Real scalar usable everywhere in the crate: FFTs, GEMM and autodiff.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + FftNum
    + LinalgScalar
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn of_usize(x: usize) -> Self {
        Self::of(x as f64)
    }

    #[inline]
    fn to64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Short type name written into checkpoints.
    fn type_name() -> &'static str;
}

impl Scalar for f32 {
    fn type_name() -> &'static str {
        "f32"
    }
}

impl Scalar for f64 {
    fn type_name() -> &'static str {
        "f64"
    }
}

/// Wraps an angle into `(-pi, pi]`.
#[inline]
pub fn wrap_phase<T: Scalar>(x: T) -> T {
    let pi = T::PI();
    let two_pi = pi + pi;
    if x > -pi && x <= pi {
        return x;
    }
    let mut y = x - two_pi * ((x + pi) / two_pi).floor();
    // y is now in [-pi, pi); fold the closed lower end onto +pi
    if y <= -pi {
        y = y + two_pi;
    }
    if y > pi {
        y = pi;
    }
    y
}
