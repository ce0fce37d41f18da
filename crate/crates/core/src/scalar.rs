//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point scalar the simulator is generic over (`f32` or `f64`).
///
/// Linear algebra comes from [`RealField`]; conversions go through
/// `num-traits`. Structural tolerances are scalar-dependent because the
/// `1e-10` level checks only make sense in double precision.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + LowerExp + Debug + Send + Sync + 'static
{
    /// Tolerance for unitarity, normalization and Hermiticity checks.
    fn structural_tolerance() -> Self;

    /// Tolerance below which a probability or norm is treated as zero.
    fn negligible() -> Self;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    /// `e^{iθ}`.
    #[inline]
    fn cis(theta: Self) -> Complex<Self> {
        Complex::new(theta.cos(), theta.sin())
    }

    #[inline]
    fn magnitude(self) -> Self {
        if self < Self::zero() {
            -self
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn structural_tolerance() -> Self {
        1e-10
    }

    fn negligible() -> Self {
        1e-12
    }
}

impl Real for f32 {
    fn structural_tolerance() -> Self {
        1e-4
    }

    fn negligible() -> Self {
        1e-6
    }
}

/// Modulus of a complex amplitude without requiring `num_traits::Float`.
#[inline]
pub fn modulus<T: Real>(z: Complex<T>) -> T {
    z.norm_sqr().sqrt()
}

#[inline]
pub fn real<T: Real>(x: T) -> Complex<T> {
    Complex::new(x, T::zero())
}
