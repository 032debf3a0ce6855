//! Scalar abstraction shared by the geometric and control-law layers.

use nalgebra as na;
use num_traits as nt;

/// Real floating point scalar: `f32` or `f64`.
pub trait Real: na::RealField + Copy + nt::FromPrimitive + nt::ToPrimitive {
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as nt::FromPrimitive>::from_f64(x).expect("finite literal")
    }

    /// Lossy conversion back to `f64`, used for logging and tolerances.
    #[inline]
    fn as_f64(self) -> f64 {
        nt::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
