//! Scalar abstraction shared by the model and the estimators.

use nalgebra as na;
use num_traits as nt;

/// Floating point scalar the whole crate is generic over (`f32` or `f64`).
///
/// The numeric methods (`sqrt`, `powf`, `max`, ...) come from
/// [`nalgebra::RealField`]; `num-traits` supplies literal conversion.
pub trait Real:
    na::RealField + Copy + nt::FromPrimitive + nt::ToPrimitive + nt::FloatConst + Default
{
    /// Machine epsilon of the concrete type.
    const EPS: Self;

    /// Converts an `f64` literal. Never fails for `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as nt::FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        nt::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const EPS: Self = f32::EPSILON;
}

impl Real for f64 {
    const EPS: Self = f64::EPSILON;
}
