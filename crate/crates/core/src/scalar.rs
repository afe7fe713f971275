//! Scalar abstraction shared by every solver.
//!
//! All numerics are written against [`Real`], which is implemented for `f32`
//! and `f64`. Tolerances are specified in `f64` and converted with [`lit`].

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Floating-point scalar usable by the solvers: `f32` or `f64`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + 'static {
    /// Machine epsilon of the scalar type.
    fn eps() -> Self {
        Self::default_epsilon()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` constant into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("finite f64 literal is representable")
}

/// Converts `T` into `f64` for reporting.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Condition-number ceiling above which a linear solve is rejected.
///
/// `1e14` for `f64`, scaled by the ratio of machine epsilons for narrower types.
pub fn cond_limit<T: Real>() -> T {
    lit::<T>(1e14 * (f64::EPSILON / to_f64(T::eps())))
}
