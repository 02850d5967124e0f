use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar used throughout the crate.
///
/// Implemented for `f32` and `f64`. Tolerances are written as `f64` literals and
/// converted with [`Scalar::lit`]; on `f32` the tighter ones saturate at round-off.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn machine_eps() -> Self {
        Self::default_epsilon()
    }

    fn is_finite_value(self) -> bool {
        self.to_f64().is_some_and(f64::is_finite)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
