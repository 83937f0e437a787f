//! Scalar abstraction: the solvers are generic over the floating-point type.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the solvers operate on: f32 or f64.
pub trait Scalar: nalgebra::RealField + FromPrimitive + ToPrimitive + Copy {
    /// Convert an `f64` constant, panicking only for non-representable values.
    fn from_config(value: f64) -> Self {
        Self::from_f64(value).expect("constant not representable in scalar type")
    }

    /// Lossy view as `f64`, used for reporting and file output.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
