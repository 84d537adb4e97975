//! Scalar abstraction: the numeric substrate every module is generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable throughout the library.
///
/// `f64` is the default choice (and the only one the CLI exposes); `f32`
/// exists for callers that trade precision for footprint. Gradient checks
/// at the default tolerances assume `f64`.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + Debug + Display + Default + Sum + 'static
{
    /// Lossy conversion from `f64`, used when seeding generic tensors from
    /// configuration values or random draws performed in `f64`.
    fn from_f64_lossy(value: f64) -> Self {
        Self::from_f64(value).expect("f64 -> Scalar conversion")
    }

    /// Conversion to `f64` for serialization and reporting.
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("Scalar -> f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
