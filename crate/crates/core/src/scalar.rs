use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Element type of a [`Tensor`](crate::tensor::Tensor).
///
/// Implemented for `f32` and `f64`. The engine is written against this trait
/// so kernels, graphs and sessions work for either width; the CLI and the
/// acceptance checks use `f64`.
pub trait Scalar:
    Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the value is not
    /// representable at all, which never happens for finite literals.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Default lower bound applied to the argument of `log` (and of the
/// reciprocal used by its derivative).
pub const DEFAULT_LOG_FLOOR: f64 = 1e-12;
