use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};
use rustfft::FftNum;

/// Floating point storage type for tensors: `f32` or `f64`.
///
/// Reductions always accumulate in `f64` regardless of the storage type.
pub trait Scalar: Float + FromPrimitive + FftNum + Default + Debug + Display + 'static {
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to any float")
    }

    fn wide(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
