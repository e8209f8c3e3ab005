//! Floating-point abstraction shared by the projection networks and the
//! training objective.

use std::fmt::Debug;
use std::iter::Sum;

use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Real scalar the networks and losses are generic over.
///
/// Implemented for `f32` and `f64`; the crate root aliases fix `f64`, which is
/// what training and the checkpoint format use.
pub trait Scalar: NdFloat + FromPrimitive + Default + Sum + Debug {
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 is representable")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
