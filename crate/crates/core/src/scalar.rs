//! Scalar abstraction for the numeric core.
//!
//! Parameter vectors, segment aggregation and the convergence-bound
//! evaluator are generic over [`Scalar`]; the rest of the crate works
//! with the `f64` aliases exported from the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion from an integer weight.
    fn from_weight(w: u64) -> Self {
        Self::from_u64(w).expect("weight representable as scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
