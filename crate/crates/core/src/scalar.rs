//! Floating-point scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar type the codebook, density, sampling and metric code is generic over.
///
/// Implemented for `f32` and `f64`. The Gaussian kernel needs `exp`/`ln`, so exact
/// rational types are not supported.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Smallest spread used for the bandwidth floor at this precision.
    const SIGMA_FLOOR: Self;

    /// Converts a literal. Every `f64` literal used in this crate is representable.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal fits the scalar type")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to float")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const SIGMA_FLOOR: Self = 1e-12;
}

impl Scalar for f64 {
    const SIGMA_FLOOR: Self = 1e-12;
}
