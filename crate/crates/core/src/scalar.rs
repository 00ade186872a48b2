//! Scalar abstraction. Every numerical routine in the crate is generic over a
//! floating-point scalar so the same code runs in `f32` or `f64`; the aliases
//! at the crate root pin `f64` for ordinary use.

use std::fmt::{Debug, Display};

use rand::distr::uniform::SampleUniform;

/// Floating-point scalar the library is generic over.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + SampleUniform
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant; panics only if the target type cannot
    /// represent finite `f64` values at all, which neither impl does.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 constant")
    }

    /// Widens to `f64` for reporting and cross-type comparisons.
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}
