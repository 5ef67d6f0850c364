//! Scalar abstraction for the numeric kernels.
//!
//! The reusable math (cosine objectives, the optimizer recurrence,
//! Lloyd iterations, channel scoring) is written against [`Real`] so it
//! runs at `f32` or `f64`; the pipeline instantiates everything at
//! [`crate::Scalar`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the numeric kernels: f32 or f64.
pub trait Real: Float + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Display + Default + 'static {
    /// Lossless-enough conversion of an `f64` constant into `Self`.
    fn from_f64_const(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 constant")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Sum<T> + Debug + Display + Default + 'static
{
}
