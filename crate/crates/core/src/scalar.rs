//! Floating-point scalar abstraction.
//!
//! Every numerical stage of the pipeline is generic over [`Real`], so the same
//! code runs in `f32` (compact embeddings straight from a model runtime) and
//! `f64` (the default, used by the CLI and the golden tests).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal. Lossy for `f32`, exact for `f64`.
    fn lit(x: f64) -> Self;

    /// Converts a count or a millisecond duration.
    fn from_count(n: u64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn from_count(n: u64) -> Self {
                n as $t
            }

            #[inline]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Total order on reals used for deterministic argmax / sorting. NaN never
/// reaches these call sites (inputs are validated finite on ingestion).
pub(crate) fn cmp_real<T: Real>(a: T, b: T) -> std::cmp::Ordering {
    a.partial_cmp(&b).unwrap_or(std::cmp::Ordering::Equal)
}
