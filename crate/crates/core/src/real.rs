//! Scalar abstraction shared by every numeric module.
//!
//! All simulation math is written against [`Real`] so the same code runs with
//! `f64` (the default used by the CLI) or `f32`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar usable for time, state of charge and probabilities.
pub trait Real:
    Float + FromPrimitive + Debug + Display + Default + Send + Sync + Serialize + DeserializeOwned + 'static
{
    /// Converts an `f64` literal into this scalar.
    fn lit(v: f64) -> Self;

    /// Converts a count into this scalar.
    fn count(n: u64) -> Self;

    /// Uniform draw on `[0, 1)`.
    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Standard exponential draw (rate 1).
    fn sample_exp1<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossy conversion used by reporting code.
    fn as_f64(self) -> f64;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn lit(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn count(n: u64) -> Self {
                n as $t
            }

            #[inline]
            fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.random::<$t>()
            }

            #[inline]
            fn sample_exp1<R: Rng + ?Sized>(rng: &mut R) -> Self {
                Exp1.sample(rng)
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
