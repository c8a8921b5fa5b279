//! Scalar abstraction for the model math.
//!
//! Measurement and structural densities are written once over [`Real`] and
//! instantiated for `f32` and `f64`. The inference machinery (posterior
//! assembly, sampler, study harness) runs in `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where
    T: Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
}

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(logistic(x))`.
#[inline]
pub fn log_logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let sum = xs.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp());
    max + sum.ln()
}

/// `-0.5 * ln(2π)`
#[inline]
pub fn neg_half_ln_2pi<T: Real>() -> T {
    -(T::lit(2.0) * T::PI()).ln() / T::lit(2.0)
}

pub fn normal_log_density<T: Real>(x: T, mean: T, sd: T) -> T {
    let z = (x - mean) / sd;
    neg_half_ln_2pi::<T>() - sd.ln() - z * z / T::lit(2.0)
}
