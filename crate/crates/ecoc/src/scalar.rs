//! Scalar abstraction for the numeric core.
//!
//! All of the math in this crate is written against [`Scalar`] so the same
//! routines run in `f32` or `f64`. The crate-root aliases pin `f64` as the
//! default precision.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
}

/// Numerically stable log(sum(exp(xs))).
pub fn log_sum_exp<S: Scalar>(xs: &[S]) -> S {
    let m = xs.iter().cloned().fold(S::neg_infinity(), S::max);
    if m.is_infinite() && m < S::zero() {
        return S::neg_infinity();
    }
    let sum: S = xs.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

/// log(exp(a) + exp(b)) without materialising a slice.
pub fn log_add_exp<S: Scalar>(a: S, b: S) -> S {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi.is_infinite() && hi < S::zero() {
        return S::neg_infinity();
    }
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct() {
        let xs = [-1.0f64, -2.0, -3.0];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-12);
    }

    #[test]
    fn log_add_exp_handles_neg_infinity() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert!((log_add_exp(f64::NEG_INFINITY, -1.0) - -1.0).abs() < 1e-12);
    }

    #[test]
    fn works_in_f32() {
        let xs = [0.5f32, 0.25];
        let direct = (0.5f32.exp() + 0.25f32.exp()).ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-5);
    }
}
