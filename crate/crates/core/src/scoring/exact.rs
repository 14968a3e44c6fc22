//! Exact rational accumulation.
//!
//! Every finite `f64` is a dyadic rational, so sums and means of measured
//! values can be formed without rounding and converted back to the nearest
//! `f64` once. Aggregates are therefore independent of summation order and
//! thread count, and rescaling by a threshold is exact before that final
//! rounding.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

pub type Exact = BigRational;

/// Exact value of a finite float.
pub fn exact(x: f64) -> Exact {
    BigRational::from_float(x).unwrap_or_else(|| panic!("non-finite value {x} in scoring"))
}

/// Nearest `f64` (ties to even).
pub fn to_f64(x: &Exact) -> f64 {
    x.to_f64().expect("rational out of f64 range")
}

pub fn from_int(n: i64) -> Exact {
    BigRational::from_integer(BigInt::from(n))
}

pub fn sum<'a>(values: impl IntoIterator<Item = &'a Exact>) -> Exact {
    values.into_iter().fold(Exact::zero(), |acc, v| acc + v)
}

/// Exact mean; `None` for an empty slice.
pub fn mean(values: &[Exact]) -> Option<Exact> {
    if values.is_empty() {
        return None;
    }
    Some(sum(values) / from_int(values.len() as i64))
}

pub fn abs_mean(values: &[Exact]) -> Option<Exact> {
    let abs: Vec<Exact> = values.iter().map(Signed::abs).collect();
    mean(&abs)
}

/// Exact mean of floats, rounded once.
pub fn mean_f64(values: &[f64]) -> Option<f64> {
    let ex: Vec<Exact> = values.iter().map(|&v| exact(v)).collect();
    mean(&ex).map(|m| to_f64(&m))
}
