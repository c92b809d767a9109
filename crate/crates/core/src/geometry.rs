//! Vector primitives: L2 normalization, similarity measures and the scaled
//! log-sum-exp `(1/α) log Σ exp(α x_i)` that every bound and loss builds on.
//!
//! Everything here is 64-bit and pure.

use crate::error::{Error, Result};

/// Norms below this are treated as representation collapse.
pub const NORM_EPS: f64 = 1e-9;

/// An L2-normalized representation.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRep(Vec<f64>);

impl UnitRep {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Wraps a vector the caller already knows to be unit norm (to 1e-9).
    pub fn from_unit_unchecked(values: Vec<f64>) -> Self {
        debug_assert!((norm(&values) - 1.0).abs() <= 1e-9);
        UnitRep(values)
    }
}

impl AsRef<[f64]> for UnitRep {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Elementwise mean of equally sized vectors.
pub fn mean_vector<V: AsRef<[f64]>>(vs: &[V]) -> Result<Vec<f64>> {
    let first = vs.first().ok_or(Error::EmptyInput)?.as_ref();
    let mut acc = vec![0.0; first.len()];
    for v in vs {
        let v = v.as_ref();
        if v.len() != acc.len() {
            return Err(Error::DimensionMismatch {
                expected: acc.len(),
                got: v.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

fn check_raw(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyInput);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("vector entry"));
    }
    let n = norm(v);
    if n < NORM_EPS {
        return Err(Error::NearZeroNorm { norm: n });
    }
    Ok(n)
}

/// Projects `v` onto the unit sphere.
pub fn normalize(v: &[f64]) -> Result<UnitRep> {
    let n = check_raw(v)?;
    Ok(UnitRep(v.iter().map(|x| x / n).collect()))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = check_raw(a)?;
    let nb = check_raw(b)?;
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `-‖a - b‖²`; on the sphere this equals `-2 + 2 a·b`.
pub fn neg_sq_euclidean(a: &UnitRep, b: &UnitRep) -> f64 {
    -a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
}

/// Natural log-sum-exp with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Smooth maximum `(1/α) log Σ exp(α x_i)`.
///
/// Bounded by `max(xs) ≤ result ≤ max(xs) + ln(n)/α` and convex in `xs`.
pub fn lse_scaled(alpha: f64, xs: &[f64]) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::NonPositiveAlpha(alpha));
    }
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = xs.iter().map(|x| (alpha * (x - max)).exp()).sum();
    Ok(max + sum.ln() / alpha)
}

/// Softmax weights `exp(α x_i) / Σ exp(α x_j)`, the gradient of [`lse_scaled`].
pub fn softmax_scaled(alpha: f64, xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = xs.iter().map(|x| (alpha * (x - max)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}
