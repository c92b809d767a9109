//! Numerical checks of the log-sum-exp lemmas and the attracting/repelling
//! upper bounds, plus the dataset-level gap and prototype-bias measurements.
//!
//! Every inequality is checked with an absolute slack of [`SLACK`].

mod bias;
mod gaps;
pub mod suites;

pub use bias::{prototype_bias, prototype_bias_mode, BiasMode, BiasReport};
pub use gaps::{gap_curve, gap_point, GapPoint};

use crate::error::{Error, Result};
use crate::geometry::{dot, log_sum_exp, lse_scaled, mean_vector, norm, UnitRep, NORM_EPS};

/// Floating-point allowance on every inequality.
pub const SLACK: f64 = 1e-9;
/// Allowance for the max-product check, which involves no transcendental.
pub const LEMMA3_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Check {
    pub lower_ok: bool,
    pub upper_ok: bool,
    /// `lse - max`
    pub lower_slack: f64,
    /// `max + ln(n)/α - lse`
    pub upper_slack: f64,
}

/// `max(xs) ≤ (1/α) log Σ exp(α x) ≤ max(xs) + ln(n)/α`.
pub fn check_lemma1(alpha: f64, xs: &[f64]) -> Result<Lemma1Check> {
    let lse = lse_scaled(alpha, xs)?;
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lower_slack = lse - max;
    let upper_slack = max + (xs.len() as f64).ln() / alpha - lse;
    Ok(Lemma1Check {
        lower_ok: lower_slack >= -SLACK,
        upper_ok: upper_slack >= -SLACK,
        lower_slack,
        upper_slack,
    })
}

/// Midpoint convexity slack `(u(x)+u(y))/2 - u((x+y)/2)` of the smooth max.
pub fn lemma2_slack(alpha: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let mid: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(0.5 * (lse_scaled(alpha, x)? + lse_scaled(alpha, y)?) - lse_scaled(alpha, &mid)?)
}

pub fn check_lemma2(alpha: f64, x: &[f64], y: &[f64]) -> Result<bool> {
    Ok(lemma2_slack(alpha, x, y)? >= -SLACK)
}

/// `max(g1·g2) - max(g1)·max(g2)`'s negation: the slack of the max-product bound.
pub fn lemma3_slack(g1: &[f64], g2: &[f64]) -> Result<f64> {
    if g1.len() != g2.len() {
        return Err(Error::DimensionMismatch {
            expected: g1.len(),
            got: g2.len(),
        });
    }
    if g1.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = g1.iter().find(|v| **v < 0.0) {
        return Err(Error::PreconditionViolated(format!("g1 has negative entry {bad}")));
    }
    let max2 = g2.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max2 < 0.0 {
        return Err(Error::PreconditionViolated(format!("max(g2) = {max2} < 0")));
    }
    let max1 = g1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_prod = g1
        .iter()
        .zip(g2)
        .map(|(a, b)| a * b)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(max1 * max2 - max_prod)
}

pub fn check_lemma3(g1: &[f64], g2: &[f64]) -> Result<bool> {
    Ok(lemma3_slack(g1, g2)? >= -LEMMA3_SLACK)
}

/// One instance of the attracting bound
/// `-s(z, E_T f) ≤ -E_T s(z, f)`, with the expectation over `views`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttractBoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// Anchor and mean of views share a hemisphere.
    pub precondition_ok: bool,
    pub k_views: usize,
}

pub fn attract_bound_gap(anchor: &UnitRep, views: &[UnitRep]) -> Result<AttractBoundReport> {
    let mean = mean_vector(views)?;
    let z = anchor.as_slice();
    if mean.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            got: mean.len(),
        });
    }
    let mean_norm = norm(&mean);
    if mean_norm < NORM_EPS {
        return Err(Error::NearZeroNorm { norm: mean_norm });
    }
    let zm = dot(z, &mean);
    let lhs = -zm / mean_norm;
    let rhs = -views.iter().map(|v| dot(z, v.as_slice())).sum::<f64>() / views.len() as f64;
    Ok(AttractBoundReport {
        lhs,
        rhs,
        gap: rhs - lhs,
        precondition_ok: zm >= 0.0,
        k_views: views.len(),
    })
}

/// One instance of the repelling bound, treating the finite per-class
/// population as the exact law of the negatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepelBoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// Smallest class-mean norm.
    pub nu: f64,
    pub alpha: f64,
    pub n_classes: usize,
    /// `ν·rhs ≥ 0`. The bound is guaranteed only when this holds (or `ν = 1`):
    /// if every similarity is negative, dividing a negative smooth max by
    /// `ν < 1` can push the right-hand side below the left.
    pub bound_nonnegative: bool,
}

/// `max_c s(z, μ_c) ≤ (1/(να)) log E_{c} E_{x|c} exp(α s(z, x)) + ln(n)/(να)`
/// over the classes in `population` (the anchor's own class excluded by the
/// caller). Classes must be equally sized.
pub fn repel_bound_gap<C: AsRef<[UnitRep]>>(
    anchor: &UnitRep,
    population: &[C],
    alpha: f64,
) -> Result<RepelBoundReport> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::NonPositiveAlpha(alpha));
    }
    if population.len() < 2 {
        return Err(Error::PreconditionViolated(format!(
            "need at least 2 classes, got {}",
            population.len()
        )));
    }
    let counts: Vec<usize> = population.iter().map(|c| c.as_ref().len()).collect();
    if counts[0] == 0 {
        return Err(Error::EmptyInput);
    }
    if counts.iter().any(|&c| c != counts[0]) {
        return Err(Error::UnbalancedClasses(counts));
    }
    let z = anchor.as_slice();
    let n = population.len();
    let mut lhs = f64::NEG_INFINITY;
    let mut nu = f64::INFINITY;
    let mut class_log_means = Vec::with_capacity(n);
    let mut scaled = Vec::with_capacity(counts[0]);
    for class in population {
        let class = class.as_ref();
        let mean = mean_vector(class)?;
        if mean.len() != z.len() {
            return Err(Error::DimensionMismatch {
                expected: z.len(),
                got: mean.len(),
            });
        }
        let mn = norm(&mean);
        if mn < NORM_EPS {
            return Err(Error::NearZeroNorm { norm: mn });
        }
        lhs = lhs.max(dot(z, &mean) / mn);
        nu = nu.min(mn);
        scaled.clear();
        scaled.extend(class.iter().map(|r| alpha * dot(z, r.as_slice())));
        class_log_means.push(log_sum_exp(&scaled) - (class.len() as f64).ln());
    }
    let ln_n = (n as f64).ln();
    let log_expectation = log_sum_exp(&class_log_means) - ln_n;
    let rhs = (log_expectation + ln_n) / (nu * alpha);
    Ok(RepelBoundReport {
        lhs,
        rhs,
        gap: rhs - lhs,
        nu,
        alpha,
        n_classes: n,
        bound_nonnegative: rhs >= 0.0,
    })
}
