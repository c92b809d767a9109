//! The contrastive loss family and its exact gradients with respect to the
//! input representations.
//!
//! All batch losses share one shape. A batch of `m` pairs is laid out as
//! `2m` representations `[z_1..z_m, z'_1..z'_m]`; representation `a` has the
//! positive `sibling(a) = (a + m) mod 2m`. Every anchor contributes
//!
//! ```text
//! -s(z, z⁺) + λ · (1/α) log Σ_{z⁻ ∈ N(z)} exp(α s(z, z⁻))
//! ```
//!
//! and the reported loss is the mean over anchors. The variants differ only in
//! the anchor set, the negative set `N(z)` and whether `λ` is free:
//!
//! | loss        | anchors      | N(z)                              | λ    |
//! |-------------|--------------|-----------------------------------|------|
//! | NT-Xent     | all 2m       | all 2m−1 others (positive incl.)  | 1    |
//! | decoupled   | first view   | second views of other images      | 1    |
//! | balanced    | all 2m       | both views of other images        | free |
//! | generalized | all 2m       | all 2m−1 others (positive incl.)  | free |
//!
//! Values are always the log-ratio bracket divided by α, so NT-Xent at
//! temperature τ is reported as `τ` times the textbook cross-entropy value and
//! coincides anchor-wise with the generalized loss at `λ = 1, α = 1/τ`.
//!
//! Similarities are plain dot products of the representations as given. On
//! unit vectors this is the cosine; for gradient checking, perturbed
//! (non-unit) inputs are differentiated without renormalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, log_sum_exp, lse_scaled, softmax_scaled, UnitRep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ntxent,
    Decoupled,
    Balanced,
    Generalized,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::Ntxent,
        LossKind::Decoupled,
        LossKind::Balanced,
        LossKind::Generalized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ntxent => "ntxent",
            LossKind::Decoupled => "decoupled",
            LossKind::Balanced => "balanced",
            LossKind::Generalized => "generalized",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown loss `{s}`")))
    }
}

/// Balancing parameters: inverse temperature `alpha` and attract/repel
/// trade-off `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub alpha: f64,
    pub lambda: f64,
}

impl LossParams {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        let p = LossParams { alpha, lambda };
        p.validate()?;
        Ok(p)
    }

    /// NT-Xent parameters for temperature `tau`.
    pub fn from_temperature(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::NonPositiveParameter { name: "tau", value: tau });
        }
        LossParams::new(1.0 / tau, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::NonPositiveAlpha(self.alpha));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::NonPositiveParameter {
                name: "lambda",
                value: self.lambda,
            });
        }
        Ok(())
    }

    pub fn temperature(&self) -> f64 {
        1.0 / self.alpha
    }
}

/// `m` positive pairs `(z_i, z'_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchViews {
    reps: Vec<Vec<f64>>,
    m: usize,
}

impl BatchViews {
    pub fn new(z: Vec<UnitRep>, z_prime: Vec<UnitRep>) -> Result<Self> {
        Self::from_raw_unchecked(
            z.into_iter().map(UnitRep::into_inner).collect(),
            z_prime.into_iter().map(UnitRep::into_inner).collect(),
        )
    }

    /// Builds a batch without the unit-norm check. Shapes are still
    /// validated. Used by finite-difference checks, which perturb single
    /// coordinates off the sphere.
    pub fn from_raw_unchecked(z: Vec<Vec<f64>>, z_prime: Vec<Vec<f64>>) -> Result<Self> {
        if z.len() != z_prime.len() {
            return Err(Error::DimensionMismatch {
                expected: z.len(),
                got: z_prime.len(),
            });
        }
        let m = z.len();
        if m < 2 {
            return Err(Error::BatchTooSmall(m));
        }
        let d = z[0].len();
        if d == 0 {
            return Err(Error::EmptyInput);
        }
        let mut reps = z;
        reps.extend(z_prime);
        for r in &reps {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("representation"));
            }
        }
        Ok(BatchViews { reps, m })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.reps[0].len()
    }

    pub fn z(&self) -> &[Vec<f64>] {
        &self.reps[..self.m]
    }

    pub fn z_prime(&self) -> &[Vec<f64>] {
        &self.reps[self.m..]
    }

    /// Representation `a` in the stacked `[z.., z'..]` layout.
    pub fn rep(&self, a: usize) -> &[f64] {
        &self.reps[a]
    }

    pub fn sibling(&self, a: usize) -> usize {
        (a + self.m) % (2 * self.m)
    }

    #[allow(clippy::needless_range_loop)]
    fn gram(&self) -> Vec<Vec<f64>> {
        let n = self.reps.len();
        let mut g = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in a..n {
                let s = dot(&self.reps[a], &self.reps[b]);
                g[a][b] = s;
                g[b][a] = s;
            }
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean of `-s(z, z⁺)`.
    pub attract: f64,
    /// Mean of the scaled log-sum-exp over negatives (before `λ`).
    pub repel: f64,
    pub per_anchor: Vec<f64>,
}

/// `∂loss/∂z_i` and `∂loss/∂z'_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepGradients {
    pub d_z: Vec<Vec<f64>>,
    pub d_z_prime: Vec<Vec<f64>>,
}

impl RepGradients {
    fn zeros(m: usize, d: usize) -> Self {
        RepGradients {
            d_z: vec![vec![0.0; d]; m],
            d_z_prime: vec![vec![0.0; d]; m],
        }
    }

    fn slot(&mut self, a: usize) -> &mut Vec<f64> {
        let m = self.d_z.len();
        if a < m {
            &mut self.d_z[a]
        } else {
            &mut self.d_z_prime[a - m]
        }
    }

    /// Gradient of representation `a` in the stacked layout.
    pub fn get(&self, a: usize) -> &[f64] {
        let m = self.d_z.len();
        if a < m {
            &self.d_z[a]
        } else {
            &self.d_z_prime[a - m]
        }
    }

    /// Adds `c · ∂(rep_a · rep_b)` into the gradients.
    fn add_pair(&mut self, batch: &BatchViews, a: usize, b: usize, c: f64) {
        let (ra, rb) = (batch.rep(a).to_vec(), batch.rep(b));
        for (g, x) in self.slot(a).iter_mut().zip(rb) {
            *g += c * x;
        }
        for (g, x) in self.slot(b).iter_mut().zip(&ra) {
            *g += c * x;
        }
    }

    fn axpy(&self, scale: f64, other: &RepGradients) -> RepGradients {
        let comb = |x: &[Vec<f64>], y: &[Vec<f64>]| -> Vec<Vec<f64>> {
            x.iter()
                .zip(y)
                .map(|(u, v)| u.iter().zip(v).map(|(a, b)| a + scale * b).collect())
                .collect()
        };
        RepGradients {
            d_z: comb(&self.d_z, &other.d_z),
            d_z_prime: comb(&self.d_z_prime, &other.d_z_prime),
        }
    }
}

struct AnchorTerm {
    anchor: usize,
    positive: usize,
    negatives: Vec<usize>,
}

fn anchor_terms(kind: LossKind, batch: &BatchViews) -> Vec<AnchorTerm> {
    let m = batch.m();
    let n = 2 * m;
    let anchors: Vec<usize> = match kind {
        LossKind::Decoupled => (0..m).collect(),
        _ => (0..n).collect(),
    };
    anchors
        .into_iter()
        .map(|a| {
            let positive = batch.sibling(a);
            let negatives = match kind {
                LossKind::Ntxent | LossKind::Generalized => (0..n).filter(|&b| b != a).collect(),
                LossKind::Balanced => (0..n).filter(|&b| b != a && b != positive).collect(),
                LossKind::Decoupled => (m..n).filter(|&b| b != positive).collect(),
            };
            AnchorTerm {
                anchor: a,
                positive,
                negatives,
            }
        })
        .collect()
}

/// λ actually applied: NT-Xent and the decoupled form are the `λ = 1` cases.
fn effective_lambda(kind: LossKind, p: &LossParams) -> f64 {
    match kind {
        LossKind::Ntxent | LossKind::Decoupled => 1.0,
        LossKind::Balanced | LossKind::Generalized => p.lambda,
    }
}

/// Evaluates any member of the family. For [`LossKind::Ntxent`] and
/// [`LossKind::Decoupled`], `p.lambda` is ignored.
pub fn evaluate(batch: &BatchViews, kind: LossKind, p: &LossParams) -> Result<LossBreakdown> {
    p.validate()?;
    let lambda = effective_lambda(kind, p);
    let g = batch.gram();
    let terms = anchor_terms(kind, batch);
    let mut per_anchor = Vec::with_capacity(terms.len());
    let (mut att, mut rep) = (0.0, 0.0);
    let mut sims = Vec::new();
    for t in &terms {
        let row = &g[t.anchor];
        sims.clear();
        sims.extend(t.negatives.iter().map(|&b| row[b]));
        let a = -row[t.positive];
        let r = lse_scaled(p.alpha, &sims)?;
        att += a;
        rep += r;
        per_anchor.push(a + lambda * r);
    }
    let k = terms.len() as f64;
    let total = per_anchor.iter().sum::<f64>() / k;
    if !total.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok(LossBreakdown {
        total,
        attract: att / k,
        repel: rep / k,
        per_anchor,
    })
}

/// NT-Xent at temperature `tau`, both views as anchors, reported divided by
/// `α = 1/τ`.
pub fn ntxent_loss(batch: &BatchViews, tau: f64) -> Result<LossBreakdown> {
    evaluate(batch, LossKind::Ntxent, &LossParams::from_temperature(tau)?)
}

/// Decoupled loss: first-view anchors, cross-view negatives, positive excluded.
pub fn decoupled_loss(batch: &BatchViews, alpha: f64) -> Result<LossBreakdown> {
    evaluate(batch, LossKind::Decoupled, &LossParams::new(alpha, 1.0)?)
}

pub fn balanced_contrastive_loss(batch: &BatchViews, p: &LossParams) -> Result<LossBreakdown> {
    evaluate(batch, LossKind::Balanced, p)
}

/// Balanced loss with the positive (and same-view others) in the repelling set.
pub fn generalized_ntxent_loss(batch: &BatchViews, p: &LossParams) -> Result<LossBreakdown> {
    evaluate(batch, LossKind::Generalized, p)
}

/// Gradients of the attracting and (unscaled) repelling means separately.
/// The total gradient is `attract + λ_eff · repel`.
pub fn loss_grad_components(
    batch: &BatchViews,
    p: &LossParams,
    kind: LossKind,
) -> Result<(RepGradients, RepGradients)> {
    p.validate()?;
    let g = batch.gram();
    let terms = anchor_terms(kind, batch);
    let k = terms.len() as f64;
    let mut ga = RepGradients::zeros(batch.m(), batch.dim());
    let mut gr = RepGradients::zeros(batch.m(), batch.dim());
    let mut sims = Vec::new();
    for t in &terms {
        ga.add_pair(batch, t.anchor, t.positive, -1.0 / k);
        sims.clear();
        sims.extend(t.negatives.iter().map(|&b| g[t.anchor][b]));
        let w = softmax_scaled(p.alpha, &sims);
        for (&b, wb) in t.negatives.iter().zip(w) {
            gr.add_pair(batch, t.anchor, b, wb / k);
        }
    }
    Ok((ga, gr))
}

pub fn loss_grad_wrt_reps(
    batch: &BatchViews,
    p: &LossParams,
    kind: LossKind,
) -> Result<RepGradients> {
    let (ga, gr) = loss_grad_components(batch, p, kind)?;
    Ok(ga.axpy(effective_lambda(kind, p), &gr))
}

/// Single-anchor objective built from view samples and negative samples,
/// computed directly as `mean_k[-s(z, v_k)] + (λ/ν)(1/α) log Σ exp(α s(z, n))`
/// and through the rearranged log-ratio form. Returns `(direct, log_ratio)`.
pub fn total_loss_both_forms(
    anchor: &UnitRep,
    views: &[UnitRep],
    negatives: &[UnitRep],
    alpha: f64,
    lambda_over_nu: f64,
) -> Result<(f64, f64)> {
    if views.is_empty() || negatives.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::NonPositiveAlpha(alpha));
    }
    if !(lambda_over_nu > 0.0 && lambda_over_nu.is_finite()) {
        return Err(Error::NonPositiveParameter {
            name: "lambda_over_nu",
            value: lambda_over_nu,
        });
    }
    let z = anchor.as_slice();
    let pos: Vec<f64> = views.iter().map(|v| dot(z, v.as_slice())).collect();
    let neg: Vec<f64> = negatives.iter().map(|n| dot(z, n.as_slice())).collect();
    let kf = pos.len() as f64;

    let repel = lse_scaled(alpha, &neg)?;
    let direct = pos.iter().map(|s| -s + lambda_over_nu * repel).sum::<f64>() / kf;

    // log of exp(α s_k) / (Σ exp(α s_n))^(λ/ν)
    let scaled: Vec<f64> = neg.iter().map(|s| alpha * s).collect();
    let log_denominator = lambda_over_nu * log_sum_exp(&scaled);
    let log_ratio = pos
        .iter()
        .map(|s| -(alpha * s - log_denominator))
        .sum::<f64>()
        / (alpha * kf);
    Ok((direct, log_ratio))
}

pub fn total_loss_theoretical(
    anchor: &UnitRep,
    views: &[UnitRep],
    negatives: &[UnitRep],
    alpha: f64,
    lambda_over_nu: f64,
) -> Result<f64> {
    let (direct, log_ratio) = total_loss_both_forms(anchor, views, negatives, alpha, lambda_over_nu)?;
    debug_assert!(
        (direct - log_ratio).abs() <= 1e-9 * direct.abs().max(1.0),
        "direct {direct} vs log-ratio {log_ratio}"
    );
    Ok(direct)
}
