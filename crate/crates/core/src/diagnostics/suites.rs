//! Randomized verification suites. Trial `i` of suite `s` draws from its own
//! stream `(seed, s, i)`, so results do not depend on execution order.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{attract_bound_gap, check_lemma1, lemma2_slack, lemma3_slack, repel_bound_gap, LEMMA3_SLACK, SLACK};
use crate::error::{Error, Result};
use crate::geometry::{normalize, UnitRep};
use crate::seed::{child_rng, LabRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Lemma1,
    Lemma2,
    Lemma3,
    Theorem1,
    Theorem2,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Lemma1,
        Suite::Lemma2,
        Suite::Lemma3,
        Suite::Theorem1,
        Suite::Theorem2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lemma1 => "lemma1",
            Suite::Lemma2 => "lemma2",
            Suite::Lemma3 => "lemma3",
            Suite::Theorem1 => "theorem1",
            Suite::Theorem2 => "theorem2",
        }
    }

    fn tolerance(self) -> f64 {
        match self {
            Suite::Lemma3 => LEMMA3_SLACK,
            _ => SLACK,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown suite `{s}`")))
    }
}

/// Aggregate over the trials of one suite. `violations` and `mean_gap` count
/// only trials whose preconditions hold; the rest are tallied separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: Suite,
    pub trials: usize,
    pub violations: usize,
    /// Largest amount by which a checked inequality failed (0 if none).
    pub max_violation: f64,
    pub mean_gap: f64,
    pub precondition_failures: usize,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Outcome of one randomized trial.
enum Trial {
    Checked(f64),
    PreconditionFailed,
}

fn log_uniform(rng: &mut LabRng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

fn random_unit(d: usize, rng: &mut LabRng) -> UnitRep {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(u) = normalize(&v) {
            return u;
        }
    }
}

/// Unit vector scattered around `center`; larger `kappa` is tighter.
fn around(center: &UnitRep, kappa: f64, rng: &mut LabRng) -> UnitRep {
    loop {
        let v: Vec<f64> = center
            .as_slice()
            .iter()
            .map(|c| { let g: f64 = StandardNormal.sample(rng); kappa * c + g / (center.dim() as f64).sqrt() })
            .collect();
        if let Ok(u) = normalize(&v) {
            return u;
        }
    }
}

fn lemma1_trial(rng: &mut LabRng) -> Result<Trial> {
    let alpha = log_uniform(rng, 0.1, 100.0);
    let n = rng.random_range(2..=64);
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let c = check_lemma1(alpha, &xs)?;
    Ok(Trial::Checked(c.lower_slack.min(c.upper_slack)))
}

fn lemma2_trial(rng: &mut LabRng) -> Result<Trial> {
    let alpha = log_uniform(rng, 0.1, 100.0);
    let n = rng.random_range(1..=64);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    Ok(Trial::Checked(lemma2_slack(alpha, &x, &y)?))
}

fn lemma3_trial(rng: &mut LabRng) -> Result<Trial> {
    let n = rng.random_range(1..=64);
    let g1: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..5.0) })
        .collect();
    let mut g2: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let k = rng.random_range(0..n);
    g2[k] = g2[k].abs();
    Ok(Trial::Checked(lemma3_slack(&g1, &g2)?))
}

fn theorem1_trial(rng: &mut LabRng) -> Result<Trial> {
    let d = rng.random_range(2..=32);
    let k = rng.random_range(1..=16);
    let center = random_unit(d, rng);
    let kappa = log_uniform(rng, 0.05, 20.0);
    let views: Vec<UnitRep> = (0..k).map(|_| around(&center, kappa, rng)).collect();
    let anchor = if rng.random_bool(0.5) {
        around(&center, kappa, rng)
    } else {
        random_unit(d, rng)
    };
    match attract_bound_gap(&anchor, &views) {
        Ok(r) if r.precondition_ok => Ok(Trial::Checked(r.gap)),
        Ok(_) | Err(Error::NearZeroNorm { .. }) => Ok(Trial::PreconditionFailed),
        Err(e) => Err(e),
    }
}

fn theorem2_trial(rng: &mut LabRng) -> Result<Trial> {
    let n_classes = rng.random_range(2..=16);
    let per_class = rng.random_range(2..=32);
    let alpha = log_uniform(rng, 0.5, 16.0);
    let d = rng.random_range(2..=32);
    let population: Vec<Vec<UnitRep>> = (0..n_classes)
        .map(|_| {
            let center = random_unit(d, rng);
            let kappa = log_uniform(rng, 0.05, 20.0);
            (0..per_class).map(|_| around(&center, kappa, rng)).collect()
        })
        .collect();
    let anchor = random_unit(d, rng);
    match repel_bound_gap(&anchor, &population, alpha) {
        Ok(r) => Ok(Trial::Checked(r.gap)),
        Err(Error::NearZeroNorm { .. }) => Ok(Trial::PreconditionFailed),
        Err(e) => Err(e),
    }
}

/// Runs `trials` randomized instances of `suite`. With `corrupt`, every
/// measured gap is negated (a negative control that must fail).
pub fn run_suite(suite: Suite, trials: usize, seed: u64, corrupt: bool) -> Result<SuiteResult> {
    if trials == 0 {
        return Err(Error::ConfigInvalid("trials must be >= 1".into()));
    }
    let tol = suite.tolerance();
    let mut violations = 0;
    let mut max_violation: f64 = 0.0;
    let mut gap_sum = 0.0;
    let mut checked = 0usize;
    let mut precondition_failures = 0;
    for t in 0..trials {
        let mut rng = child_rng(seed, suite.name(), t as u64);
        let trial = match suite {
            Suite::Lemma1 => lemma1_trial(&mut rng)?,
            Suite::Lemma2 => lemma2_trial(&mut rng)?,
            Suite::Lemma3 => lemma3_trial(&mut rng)?,
            Suite::Theorem1 => theorem1_trial(&mut rng)?,
            Suite::Theorem2 => theorem2_trial(&mut rng)?,
        };
        match trial {
            Trial::Checked(gap) => {
                let gap = if corrupt { -gap } else { gap };
                checked += 1;
                gap_sum += gap;
                if gap < -tol {
                    violations += 1;
                    max_violation = max_violation.max(-gap);
                }
            }
            Trial::PreconditionFailed => precondition_failures += 1,
        }
    }
    Ok(SuiteResult {
        suite,
        trials,
        violations,
        max_violation,
        mean_gap: if checked == 0 { 0.0 } else { gap_sum / checked as f64 },
        precondition_failures,
    })
}
