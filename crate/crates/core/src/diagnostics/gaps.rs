//! Dataset-level tightness of the two bounds for a sequence of encoder
//! checkpoints.

use serde::{Deserialize, Serialize};

use super::{attract_bound_gap, repel_bound_gap};
use crate::encoder::{encode, MlpParams};
use crate::error::{Error, Result};
use crate::geometry::UnitRep;
use crate::seed::child_rng;
use crate::synthdata::{AugmentationSpec, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub mean_attract_gap: f64,
    pub mean_repel_gap: f64,
    /// Fraction of anchors whose view mean left the anchor's hemisphere.
    pub attract_precondition_failure_rate: f64,
    /// Anchors skipped because their view mean vanished.
    pub attract_degenerate: usize,
    pub n_anchors: usize,
}

/// Mean gaps for one encoder.
///
/// Each sample is an anchor under one draw `t`; the attracting bound uses
/// `k_views` fresh draws of the same input, the repelling bound a memory bank
/// holding one fresh view of every sample of the other classes.
pub fn gap_point(
    params: &MlpParams,
    data: &Dataset,
    aug: &AugmentationSpec,
    k_views: usize,
    alpha: f64,
    seed: u64,
) -> Result<GapPoint> {
    if k_views == 0 {
        return Err(Error::ConfigInvalid("k_views must be >= 1".into()));
    }
    let counts = data.class_counts();
    if counts.iter().any(|&c| c != counts[0]) {
        return Err(Error::UnbalancedClasses(counts));
    }
    let groups = data.indices_by_class();
    let mut bank: Vec<Vec<UnitRep>> = vec![Vec::new(); data.n_classes];
    for (class, idx) in groups.iter().enumerate() {
        for &j in idx {
            let x = &data.samples[j].x;
            let mut rng = child_rng(seed, "gap-bank", j as u64);
            bank[class].push(encode(params, &aug.sample(x.len(), &mut rng).apply(x))?);
        }
    }

    let (mut attract_sum, mut repel_sum) = (0.0, 0.0);
    let (mut attract_n, mut failures, mut degenerate) = (0usize, 0usize, 0usize);
    for (i, s) in data.samples.iter().enumerate() {
        let mut rng = child_rng(seed, "gap-attract", i as u64);
        let anchor = encode(params, &aug.sample(s.x.len(), &mut rng).apply(&s.x))?;
        let views = (0..k_views)
            .map(|_| encode(params, &aug.sample(s.x.len(), &mut rng).apply(&s.x)))
            .collect::<Result<Vec<_>>>()?;
        match attract_bound_gap(&anchor, &views) {
            Ok(r) => {
                attract_sum += r.gap;
                attract_n += 1;
                if !r.precondition_ok {
                    failures += 1;
                }
            }
            Err(Error::NearZeroNorm { .. }) => degenerate += 1,
            Err(e) => return Err(e),
        }
        let population: Vec<&[UnitRep]> = bank
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != s.y)
            .map(|(_, v)| v.as_slice())
            .collect();
        repel_sum += repel_bound_gap(&anchor, &population, alpha)?.gap;
    }
    let n = data.len();
    Ok(GapPoint {
        mean_attract_gap: attract_sum / attract_n.max(1) as f64,
        mean_repel_gap: repel_sum / n as f64,
        attract_precondition_failure_rate: failures as f64 / attract_n.max(1) as f64,
        attract_degenerate: degenerate,
        n_anchors: n,
    })
}

/// [`gap_point`] for every checkpoint under the same seed.
pub fn gap_curve(
    checkpoints: &[MlpParams],
    data: &Dataset,
    aug: &AugmentationSpec,
    k_views: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<GapPoint>> {
    if checkpoints.len() < 2 {
        return Err(Error::PreconditionViolated(format!(
            "gap curve needs at least 2 checkpoints, got {}",
            checkpoints.len()
        )));
    }
    checkpoints
        .iter()
        .map(|p| gap_point(p, data, aug, k_views, alpha, seed))
        .collect()
}
