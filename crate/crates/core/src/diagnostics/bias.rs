//! Prototype representation bias: how far the surrogate prototype of a single
//! input (mean over its augmentations) sits from its class prototype (mean
//! over augmentations of every input of the class).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode, MlpParams};
use crate::error::{Error, Result};
use crate::geometry::norm;
use crate::seed::child_rng;
use crate::synthdata::{AugmentationSpec, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// `E ‖E_{T,X|y} f(T(X)) − E_T f(T(x₀))‖` with Monte Carlo inner means.
    Definition,
    /// Mean of `‖f(t(x')) − f(t(x))‖` with `x'` a random same-class input
    /// and one shared draw `t`.
    SingleSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub bias_mc: f64,
    pub bias_single: f64,
    pub k_samples: usize,
    pub n_points: usize,
}

fn check_classes(data: &Dataset) -> Result<Vec<Vec<usize>>> {
    let groups = data.indices_by_class();
    if let Some(c) = groups.iter().position(|g| g.len() < 2) {
        return Err(Error::SingletonClass(c));
    }
    Ok(groups)
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn prototype_bias_mode(
    params: &MlpParams,
    data: &Dataset,
    aug: &AugmentationSpec,
    k_samples: usize,
    mode: BiasMode,
    seed: u64,
) -> Result<f64> {
    if k_samples == 0 {
        return Err(Error::ConfigInvalid("k_samples must be >= 1".into()));
    }
    let groups = check_classes(data)?;
    let d_out = params.output_dim();
    let n = data.len();
    match mode {
        BiasMode::Definition => {
            let mut surrogates = Vec::with_capacity(n);
            for (i, s) in data.samples.iter().enumerate() {
                let mut rng = child_rng(seed, "bias-definition", i as u64);
                let mut acc = vec![0.0; d_out];
                for _ in 0..k_samples {
                    let r = encode(params, &aug.sample(s.x.len(), &mut rng).apply(&s.x))?;
                    acc.iter_mut().zip(r.as_slice()).for_each(|(a, v)| *a += v);
                }
                acc.iter_mut().for_each(|a| *a /= k_samples as f64);
                surrogates.push(acc);
            }
            let prototypes: Vec<Vec<f64>> = groups
                .iter()
                .map(|g| {
                    let mut m = vec![0.0; d_out];
                    for &i in g {
                        m.iter_mut().zip(&surrogates[i]).for_each(|(a, v)| *a += v);
                    }
                    m.iter().map(|a| a / g.len() as f64).collect()
                })
                .collect();
            let total: f64 = data
                .samples
                .iter()
                .zip(&surrogates)
                .map(|(s, sur)| norm(&sub(&prototypes[s.y], sur)))
                .sum();
            Ok(total / n as f64)
        }
        BiasMode::SingleSample => {
            let mut total = 0.0;
            for (i, s) in data.samples.iter().enumerate() {
                let mut rng = child_rng(seed, "bias-single", i as u64);
                let peers = &groups[s.y];
                for _ in 0..k_samples {
                    let j = loop {
                        let j = peers[rng.random_range(0..peers.len())];
                        if j != i {
                            break j;
                        }
                    };
                    let t = aug.sample(s.x.len(), &mut rng);
                    let a = encode(params, &t.apply(&s.x))?;
                    let b = encode(params, &t.apply(&data.samples[j].x))?;
                    total += norm(&sub(b.as_slice(), a.as_slice()));
                }
            }
            Ok(total / (n * k_samples) as f64)
        }
    }
}

/// Both estimators side by side.
pub fn prototype_bias(
    params: &MlpParams,
    data: &Dataset,
    aug: &AugmentationSpec,
    k_samples: usize,
    seed: u64,
) -> Result<BiasReport> {
    Ok(BiasReport {
        bias_mc: prototype_bias_mode(params, data, aug, k_samples, BiasMode::Definition, seed)?,
        bias_single: prototype_bias_mode(params, data, aug, k_samples, BiasMode::SingleSample, seed)?,
        k_samples,
        n_points: data.len(),
    })
}
