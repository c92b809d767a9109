//! Synthetic labeled vectors: unit class prototypes plus isotropic Gaussian
//! spread, with uniform or rank-Pareto class counts, and label-preserving
//! stochastic augmentations (noise, plane rotation, coordinate masking).

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, norm};
use crate::seed::{child_rng, LabRng};

/// Maximum cosine allowed between two class prototypes.
pub const PROTOTYPE_MAX_COSINE: f64 = 0.9;
const PROTOTYPE_MAX_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassDistribution {
    Uniform,
    Pareto { shape: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_classes: usize,
    pub d_in: usize,
    pub total_samples: usize,
    pub class_noise_sigma: f64,
    pub distribution: ClassDistribution,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.d_in == 0 {
            return Err(Error::ConfigInvalid("n_classes and d_in must be positive".into()));
        }
        if self.total_samples < self.n_classes {
            return Err(Error::ConfigInvalid(format!(
                "total_samples {} < n_classes {}",
                self.total_samples, self.n_classes
            )));
        }
        if !(self.class_noise_sigma >= 0.0 && self.class_noise_sigma.is_finite()) {
            return Err(Error::ConfigInvalid("class_noise_sigma must be >= 0".into()));
        }
        match self.distribution {
            ClassDistribution::Uniform if !self.total_samples.is_multiple_of(self.n_classes) => {
                Err(Error::ConfigInvalid(format!(
                    "uniform classes need n_classes ({}) to divide total_samples ({})",
                    self.n_classes, self.total_samples
                )))
            }
            ClassDistribution::Pareto { shape } if shape.is_nan() || shape <= 0.0 => {
                Err(Error::ConfigInvalid("pareto shape must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn class_counts(&self) -> Result<Vec<usize>> {
        self.validate()?;
        Ok(match self.distribution {
            ClassDistribution::Uniform => vec![self.total_samples / self.n_classes; self.n_classes],
            ClassDistribution::Pareto { shape } => {
                pareto_counts(self.n_classes, self.total_samples, shape)?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub prototypes: Vec<Vec<f64>>,
    pub n_classes: usize,
    pub d_in: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for s in &self.samples {
            c[s.y] += 1;
        }
        c
    }

    /// Sample indices grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_classes];
        for (i, s) in self.samples.iter().enumerate() {
            groups[s.y].push(i);
        }
        groups
    }

    /// Writes `d_in,n_classes` then one `y,x0,..` row per sample.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "d_in,n_classes")?;
        writeln!(w, "{},{}", self.d_in, self.n_classes)?;
        for s in &self.samples {
            write!(w, "{}", s.y)?;
            for x in &s.x {
                write!(w, ",{x:?}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the format produced by [`Dataset::write_csv`]. Prototypes are not
    /// stored; the loaded dataset carries the per-class sample means instead.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Dataset> {
        let mut lines = r.lines();
        let parse_err = |m: &str| Error::Parse(m.to_string());
        let header = lines.next().ok_or_else(|| parse_err("missing header"))??;
        if header.trim() != "d_in,n_classes" {
            return Err(parse_err("bad header"));
        }
        let dims = lines.next().ok_or_else(|| parse_err("missing dims"))??;
        let dims: Vec<usize> = dims
            .trim()
            .split(',')
            .map(|t| t.parse().map_err(|_| parse_err("bad dims")))
            .collect::<Result<_>>()?;
        let [d_in, n_classes] = dims[..] else {
            return Err(parse_err("bad dims"));
        };
        let mut samples = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.trim().split(',');
            let y: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| parse_err("bad label"))?;
            let x: Vec<f64> = it
                .map(|t| t.parse().map_err(|_| parse_err("bad value")))
                .collect::<Result<_>>()?;
            if x.len() != d_in || y >= n_classes {
                return Err(parse_err("row shape"));
            }
            samples.push(LabeledSample { x, y });
        }
        let mut ds = Dataset {
            samples,
            prototypes: Vec::new(),
            n_classes,
            d_in,
        };
        ds.prototypes = ds
            .indices_by_class()
            .iter()
            .map(|idx| {
                let mut m = vec![0.0; d_in];
                for &i in idx {
                    for (a, x) in m.iter_mut().zip(&ds.samples[i].x) {
                        *a += x;
                    }
                }
                let n = idx.len().max(1) as f64;
                m.iter().map(|a| a / n).collect()
            })
            .collect();
        Ok(ds)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: &Path) -> Result<Dataset> {
        let f = std::fs::File::open(path)?;
        Dataset::read_csv(std::io::BufReader::new(f))
    }
}

fn random_unit(d: usize, rng: &mut LabRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn draw_prototypes(spec: &DatasetSpec) -> Result<Vec<Vec<f64>>> {
    let mut rng = child_rng(spec.seed, "prototypes", 0);
    let mut protos: Vec<Vec<f64>> = Vec::with_capacity(spec.n_classes);
    let mut attempts = 0;
    while protos.len() < spec.n_classes {
        attempts += 1;
        if attempts > PROTOTYPE_MAX_ATTEMPTS {
            return Err(Error::ConfigInvalid(format!(
                "cannot place {} prototypes in {} dims with cosine <= {}",
                spec.n_classes, spec.d_in, PROTOTYPE_MAX_COSINE
            )));
        }
        let p = random_unit(spec.d_in, &mut rng);
        if protos.iter().all(|q| dot(q, &p) <= PROTOTYPE_MAX_COSINE) {
            protos.push(p);
        }
    }
    Ok(protos)
}

fn draw_samples(
    spec: &DatasetSpec,
    prototypes: &[Vec<f64>],
    counts: &[usize],
    rng: &mut LabRng,
) -> Vec<LabeledSample> {
    let noise = Normal::new(0.0, spec.class_noise_sigma).expect("sigma validated");
    let mut samples = Vec::with_capacity(counts.iter().sum());
    for (y, (&count, proto)) in counts.iter().zip(prototypes).enumerate() {
        for _ in 0..count {
            let x = proto.iter().map(|p| p + noise.sample(rng)).collect();
            samples.push(LabeledSample { x, y });
        }
    }
    samples
}

/// Training set: class-major order, counts from `spec.distribution`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    let counts = spec.class_counts()?;
    let prototypes = draw_prototypes(spec)?;
    let mut rng = child_rng(spec.seed, "samples", 0);
    let samples = draw_samples(spec, &prototypes, &counts, &mut rng);
    Ok(Dataset {
        samples,
        prototypes,
        n_classes: spec.n_classes,
        d_in: spec.d_in,
    })
}

/// Balanced held-out set over the same prototypes as [`generate_dataset`].
/// Depends only on `(seed, n_classes, d_in, class_noise_sigma)`, so uniform
/// and long-tailed training sets share it.
pub fn generate_test_set(spec: &DatasetSpec, per_class: usize) -> Result<Dataset> {
    spec.validate()?;
    let prototypes = draw_prototypes(spec)?;
    let mut rng = child_rng(spec.seed, "test-samples", 0);
    let counts = vec![per_class; spec.n_classes];
    let samples = draw_samples(spec, &prototypes, &counts, &mut rng);
    Ok(Dataset {
        samples,
        prototypes,
        n_classes: spec.n_classes,
        d_in: spec.d_in,
    })
}

/// Class sizes proportional to `rank^(-1/shape)`, rounded by largest
/// remainder so they sum to `total`, each at least one, nonincreasing.
pub fn pareto_counts(n_classes: usize, total: usize, shape: f64) -> Result<Vec<usize>> {
    if shape.is_nan() || shape <= 0.0 {
        return Err(Error::ConfigInvalid("pareto shape must be positive".into()));
    }
    if n_classes == 0 || total < n_classes {
        return Err(Error::ConfigInvalid(format!(
            "need 1 <= n_classes ({n_classes}) <= total ({total})"
        )));
    }
    let weights: Vec<f64> = (1..=n_classes).map(|r| (r as f64).powf(-1.0 / shape)).collect();
    let wsum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    while let Some(z) = counts.iter().position(|&c| c == 0) {
        let max = *counts.iter().max().expect("nonempty");
        let donor = counts.iter().rposition(|&c| c == max).expect("max exists");
        counts[donor] -= 1;
        counts[z] = 1;
    }
    counts.sort_unstable_by(|a, b| b.cmp(a));
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Noise,
    Rotation,
    Mask,
}

/// A parametric family of label-preserving transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub noise_sigma: f64,
    pub rotation_angle_max: f64,
    pub mask_prob: f64,
    pub enabled: Vec<TransformKind>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            noise_sigma: 0.1,
            rotation_angle_max: 0.3,
            mask_prob: 0.1,
            enabled: vec![TransformKind::Noise, TransformKind::Rotation, TransformKind::Mask],
        }
    }
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        AugmentationSpec {
            noise_sigma: 0.0,
            rotation_angle_max: 0.0,
            mask_prob: 0.0,
            enabled: Vec::new(),
        }
    }

    pub fn noise_only(sigma: f64) -> Self {
        AugmentationSpec {
            noise_sigma: sigma,
            rotation_angle_max: 0.0,
            mask_prob: 0.0,
            enabled: vec![TransformKind::Noise],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::ConfigInvalid("noise_sigma must be >= 0".into()));
        }
        if !(self.rotation_angle_max >= 0.0 && self.rotation_angle_max.is_finite()) {
            return Err(Error::ConfigInvalid("rotation_angle_max must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::ConfigInvalid("mask_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn has(&self, k: TransformKind) -> bool {
        self.enabled.contains(&k)
    }

    /// Draws one transform `t ~ T` for inputs of dimension `d`.
    pub fn sample(&self, d: usize, rng: &mut LabRng) -> SampledTransform {
        let noise = (self.has(TransformKind::Noise) && self.noise_sigma > 0.0).then(|| {
            let n = Normal::new(0.0, self.noise_sigma).expect("validated");
            (0..d).map(|_| n.sample(rng)).collect()
        });
        let rotation = (self.has(TransformKind::Rotation) && self.rotation_angle_max > 0.0 && d >= 2)
            .then(|| {
                let u = random_unit(d, rng);
                let mut v = random_unit(d, rng);
                // Gram-Schmidt; redraw on (measure-zero) degeneracy
                loop {
                    let c = dot(&u, &v);
                    let w: Vec<f64> = v.iter().zip(&u).map(|(a, b)| a - c * b).collect();
                    let n = norm(&w);
                    if n > 1e-6 {
                        v = w.into_iter().map(|x| x / n).collect();
                        break;
                    }
                    v = random_unit(d, rng);
                }
                let angle = rng.random_range(0.0..=self.rotation_angle_max);
                PlaneRotation { u, v, angle }
            });
        let mask = (self.has(TransformKind::Mask) && self.mask_prob > 0.0)
            .then(|| (0..d).map(|_| rng.random_bool(self.mask_prob)).collect());
        SampledTransform { noise, rotation, mask }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneRotation {
    u: Vec<f64>,
    v: Vec<f64>,
    angle: f64,
}

/// One concrete draw from an [`AugmentationSpec`]; can be applied to any
/// number of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTransform {
    noise: Option<Vec<f64>>,
    rotation: Option<PlaneRotation>,
    mask: Option<Vec<bool>>,
}

impl SampledTransform {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        if let Some(noise) = &self.noise {
            out.iter_mut().zip(noise).for_each(|(o, n)| *o += n);
        }
        if let Some(PlaneRotation { u, v, angle }) = &self.rotation {
            let (a, b) = (dot(&out, u), dot(&out, v));
            let (s, c) = angle.sin_cos();
            for ((o, ui), vi) in out.iter_mut().zip(u).zip(v) {
                *o += (c - 1.0) * (a * ui + b * vi) + s * (a * vi - b * ui);
            }
        }
        if let Some(mask) = &self.mask {
            out.iter_mut().zip(mask).filter(|(_, &m)| m).for_each(|(o, _)| *o = 0.0);
        }
        out
    }
}

/// Applies one fresh draw `t ~ T` to `x`.
pub fn augment(x: &[f64], aug: &AugmentationSpec, rng: &mut LabRng) -> Vec<f64> {
    aug.sample(x.len(), rng).apply(x)
}
