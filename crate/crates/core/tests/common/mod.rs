//! Shared checks used by both the focused test targets and the acceptance
//! report.
#![allow(dead_code)]

use contralab::encoder::{batch_gradient, flatten, EncoderConfig, MlpParams};
use contralab::geometry::{dot, neg_sq_euclidean, normalize, UnitRep};
use contralab::losses::{
    evaluate, generalized_ntxent_loss, loss_grad_wrt_reps, ntxent_loss, total_loss_both_forms,
    BatchViews, LossKind, LossParams,
};
use contralab::seed::{child_rng, LabRng};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn gaussian(d: usize, rng: &mut LabRng) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn random_unit(d: usize, rng: &mut LabRng) -> UnitRep {
    loop {
        if let Ok(u) = normalize(&gaussian(d, rng)) {
            return u;
        }
    }
}

pub fn random_batch(m: usize, d: usize, rng: &mut LabRng) -> BatchViews {
    let z = (0..m).map(|_| random_unit(d, rng)).collect();
    let zp = (0..m).map(|_| random_unit(d, rng)).collect();
    BatchViews::new(z, zp).unwrap()
}

fn random_params(rng: &mut LabRng) -> LossParams {
    LossParams::new(rng.random_range(0.5..8.0), rng.random_range(0.5..4.0)).unwrap()
}

/// Largest relative error between the analytic representation gradient and
/// central differences, for each of 20 random batches.
pub fn loss_gradient_errors(kind: LossKind, seed: u64) -> Vec<f64> {
    (0..20)
        .map(|trial| {
            let mut rng = child_rng(seed, &format!("fd-loss-{}", kind.name()), trial);
            let m = rng.random_range(2..=6);
            let d = rng.random_range(2..=8);
            let batch = random_batch(m, d, &mut rng);
            let p = random_params(&mut rng);
            let grads = loss_grad_wrt_reps(&batch, &p, kind).unwrap();
            let mut z: Vec<Vec<f64>> = batch.z().to_vec();
            let mut zp: Vec<Vec<f64>> = batch.z_prime().to_vec();
            let mut worst: f64 = 0.0;
            for a in 0..2 * m {
                for k in 0..d {
                    let f = |z: &Vec<Vec<f64>>, zp: &Vec<Vec<f64>>| {
                        let b = BatchViews::from_raw_unchecked(z.clone(), zp.clone()).unwrap();
                        evaluate(&b, kind, &p).unwrap().total
                    };
                    let target = |z: &mut Vec<Vec<f64>>, zp: &mut Vec<Vec<f64>>, delta: f64| {
                        if a < m {
                            z[a][k] += delta;
                        } else {
                            zp[a - m][k] += delta;
                        }
                    };
                    target(&mut z, &mut zp, FD_STEP);
                    let plus = f(&z, &zp);
                    target(&mut z, &mut zp, -2.0 * FD_STEP);
                    let minus = f(&z, &zp);
                    target(&mut z, &mut zp, FD_STEP);
                    let numeric = (plus - minus) / (2.0 * FD_STEP);
                    worst = worst.max(rel_err(grads.get(a)[k], numeric));
                }
            }
            worst
        })
        .collect()
}

/// Same check for every parameter of a `[6, 8, 4]` encoder, including the
/// output normalization.
pub fn encoder_gradient_errors(kind: LossKind, seed: u64) -> Vec<f64> {
    (0..20)
        .map(|trial| {
            let mut rng = child_rng(seed, &format!("fd-encoder-{}", kind.name()), trial);
            let cfg = EncoderConfig {
                layer_dims: vec![6, 8, 4],
                seed: rng.random(),
            };
            let mut params = MlpParams::init(&cfg).unwrap();
            // nonzero biases so their gradients are exercised away from zero
            for layer in &mut params.layers {
                layer.biases.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
            }
            let m = rng.random_range(2..=4);
            let va: Vec<Vec<f64>> = (0..m).map(|_| gaussian(6, &mut rng)).collect();
            let vb: Vec<Vec<f64>> = (0..m).map(|_| gaussian(6, &mut rng)).collect();
            let p = random_params(&mut rng);
            let (_, grads) = batch_gradient(&params, &va, &vb, kind, &p).unwrap();
            let analytic = flatten(&grads);
            let mut theta = params.to_flat();
            let mut worst: f64 = 0.0;
            for i in 0..theta.len() {
                let mut eval_at = |t: &[f64]| {
                    params.set_flat(t).unwrap();
                    batch_gradient(&params, &va, &vb, kind, &p).unwrap().0.total
                };
                let orig = theta[i];
                theta[i] = orig + FD_STEP;
                let plus = eval_at(&theta);
                theta[i] = orig - FD_STEP;
                let minus = eval_at(&theta);
                theta[i] = orig;
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(analytic[i], numeric));
            }
            worst
        })
        .collect()
}

/// Largest absolute differences over 100 random instances:
/// `(generalized vs NT-Xent, direct vs log-ratio total loss, Euclidean vs dot)`.
pub fn identity_errors(seed: u64) -> (f64, f64, f64) {
    let (mut e1, mut e2, mut e3): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for trial in 0..100 {
        let mut rng = child_rng(seed, "identities", trial);
        let m = rng.random_range(2..=16);
        let d = rng.random_range(2..=32);
        let batch = random_batch(m, d, &mut rng);
        let tau = rng.random_range(0.05..2.0);
        let a = ntxent_loss(&batch, tau).unwrap();
        let g = generalized_ntxent_loss(&batch, &LossParams::new(1.0 / tau, 1.0).unwrap()).unwrap();
        e1 = e1.max((a.total - g.total).abs());
        for (x, y) in a.per_anchor.iter().zip(&g.per_anchor) {
            e1 = e1.max((x - y).abs());
        }

        let anchor = random_unit(d, &mut rng);
        let views: Vec<UnitRep> = (0..rng.random_range(1..=10)).map(|_| random_unit(d, &mut rng)).collect();
        let negs: Vec<UnitRep> = (0..rng.random_range(1..=20)).map(|_| random_unit(d, &mut rng)).collect();
        let alpha = rng.random_range(0.5..16.0);
        let lnu = rng.random_range(0.5..4.0);
        let (direct, ratio) = total_loss_both_forms(&anchor, &views, &negs, alpha, lnu).unwrap();
        e2 = e2.max((direct - ratio).abs());

        let u = random_unit(d, &mut rng);
        let v = random_unit(d, &mut rng);
        let lhs = neg_sq_euclidean(&u, &v);
        let rhs = -2.0 + 2.0 * dot(u.as_slice(), v.as_slice());
        e3 = e3.max((lhs - rhs).abs());
    }
    (e1, e2, e3)
}
