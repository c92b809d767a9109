mod common;

use common::{gaussian, random_batch, random_unit};
use contralab::diagnostics::{prototype_bias, repel_bound_gap};
use contralab::encoder::{
    apply_update, encode, train_step, EncoderConfig, MlpParams, OptimizerConfig,
};
use contralab::eval::{knn_eval, LabeledReps, LinearProbe};
use contralab::geometry::{dot, normalize, UnitRep};
use contralab::losses::{evaluate, BatchViews, LossKind, LossParams};
use contralab::seed::child_rng;
use contralab::synthdata::{
    generate_dataset, AugmentationSpec, ClassDistribution, Dataset, DatasetSpec, LabeledSample,
};
use proptest::prelude::*;

fn params(alpha: f64, lambda: f64) -> LossParams {
    LossParams::new(alpha, lambda).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_ignore_a_common_relabeling(seed in any::<u64>(), m in 2usize..8, d in 2usize..10,
                                         alpha in 0.5f64..10.0, lambda in 0.5f64..4.0) {
        let mut rng = child_rng(seed, "perm", 0);
        let b = random_batch(m, d, &mut rng);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.reverse();
        perm.rotate_left(seed as usize % m);
        let z: Vec<UnitRep> = perm.iter().map(|&i| UnitRep::from_unit_unchecked(b.z()[i].clone())).collect();
        let zp: Vec<UnitRep> = perm.iter().map(|&i| UnitRep::from_unit_unchecked(b.z_prime()[i].clone())).collect();
        let pb = BatchViews::new(z, zp).unwrap();
        for kind in LossKind::ALL {
            let p = params(alpha, lambda);
            let x = evaluate(&b, kind, &p).unwrap().total;
            let y = evaluate(&pb, kind, &p).unwrap().total;
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{kind:?}: {x} vs {y}");
        }
    }

    #[test]
    fn losses_ignore_positive_rescaling_before_normalization(seed in any::<u64>(), m in 2usize..6,
                                                             scale in 1e-3f64..1e3) {
        let mut rng = child_rng(seed, "scale", 0);
        let raw: Vec<Vec<f64>> = (0..2 * m).map(|_| gaussian(5, &mut rng)).collect();
        let build = |c: f64| {
            let reps: Vec<UnitRep> = raw
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let k = if i == 0 { c } else { 1.0 };
                    normalize(&v.iter().map(|x| x * k).collect::<Vec<_>>()).unwrap()
                })
                .collect();
            let (a, b) = reps.split_at(m);
            BatchViews::new(a.to_vec(), b.to_vec()).unwrap()
        };
        let (b1, b2) = (build(1.0), build(scale));
        for kind in LossKind::ALL {
            let p = params(2.0, 2.0);
            let x = evaluate(&b1, kind, &p).unwrap().total;
            let y = evaluate(&b2, kind, &p).unwrap().total;
            prop_assert!((x - y).abs() <= 1e-12, "{kind:?}: {x} vs {y}");
        }
    }

    #[test]
    fn balanced_repel_rises_with_negative_similarity(t1 in 0.0f64..1.4, dt in 0.01f64..0.15,
                                                     alpha in 0.5f64..10.0, lambda in 0.5f64..4.0) {
        // z1 rotates toward z0 = z0'; every other similarity stays fixed.
        let e = |i: usize| { let mut v = vec![0.0; 4]; v[i] = 1.0; UnitRep::from_unit_unchecked(v) };
        let at = |t: f64| {
            let z1 = UnitRep::from_unit_unchecked(vec![(1.6 - t).cos(), (1.6 - t).sin(), 0.0, 0.0]);
            BatchViews::new(vec![e(0), z1], vec![e(0), e(2)]).unwrap()
        };
        let p = params(alpha, lambda);
        let lo = evaluate(&at(t1), LossKind::Balanced, &p).unwrap();
        let hi = evaluate(&at(t1 + dt), LossKind::Balanced, &p).unwrap();
        prop_assert!(hi.repel > lo.repel);
        prop_assert_eq!(hi.attract, lo.attract);
    }

    #[test]
    fn balanced_attract_falls_with_positive_similarity(t1 in 0.0f64..1.4, dt in 0.01f64..0.15) {
        let e = |i: usize| { let mut v = vec![0.0; 4]; v[i] = 1.0; UnitRep::from_unit_unchecked(v) };
        let at = |t: f64| {
            let z1p = UnitRep::from_unit_unchecked(vec![0.0, (1.6 - t).sin(), (1.6 - t).cos(), 0.0]);
            BatchViews::new(vec![e(0), e(2)], vec![e(0), z1p]).unwrap()
        };
        let p = params(4.0, 2.0);
        let lo = evaluate(&at(t1), LossKind::Balanced, &p).unwrap();
        let hi = evaluate(&at(t1 + dt), LossKind::Balanced, &p).unwrap();
        prop_assert!(hi.attract < lo.attract);
    }

    #[test]
    fn knn_ignores_training_order(seed in any::<u64>(), k in 1usize..8) {
        let mut rng = child_rng(seed, "knn-perm", 0);
        let n = 40;
        let reps: Vec<UnitRep> = (0..n).map(|_| random_unit(3, &mut rng)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let test = LabeledReps::new((0..20).map(|_| random_unit(3, &mut rng)).collect(), (0..20).map(|i| i % 4).collect()).unwrap();
        let train = LabeledReps::new(reps.clone(), labels.clone()).unwrap();
        let shift = (seed % n as u64) as usize;
        let mut order: Vec<usize> = (0..n).rev().collect();
        order.rotate_left(shift);
        let shuffled = LabeledReps::new(order.iter().map(|&i| reps[i].clone()).collect(),
                                        order.iter().map(|&i| labels[i]).collect()).unwrap();
        let a = knn_eval(&train, &test, k).unwrap();
        let b = knn_eval(&shuffled, &test, k).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn probe_loss_never_rises_at_small_lr(seed in any::<u64>()) {
        let mut rng = child_rng(seed, "probe-mono", 0);
        let reps = (0..60).map(|_| random_unit(6, &mut rng)).collect();
        let labels = (0..60).map(|i| i % 5).collect();
        let data = LabeledReps::new(reps, labels).unwrap();
        let (_, hist) = LinearProbe::fit(&data, 5, 50, 0.01).unwrap();
        for w in hist.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-15);
        }
    }
}

#[test]
fn repel_term_approaches_the_hardest_negative() {
    let mut rng = child_rng(3, "smooth-max", 0);
    for _ in 0..20 {
        let m = 5;
        let b = random_batch(m, 6, &mut rng);
        // mean over anchors of the largest negative similarity
        let hardest: f64 = (0..2 * m)
            .map(|a| {
                (0..2 * m)
                    .filter(|&j| j != a && j != b.sibling(a))
                    .map(|j| dot(b.rep(a), b.rep(j)))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum::<f64>()
            / (2 * m) as f64;
        let mut prev = f64::INFINITY;
        for alpha in [1.0, 10.0, 100.0, 1000.0] {
            let r = evaluate(&b, LossKind::Balanced, &params(alpha, 1.0)).unwrap().repel;
            let excess = r - hardest;
            assert!(excess >= -1e-12);
            assert!(excess <= ((2 * (m - 1)) as f64).ln() / alpha + 1e-12);
            assert!(excess < prev);
            prev = excess;
        }
    }
}

#[test]
fn repel_rhs_shrinks_with_alpha_on_identical_population() {
    let anchor = normalize(&[1.0, 0.0, 0.0]).unwrap();
    let u = normalize(&[0.3, 0.9, 0.1]).unwrap();
    let v = normalize(&[-0.2, 0.1, 0.9]).unwrap();
    let pop = vec![vec![u.clone(), u.clone()], vec![v.clone(), v.clone()]];
    let mut prev = f64::INFINITY;
    for alpha in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
        let r = repel_bound_gap(&anchor, &pop, alpha).unwrap();
        assert!(r.rhs <= prev);
        prev = r.rhs;
    }
}

fn small_spec(seed: u64) -> DatasetSpec {
    DatasetSpec {
        n_classes: 3,
        d_in: 6,
        total_samples: 30,
        class_noise_sigma: 0.3,
        distribution: ClassDistribution::Uniform,
        seed,
    }
}

fn small_encoder(seed: u64) -> MlpParams {
    MlpParams::init(&EncoderConfig {
        layer_dims: vec![6, 10, 4],
        seed,
    })
    .unwrap()
}

#[test]
fn bias_vanishes_for_a_constant_encoder() {
    let mut p = small_encoder(1);
    let last = p.layers.last_mut().unwrap();
    last.weights.iter_mut().for_each(|w| *w = 0.0);
    last.biases = vec![1.0, 2.0, -1.0, 0.5];
    let data = generate_dataset(&small_spec(2)).unwrap();
    let r = prototype_bias(&p, &data, &AugmentationSpec::default(), 4, 9).unwrap();
    assert!(r.bias_mc.abs() < 1e-12 && r.bias_single.abs() < 1e-12, "{r:?}");
}

#[test]
fn bias_vanishes_for_repeated_points_without_augmentation() {
    let mut spec = small_spec(3);
    spec.class_noise_sigma = 0.0;
    let data = generate_dataset(&spec).unwrap();
    let r = prototype_bias(&small_encoder(4), &data, &AugmentationSpec::identity(), 3, 9).unwrap();
    assert!(r.bias_mc < 1e-12 && r.bias_single < 1e-12, "{r:?}");
}

#[test]
fn bias_ignores_class_relabeling() {
    let data = generate_dataset(&small_spec(5)).unwrap();
    let relabeled = Dataset {
        samples: data
            .samples
            .iter()
            .map(|s| LabeledSample {
                x: s.x.clone(),
                y: (s.y + 1) % 3,
            })
            .collect(),
        ..data.clone()
    };
    let p = small_encoder(6);
    let aug = AugmentationSpec::default();
    let a = prototype_bias(&p, &data, &aug, 3, 11).unwrap();
    let b = prototype_bias(&p, &relabeled, &aug, 3, 11).unwrap();
    assert!((a.bias_mc - b.bias_mc).abs() < 1e-12);
    assert!((a.bias_single - b.bias_single).abs() < 1e-12);
}

#[test]
fn encoder_outputs_are_unit_or_rejected() {
    let p = small_encoder(7);
    let mut rng = child_rng(7, "unit-out", 0);
    for _ in 0..200 {
        let u = encode(&p, &gaussian(6, &mut rng)).unwrap();
        assert!((dot(u.as_slice(), u.as_slice()) - 1.0).abs() < 1e-12);
    }
    let mut dead = p.clone();
    dead.layers.iter_mut().for_each(|l| {
        l.weights.iter_mut().for_each(|w| *w = 0.0);
        l.biases.iter_mut().for_each(|b| *b = 0.0);
    });
    assert!(encode(&dead, &[1.0; 6]).is_err());
}

#[test]
fn training_trajectory_is_deterministic() {
    let data = generate_dataset(&small_spec(8)).unwrap();
    let inputs: Vec<&[f64]> = data.samples.iter().map(|s| s.x.as_slice()).collect();
    let run = || {
        let mut p = small_encoder(9);
        let mut rng = child_rng(9, "traj", 0);
        let opt = OptimizerConfig::default();
        let mut losses = Vec::new();
        for _ in 0..5 {
            let l = train_step(&mut p, &inputs, &AugmentationSpec::default(), LossKind::Balanced,
                               &params(4.0, 2.0), &opt, 0.1, &mut rng).unwrap();
            losses.push(l.total.to_bits());
        }
        (p, losses)
    };
    assert_eq!(run(), run());
}

#[test]
fn plain_sgd_keeps_no_hidden_state() {
    let p0 = small_encoder(10);
    let mut rng = child_rng(10, "frozen", 0);
    let g: Vec<_> = p0
        .zero_grads()
        .into_iter()
        .map(|mut d| {
            d.weights.iter_mut().for_each(|w| *w = gaussian(1, &mut rng)[0]);
            d.biases.iter_mut().for_each(|b| *b = gaussian(1, &mut rng)[0]);
            d
        })
        .collect();
    let plain = OptimizerConfig {
        learning_rate: 0.1,
        momentum: 0.0,
        weight_decay: 0.0,
        epochs: 1,
    };
    let mut one = p0.clone();
    apply_update(&mut one, &g, &plain, 0.1);
    let mut two = p0.clone();
    apply_update(&mut two, &g, &plain, 0.05);
    // the buffer holds exactly the last gradient, nothing accumulated
    assert_eq!(two.momentum, g);
    apply_update(&mut two, &g, &plain, 0.05);
    assert_eq!(two.momentum, g);
    for (a, b) in one.to_flat().iter().zip(two.to_flat()) {
        assert!((a - b).abs() < 1e-15);
    }
    let heavy = OptimizerConfig { momentum: 0.9, ..plain };
    let mut three = p0.clone();
    apply_update(&mut three, &g, &heavy, 0.05);
    apply_update(&mut three, &g, &heavy, 0.05);
    assert_ne!(three.momentum, g);
}

#[test]
fn identical_specs_give_identical_datasets() {
    let spec = DatasetSpec {
        distribution: ClassDistribution::Pareto { shape: 6.0 },
        ..small_spec(12)
    };
    let a = generate_dataset(&spec).unwrap();
    let b = generate_dataset(&spec).unwrap();
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.prototypes, b.prototypes);
}
