//! Experiment orchestration: training runs with per-epoch metrics and
//! checkpoints, the balancing-parameter grid, verification suites, and CSV
//! emission.
//!
//! All CSV floats are written with 9 significant digits, so identical
//! configurations and seeds produce byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diagnostics::gap_point;
use crate::diagnostics::suites::{run_suite, Suite, SuiteResult};
use crate::diagnostics::{prototype_bias, BiasReport};
use crate::encoder::{
    cosine_lr, encode, train_step, Checkpoint, EncoderConfig, MlpParams, OptimizerConfig,
};
use crate::error::{Error, Result};
use crate::eval::{knn_eval, linear_probe, EvalReport, LabeledReps};
use crate::losses::{LossKind, LossParams};
use crate::seed::{child_rng, derive_seed};
use crate::synthdata::{
    generate_dataset, generate_test_set, AugmentationSpec, ClassDistribution, Dataset, DatasetSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub alpha: f64,
    pub lambda: f64,
}

impl LossConfig {
    pub fn params(&self) -> Result<LossParams> {
        LossParams::new(self.alpha, self.lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub knn_k: usize,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    /// Size of the balanced held-out set, per class.
    pub test_per_class: usize,
    /// Compute bias and bound gaps on logging epochs.
    pub diagnostics: bool,
    pub bias_k_samples: usize,
    pub gap_k_views: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            knn_k: 5,
            probe_epochs: 200,
            probe_lr: 1.0,
            test_per_class: 100,
            diagnostics: true,
            bias_k_samples: 10,
            gap_k_views: 10,
        }
    }
}

/// A complete run description, read from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub augmentation: AugmentationSpec,
    pub encoder: EncoderConfig,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    pub batch_size: usize,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_every")]
    pub log_every: usize,
    #[serde(default = "default_every")]
    pub checkpoint_every: usize,
    pub seed: u64,
}

fn default_every() -> usize {
    10
}

impl Default for ExperimentConfig {
    /// The desk-scale reference run: 8 balanced classes in 32 dimensions,
    /// a `[32, 64, 64, 16]` encoder, balanced loss at `(α, λ) = (4, 2)`.
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec {
                n_classes: 8,
                d_in: 32,
                total_samples: 2000,
                class_noise_sigma: 0.15,
                distribution: ClassDistribution::Uniform,
                seed: 1,
            },
            augmentation: AugmentationSpec::default(),
            encoder: EncoderConfig {
                layer_dims: vec![32, 64, 64, 16],
                seed: 1,
            },
            optimizer: OptimizerConfig::default(),
            loss: LossConfig {
                kind: LossKind::Balanced,
                alpha: 4.0,
                lambda: 2.0,
            },
            batch_size: 64,
            eval: EvalConfig::default(),
            log_every: 10,
            checkpoint_every: 10,
            seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.augmentation.validate()?;
        self.encoder.validate()?;
        self.optimizer.validate()?;
        self.loss.params()?;
        if self.encoder.layer_dims[0] != self.dataset.d_in {
            return Err(Error::ConfigInvalid(format!(
                "encoder input {} does not match d_in {}",
                self.encoder.layer_dims[0], self.dataset.d_in
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::ConfigInvalid("batch_size must be >= 2".into()));
        }
        if self.log_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::ConfigInvalid("log_every and checkpoint_every must be >= 1".into()));
        }
        let e = &self.eval;
        if e.knn_k == 0 || e.probe_epochs == 0 || e.test_per_class == 0 {
            return Err(Error::ConfigInvalid("knn_k, probe_epochs, test_per_class must be >= 1".into()));
        }
        if e.bias_k_samples == 0 || e.gap_k_views == 0 {
            return Err(Error::ConfigInvalid("bias_k_samples and gap_k_views must be >= 1".into()));
        }
        if e.probe_lr.is_nan() || e.probe_lr <= 0.0 {
            return Err(Error::ConfigInvalid("probe_lr must be > 0".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Reseeds the data, the encoder initialization and the training streams.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.dataset.seed = seed;
        self.encoder.seed = seed;
        self
    }
}

/// Formats a float with 9 significant digits.
pub fn fmt9(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.8e}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_attract: f64,
    pub loss_repel: f64,
    pub knn_acc: f64,
    pub bias_mc: f64,
    pub bias_single: f64,
    pub gap_attract_mean: f64,
    pub gap_repel_mean: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "epoch,loss_total,loss_attract,loss_repel,knn_acc,bias_mc,bias_single,gap_attract_mean,gap_repel_mean,lr";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let f = [
            self.loss_total,
            self.loss_attract,
            self.loss_repel,
            self.knn_acc,
            self.bias_mc,
            self.bias_single,
            self.gap_attract_mean,
            self.gap_repel_mean,
            self.lr,
        ];
        let mut s = self.epoch.to_string();
        for v in f {
            s.push(',');
            s.push_str(&fmt9(v));
        }
        s
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

/// Clean (unaugmented) representations of a dataset.
pub fn encode_dataset(params: &MlpParams, data: &Dataset) -> Result<LabeledReps> {
    let reps = data
        .samples
        .iter()
        .map(|s| encode(params, &s.x))
        .collect::<Result<Vec<_>>>()?;
    LabeledReps::new(reps, data.labels())
}

pub fn evaluate_knn(params: &MlpParams, train: &Dataset, test: &Dataset, k: usize) -> Result<EvalReport> {
    knn_eval(&encode_dataset(params, train)?, &encode_dataset(params, test)?, k)
}

pub fn evaluate_probe(
    params: &MlpParams,
    train: &Dataset,
    test: &Dataset,
    epochs: usize,
    lr: f64,
) -> Result<EvalReport> {
    linear_probe(&encode_dataset(params, train)?, &encode_dataset(params, test)?, epochs, lr)
}

/// Training set and balanced held-out set for a config.
pub fn build_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    Ok((
        generate_dataset(&cfg.dataset)?,
        generate_test_set(&cfg.dataset, cfg.eval.test_per_class)?,
    ))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    /// `(epoch, parameters)` at every checkpoint, starting with epoch 0.
    pub checkpoints: Vec<(usize, MlpParams)>,
    pub final_params: MlpParams,
    pub final_knn: EvalReport,
    pub final_probe: EvalReport,
}

fn diagnostics_row(
    cfg: &ExperimentConfig,
    params: &MlpParams,
    train: &Dataset,
    epoch: usize,
) -> Result<(BiasReport, f64, f64)> {
    let seed = derive_seed(cfg.seed, "diagnostics", epoch as u64);
    let bias = prototype_bias(params, train, &cfg.augmentation, cfg.eval.bias_k_samples, seed)?;
    let balanced = matches!(cfg.dataset.distribution, ClassDistribution::Uniform);
    let (ga, gr) = if balanced {
        let g = gap_point(params, train, &cfg.augmentation, cfg.eval.gap_k_views, cfg.loss.alpha, seed)?;
        (g.mean_attract_gap, g.mean_repel_gap)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok((bias, ga, gr))
}

/// Trains the encoder described by `cfg`. When `out` is given, writes
/// `metrics.csv`, `config.json` and `checkpoints/ckpt_<epoch>.json` there.
pub fn run_train(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train, test) = build_data(cfg)?;
    run_train_on(cfg, &train, &test, out)
}

/// [`run_train`] on explicit data.
pub fn run_train_on(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ckpt_dir = out.map(|o| o.join("checkpoints"));
    if let Some(dir) = &ckpt_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(out.expect("dir implies out").join("config.json"), cfg.to_json())?;
    }
    let save = |epoch: usize, p: &MlpParams| -> Result<()> {
        if let Some(dir) = &ckpt_dir {
            Checkpoint::from_params(p, epoch).save(&dir.join(format!("ckpt_{epoch}.json")))?;
        }
        Ok(())
    };

    let loss_params = cfg.loss.params()?;
    let mut params = MlpParams::init(&cfg.encoder)?;
    let mut checkpoints = vec![(0, params.clone())];
    save(0, &params)?;
    let epochs = cfg.optimizer.epochs;
    let mut metrics = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=epochs {
        let at = |e: Error| Error::AtEpoch {
            epoch,
            source: Box::new(e),
        };
        let lr = cosine_lr(cfg.optimizer.learning_rate, epoch - 1, epochs);
        order.sort_unstable();
        order.shuffle(&mut child_rng(cfg.seed, "shuffle", epoch as u64));
        let mut aug_rng = child_rng(cfg.seed, "augment", epoch as u64);
        let (mut tot, mut att, mut rep, mut n_batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let inputs: Vec<&[f64]> = chunk.iter().map(|&i| train.samples[i].x.as_slice()).collect();
            let l = train_step(
                &mut params,
                &inputs,
                &cfg.augmentation,
                cfg.loss.kind,
                &loss_params,
                &cfg.optimizer,
                lr,
                &mut aug_rng,
            )
            .map_err(at)?;
            tot += l.total;
            att += l.attract;
            rep += l.repel;
            n_batches += 1;
        }
        if epoch % cfg.checkpoint_every == 0 || epoch == epochs {
            checkpoints.push((epoch, params.clone()));
            save(epoch, &params)?;
        }
        if epoch % cfg.log_every == 0 || epoch == epochs {
            let nb = n_batches.max(1) as f64;
            let knn = evaluate_knn(&params, train, test, cfg.eval.knn_k).map_err(at)?;
            let (bias_mc, bias_single, ga, gr) = if cfg.eval.diagnostics {
                let (b, ga, gr) = diagnostics_row(cfg, &params, train, epoch).map_err(at)?;
                (b.bias_mc, b.bias_single, ga, gr)
            } else {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            };
            metrics.push(MetricsRow {
                epoch,
                loss_total: tot / nb,
                loss_attract: att / nb,
                loss_repel: rep / nb,
                knn_acc: knn.top1_accuracy,
                bias_mc,
                bias_single,
                gap_attract_mean: ga,
                gap_repel_mean: gr,
                lr,
            });
        }
    }

    if let Some(o) = out {
        std::fs::write(o.join("metrics.csv"), metrics_csv(&metrics))?;
    }
    let final_knn = evaluate_knn(&params, train, test, cfg.eval.knn_k)?;
    let final_probe = evaluate_probe(&params, train, test, cfg.eval.probe_epochs, cfg.eval.probe_lr)?;
    Ok(TrainOutcome {
        metrics,
        checkpoints,
        final_params: params,
        final_knn,
        final_probe,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub loss: LossKind,
    pub alpha: f64,
    pub lambda: f64,
    pub knn_acc: f64,
    pub probe_acc: f64,
}

pub const GRID_HEADER: &str = "loss,alpha,lambda,knn_acc,probe_acc";

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut s = String::from(GRID_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.loss.name(),
            fmt9(r.alpha),
            fmt9(r.lambda),
            fmt9(r.knn_acc),
            fmt9(r.probe_acc)
        );
    }
    s
}

/// Training seed of one grid cell, derived from the cell's identity so that
/// adding cells never changes another cell's stream.
pub fn grid_cell_seed(master: u64, kind: LossKind, alpha: f64, lambda: f64) -> u64 {
    derive_seed(
        master,
        &format!("grid/{}/{:016x}/{:016x}", kind.name(), alpha.to_bits(), lambda.to_bits()),
        0,
    )
}

/// The configuration a grid cell trains with.
pub fn grid_cell_config(base: &ExperimentConfig, kind: LossKind, alpha: f64, lambda: f64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.loss = LossConfig { kind, alpha, lambda };
    cfg.seed = grid_cell_seed(base.seed, kind, alpha, lambda);
    cfg
}

/// One training run per `(loss, α, λ)` cell, losses outermost. The data are
/// shared by all cells. Writes `grid.csv` into `out` when given.
pub fn run_grid(
    base: &ExperimentConfig,
    kinds: &[LossKind],
    alphas: &[f64],
    lambdas: &[f64],
    out: Option<&Path>,
) -> Result<Vec<GridRow>> {
    if kinds.is_empty() || alphas.is_empty() || lambdas.is_empty() {
        return Err(Error::ConfigInvalid("grid axes must be nonempty".into()));
    }
    base.validate()?;
    let (train, test) = build_data(base)?;
    let mut rows = Vec::with_capacity(kinds.len() * alphas.len() * lambdas.len());
    for &kind in kinds {
        for &alpha in alphas {
            for &lambda in lambdas {
                let cfg = grid_cell_config(base, kind, alpha, lambda);
                let o = run_train_on(&cfg, &train, &test, None)?;
                rows.push(GridRow {
                    loss: kind,
                    alpha,
                    lambda,
                    knn_acc: o.final_knn.top1_accuracy,
                    probe_acc: o.final_probe.top1_accuracy,
                });
            }
        }
    }
    if let Some(o) = out {
        std::fs::create_dir_all(o)?;
        std::fs::write(o.join("grid.csv"), grid_csv(&rows))?;
    }
    Ok(rows)
}

pub const VERIFY_HEADER: &str = "suite,trials,violations,max_violation,mean_gap,precondition_failures";

pub fn verify_csv(results: &[SuiteResult]) -> String {
    let mut s = String::from(VERIFY_HEADER);
    s.push('\n');
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.suite,
            r.trials,
            r.violations,
            fmt9(r.max_violation),
            fmt9(r.mean_gap),
            r.precondition_failures
        );
    }
    s
}

/// Runs the selected suites; writes `verify.csv` into `out` when given.
pub fn run_verify(
    suites: &[Suite],
    trials: usize,
    seed: u64,
    corrupt: bool,
    out: Option<&Path>,
) -> Result<Vec<SuiteResult>> {
    let results = suites
        .iter()
        .map(|&s| run_suite(s, trials, seed, corrupt))
        .collect::<Result<Vec<_>>>()?;
    if let Some(o) = out {
        std::fs::create_dir_all(o)?;
        std::fs::write(o.join("verify.csv"), verify_csv(&results))?;
    }
    Ok(results)
}

/// Checkpoints in `dir` named `ckpt_<epoch>.json`, sorted by epoch.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(epoch) = name
            .strip_prefix("ckpt_")
            .and_then(|r| r.strip_suffix(".json"))
            .and_then(|e| e.parse::<usize>().ok())
        {
            found.push((epoch, path));
        }
    }
    found.sort();
    Ok(found)
}

pub const GAPS_HEADER: &str = "epoch,gap_attract_mean,gap_repel_mean,attract_precondition_failure_rate";

pub fn gaps_csv(rows: &[(usize, crate::diagnostics::GapPoint)]) -> String {
    let mut s = String::from(GAPS_HEADER);
    s.push('\n');
    for (e, g) in rows {
        let _ = writeln!(
            s,
            "{e},{},{},{}",
            fmt9(g.mean_attract_gap),
            fmt9(g.mean_repel_gap),
            fmt9(g.attract_precondition_failure_rate)
        );
    }
    s
}

pub const BIAS_HEADER: &str = "bias_mc,bias_single,k_samples,n_points";

pub fn bias_csv(r: &BiasReport) -> String {
    format!(
        "{BIAS_HEADER}\n{},{},{},{}\n",
        fmt9(r.bias_mc),
        fmt9(r.bias_single),
        r.k_samples,
        r.n_points
    )
}

pub const EVAL_HEADER: &str = "protocol,top1_accuracy,n_test,k_or_epochs";

pub fn eval_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(EVAL_HEADER);
    s.push('\n');
    for r in reports {
        let p = match r.protocol {
            crate::eval::Protocol::Knn => "knn",
            crate::eval::Protocol::Linear => "linear",
        };
        let _ = writeln!(s, "{p},{},{},{}", fmt9(r.top1_accuracy), r.n_test, r.k_or_epochs);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.dataset.total_samples = 64;
        c.dataset.d_in = 8;
        c.encoder.layer_dims = vec![8, 12, 6];
        c.optimizer.epochs = 3;
        c.batch_size = 16;
        c.eval.test_per_class = 4;
        c.eval.probe_epochs = 10;
        c.eval.bias_k_samples = 2;
        c.eval.gap_k_views = 2;
        c.log_every = 1;
        c.checkpoint_every = 2;
        c
    }

    #[test]
    fn fmt9_is_nine_digits() {
        assert_eq!(fmt9(0.123456789123), "1.23456789e-1");
        assert_eq!(fmt9(1.0), "1.00000000e0");
        assert_eq!(fmt9(f64::NAN), "nan");
    }

    #[test]
    fn config_round_trip_and_validation() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        let mut bad = c.clone();
        bad.batch_size = 1;
        assert!(bad.validate().is_err());
        let mut bad = c.clone();
        bad.encoder.layer_dims[0] = 7;
        assert!(bad.validate().is_err());
        assert!(matches!(ExperimentConfig::from_json("{"), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn zero_epochs_gives_header_only() {
        let mut c = tiny();
        c.optimizer.epochs = 0;
        let dir = tempfile::tempdir().unwrap();
        let o = run_train(&c, Some(dir.path())).unwrap();
        assert!(o.metrics.is_empty());
        assert_eq!(
            std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap(),
            format!("{METRICS_HEADER}\n")
        );
        let ck = list_checkpoints(&dir.path().join("checkpoints")).unwrap();
        assert_eq!(ck.iter().map(|c| c.0).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn tiny_run_logs_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let o = run_train(&tiny(), Some(dir.path())).unwrap();
        assert_eq!(o.metrics.iter().map(|m| m.epoch).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(o.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>(), vec![0, 2, 3]);
        let ck = list_checkpoints(&dir.path().join("checkpoints")).unwrap();
        assert_eq!(ck.len(), 3);
        let reloaded = Checkpoint::load(&ck[2].1).unwrap().to_params().unwrap();
        assert_eq!(reloaded.layers, o.final_params.layers);
        for m in &o.metrics {
            assert!(m.loss_total.is_finite() && m.bias_mc.is_finite() && m.gap_repel_mean.is_finite());
        }
    }

    #[test]
    fn grid_cell_seeds_depend_on_identity() {
        let a = grid_cell_seed(1, LossKind::Balanced, 4.0, 2.0);
        assert_eq!(a, grid_cell_seed(1, LossKind::Balanced, 4.0, 2.0));
        assert_ne!(a, grid_cell_seed(1, LossKind::Generalized, 4.0, 2.0));
        assert_ne!(a, grid_cell_seed(1, LossKind::Balanced, 2.0, 4.0));
        assert!(run_grid(&tiny(), &[], &[1.0], &[1.0], None).is_err());
    }
}
