use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use contralab::diagnostics::gap_curve;
use contralab::diagnostics::prototype_bias;
use contralab::diagnostics::suites::Suite;
use contralab::encoder::{Checkpoint, MlpParams};
use contralab::harness::{self, ExperimentConfig};
use contralab::losses::LossKind;
use contralab::seed::derive_seed;
use contralab::Error;

#[derive(Parser)]
#[command(name = "contralab", about = "Desk-scale contrastive learning laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Built-in desk defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master, dataset and encoder seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train an encoder; writes metrics.csv and checkpoints/.
    Train(Common),
    /// Train one run per (loss, alpha, lambda) cell; writes grid.csv.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "balanced,generalized")]
        losses: Vec<LossKind>,
    },
    /// Run randomized inequality suites; writes verify.csv. Exits 1 on any violation.
    Verify {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        /// lemma1, lemma2, lemma3, theorem1, theorem2 or all.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Negative control: report every gap with its sign flipped.
        #[arg(long)]
        corrupt: bool,
    },
    /// Prototype representation bias of a checkpoint; writes bias.csv.
    Bias {
        #[command(flatten)]
        common: Common,
        /// Encoder checkpoint. The freshly initialized encoder when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Mean bound gaps over a directory of checkpoints; writes gaps.csv.
    Gaps {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoints: PathBuf,
    },
    /// kNN and linear-probe accuracy of a checkpoint; writes eval.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Failure classes with their exit status.
#[derive(Debug, Clone, Copy)]
enum Failure {
    Violation = 1,
    Usage = 2,
    Config = 3,
    Io = 4,
    Numeric = 5,
    Other = 6,
}

impl Failure {
    fn name(self) -> &'static str {
        match self {
            Failure::Violation => "violation",
            Failure::Usage => "usage",
            Failure::Config => "config",
            Failure::Io => "io",
            Failure::Numeric => "numeric",
            Failure::Other => "other",
        }
    }

    fn classify(err: &anyhow::Error) -> Failure {
        if err.downcast_ref::<ViolationsFound>().is_some() {
            return Failure::Violation;
        }
        let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
            return Failure::Other;
        };
        let mut e = e;
        while let Error::AtEpoch { source, .. } = e {
            e = source;
        }
        match e {
            Error::ConfigInvalid(_) | Error::NonPositiveAlpha(_) | Error::NonPositiveParameter { .. } => {
                Failure::Config
            }
            Error::Io(_) | Error::Parse(_) => Failure::Io,
            _ => Failure::Numeric,
        }
    }
}

#[derive(Debug)]
struct ViolationsFound(Vec<String>);

impl std::fmt::Display for ViolationsFound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "violations in {}", self.0.join(","))
    }
}

impl std::error::Error for ViolationsFound {}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn load_params(path: &Path) -> anyhow::Result<MlpParams> {
    Ok(Checkpoint::load(path)?.to_params()?)
}

fn ensure_out(out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)
        .map_err(Error::from)
        .with_context(|| format!("creating {}", out.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load_config(&common)?;
            ensure_out(&common.out)?;
            let o = harness::run_train(&cfg, Some(&common.out))?;
            println!(
                "knn_acc={} probe_acc={}",
                harness::fmt9(o.final_knn.top1_accuracy),
                harness::fmt9(o.final_probe.top1_accuracy)
            );
        }
        Command::Grid {
            common,
            alphas,
            lambdas,
            losses,
        } => {
            let cfg = load_config(&common)?;
            let rows = harness::run_grid(&cfg, &losses, &alphas, &lambdas, Some(&common.out))?;
            for kind in &losses {
                let best = rows
                    .iter()
                    .filter(|r| r.loss == *kind)
                    .max_by(|a, b| a.knn_acc.total_cmp(&b.knn_acc));
                if let Some(b) = best {
                    println!(
                        "best {}: alpha={} lambda={} knn_acc={}",
                        kind.name(),
                        b.alpha,
                        b.lambda,
                        harness::fmt9(b.knn_acc)
                    );
                }
            }
        }
        Command::Verify {
            trials,
            suite,
            seed,
            out,
            corrupt,
        } => {
            if trials == 0 {
                return Err(Error::ConfigInvalid("trials must be >= 1".into()).into());
            }
            let suites: Vec<Suite> = if suite == "all" {
                Suite::ALL.to_vec()
            } else {
                vec![suite.parse::<Suite>().map_err(|_| {
                    Error::ConfigInvalid(format!("unknown suite '{suite}'"))
                })?]
            };
            let results = harness::run_verify(&suites, trials, seed, corrupt, Some(&out))?;
            let failed: Vec<String> = results
                .iter()
                .filter(|r| !r.passed())
                .map(|r| r.suite.to_string())
                .collect();
            for r in &results {
                println!(
                    "{} trials={} violations={} max_violation={}",
                    r.suite,
                    r.trials,
                    r.violations,
                    harness::fmt9(r.max_violation)
                );
            }
            if !failed.is_empty() {
                return Err(ViolationsFound(failed).into());
            }
        }
        Command::Bias { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let params = match &checkpoint {
                Some(p) => load_params(p)?,
                None => MlpParams::init(&cfg.encoder)?,
            };
            let (train, _) = harness::build_data(&cfg)?;
            let seed = derive_seed(cfg.seed, "cli-bias", 0);
            let r = prototype_bias(&params, &train, &cfg.augmentation, cfg.eval.bias_k_samples, seed)?;
            ensure_out(&common.out)?;
            std::fs::write(common.out.join("bias.csv"), harness::bias_csv(&r)).map_err(Error::from)?;
            print!("{}", harness::bias_csv(&r));
        }
        Command::Gaps { common, checkpoints } => {
            let cfg = load_config(&common)?;
            let found = harness::list_checkpoints(&checkpoints)?;
            if found.len() < 2 {
                bail!(Error::PreconditionViolated(format!(
                    "need at least 2 checkpoints in {}",
                    checkpoints.display()
                )));
            }
            let params = found
                .iter()
                .map(|(_, p)| load_params(p))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let (train, _) = harness::build_data(&cfg)?;
            let seed = derive_seed(cfg.seed, "cli-gaps", 0);
            let points = gap_curve(&params, &train, &cfg.augmentation, cfg.eval.gap_k_views, cfg.loss.alpha, seed)?;
            let rows: Vec<_> = found.iter().map(|f| f.0).zip(points).collect();
            ensure_out(&common.out)?;
            let csv = harness::gaps_csv(&rows);
            std::fs::write(common.out.join("gaps.csv"), &csv).map_err(Error::from)?;
            print!("{csv}");
        }
        Command::Eval { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let params = load_params(&checkpoint)?;
            let (train, test) = harness::build_data(&cfg)?;
            let knn = harness::evaluate_knn(&params, &train, &test, cfg.eval.knn_k)?;
            let probe = harness::evaluate_probe(&params, &train, &test, cfg.eval.probe_epochs, cfg.eval.probe_lr)?;
            ensure_out(&common.out)?;
            let csv = harness::eval_csv(&[knn, probe]);
            std::fs::write(common.out.join("eval.csv"), &csv).map_err(Error::from)?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn fail(kind: Failure, msg: &str) -> ExitCode {
    let msg = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error kind={} code={} msg={msg}", kind.name(), kind as u8);
    ExitCode::from(kind as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return fail(Failure::Usage, first.trim_start_matches("error: "));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => fail(Failure::classify(&err), &format!("{err:#}")),
    }
}
