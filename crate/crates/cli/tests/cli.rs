use std::path::Path;
use std::process::{Command, Output};

use contralab::harness::ExperimentConfig;

fn contralab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contralab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_line(o: &Output) -> String {
    let s = String::from_utf8_lossy(&o.stderr).to_string();
    assert_eq!(s.lines().count(), 1, "stderr: {s}");
    s.trim().to_string()
}

fn tiny_config(dir: &Path, epochs: usize) -> String {
    let mut c = ExperimentConfig::default();
    c.dataset.total_samples = 64;
    c.dataset.d_in = 8;
    c.encoder.layer_dims = vec![8, 12, 6];
    c.optimizer.epochs = epochs;
    c.batch_size = 16;
    c.eval.test_per_class = 4;
    c.eval.probe_epochs = 10;
    c.eval.bias_k_samples = 2;
    c.eval.gap_k_views = 2;
    c.log_every = 1;
    c.checkpoint_every = 1;
    let p = dir.join("config.json");
    std::fs::write(&p, c.to_json()).unwrap();
    p.display().to_string()
}

#[test]
fn verify_smoke_passes_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let t = std::time::Instant::now();
    let o = contralab(&["verify", "--trials", "1", "--out", &out]);
    assert!(t.elapsed().as_secs_f64() < 1.0);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "suite,trials,violations,max_violation,mean_gap,precondition_failures");
    assert_eq!(lines.len(), 6);
}

#[test]
fn corrupted_verification_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = contralab(&["verify", "--trials", "20", "--suite", "lemma1", "--corrupt", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_line(&o).starts_with("error kind=violation code=1 "));
}

#[test]
fn failure_classes_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();

    let o = contralab(&["verify", "--trials", "1", "--suite", "lemma9", "--out", &out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr_line(&o).starts_with("error kind=config code=3 "));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"batch_size\": 1}").unwrap();
    let o = contralab(&["train", "--config", &bad.display().to_string(), "--out", &out]);
    assert_eq!(o.status.code(), Some(3));
    stderr_line(&o);

    // an output "directory" that is actually a file
    let file = dir.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    let o = contralab(&["verify", "--trials", "1", "--out", &file.display().to_string()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr_line(&o).starts_with("error kind=io code=4 "));

    let o = contralab(&["gaps", "--checkpoints", &out, "--out", &out]);
    assert_eq!(o.status.code(), Some(5));
    stderr_line(&o);
}

#[test]
fn zero_epochs_writes_header_and_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 0);
    let out = dir.path().join("run");
    let o = contralab(&["train", "--config", &cfg, "--out", &out.display().to_string()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(out.join("checkpoints/ckpt_0.json").exists());
}

#[test]
fn same_seed_runs_are_byte_identical_and_seed_matters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 2);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = contralab(&["train", "--config", &cfg, "--seed", seed, "--out", &out.display().to_string()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("metrics.csv")).unwrap()
    };
    let a = run("a", "5");
    assert_eq!(a, run("b", "5"));
    assert_ne!(a, run("c", "6"));
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 3);
}

#[test]
fn downstream_commands_consume_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 2);
    let run = dir.path().join("run");
    let run_s = run.display().to_string();
    assert!(contralab(&["train", "--config", &cfg, "--out", &run_s]).status.success());
    let ckpts = run.join("checkpoints");
    let last = ckpts.join("ckpt_2.json").display().to_string();

    let o = contralab(&["eval", "--config", &cfg, "--checkpoint", &last, "--out", &run_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval = std::fs::read_to_string(run.join("eval.csv")).unwrap();
    assert!(eval.lines().nth(1).unwrap().starts_with("knn,"));
    assert!(eval.lines().nth(2).unwrap().starts_with("linear,"));

    let o = contralab(&["bias", "--config", &cfg, "--checkpoint", &last, "--out", &run_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(run.join("bias.csv")).unwrap().lines().count(), 2);

    let o = contralab(&["gaps", "--config", &cfg, "--checkpoints", &ckpts.display().to_string(), "--out", &run_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let gaps = std::fs::read_to_string(run.join("gaps.csv")).unwrap();
    let epochs: Vec<&str> = gaps.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["0", "1", "2"]);
}

#[test]
fn grid_emits_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    let out = dir.path().display().to_string();
    let o = contralab(&[
        "grid", "--config", &cfg, "--alphas", "1,4", "--lambdas", "2", "--losses", "balanced,generalized", "--out", &out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "loss,alpha,lambda,knn_acc,probe_acc");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("balanced,1.00000000e0,2.00000000e0,"));
    assert!(lines[4].starts_with("generalized,4.00000000e0,"));
}

#[test]
fn usage_errors_are_one_line() {
    let o = contralab(&["verify", "--trials", "many"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error kind=usage code=2 "));
    let o = contralab(&["grid", "--losses", "triplet"]);
    assert_eq!(o.status.code(), Some(2));
    stderr_line(&o);
}
