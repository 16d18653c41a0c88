//! End-to-end runs of the command-line binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hetsheaf"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

const SMALL_NC_CONFIG: &str = r#"{
  "task": "nc", "dataset": "data", "out_dir": "run",
  "d": 2, "f": 2, "predictor_hidden": 8, "epochs": 3, "seed": 1
}"#;

fn synth_small_nc(dir: &Path) {
    let out = run(
        &[
            "synth",
            "--kind",
            "type_signal_nc",
            "--out",
            "data",
            "--seed",
            "3",
            "--nodes-per-type",
            "30",
            "--degree",
            "3",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn synth_train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_small_nc(dir);
    write(dir, "run.json", SMALL_NC_CONFIG);

    let out = run(&["train", "--config", "run.json"], dir);
    assert!(out.status.success(), "{}", stderr(&out));
    let trained: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(trained["values"]["test_micro_f1"].is_number());

    for artifact in ["config.json", "checkpoint.bin", "log.tsv", "metrics.json"] {
        assert!(dir.join("run").join(artifact).exists(), "missing {artifact}");
    }

    let out = run(&["eval", "--ckpt", "run/checkpoint.bin", "--data", "data"], dir);
    assert!(out.status.success(), "{}", stderr(&out));
    let evaluated: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(evaluated, trained, "eval must reproduce the training run's report");
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["--frobnicate"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));

    let out = run(&["train", "--config", "x.json", "--frobnicate"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
}

#[test]
fn help_and_version_exit_0() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["--help"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("train"));
    let out = run(&["--version"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn validation_problems_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // Config file missing entirely.
    let out = run(&["train", "--config", "nope.json"], dir);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));

    // Config present but the dataset directory is not.
    write(dir, "bad.json", r#"{"task": "nc", "dataset": "missing"}"#);
    let out = run(&["train", "--config", "bad.json"], dir);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("error"), "{}", stderr(&out));
}

#[test]
fn numeric_failures_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_small_nc(dir);
    write(
        dir,
        "diverge.json",
        r#"{
  "task": "nc", "dataset": "data", "out_dir": "run",
  "d": 2, "f": 2, "predictor_hidden": 8, "epochs": 10, "seed": 1, "lr": 1e100
}"#,
    );
    let out = run(&["train", "--config", "diverge.json"], dir);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn gradcheck_passes_on_a_small_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(
        dir,
        "gc.json",
        r#"{"task": "nc", "dataset": "unused", "d": 2, "f": 1, "layers": 1, "predictor_hidden": 0, "seed": 1}"#,
    );
    let out = run(&["gradcheck", "--config", "gc.json"], dir);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("max relative error"), "{text}");
    assert!(text.contains("PASS"), "{text}");
}

#[test]
fn inspect_sheaf_dumps_a_psd_operator() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_small_nc(dir);
    write(
        dir,
        "insp.json",
        r#"{"task": "nc", "dataset": "data", "d": 2, "f": 2, "predictor_hidden": 8, "seed": 1}"#,
    );
    let out = run(&["inspect-sheaf", "--config", "insp.json", "--out", "lap.tsv"], dir);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    // 30 nodes per type, two types, d = 2.
    let nd = 60 * 2;
    let text = fs::read_to_string(dir.join("lap.tsv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), nd);
    assert!(rows.iter().all(|r| r.split('\t').count() == nd));

    let printed = stdout(&out);
    let min_eig: f64 = printed
        .split("min eigenvalue")
        .nth(1)
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or_else(|| panic!("no eigenvalue in {printed:?}"));
    assert!(min_eig > -1e-8, "normalized operator must be positive semidefinite, got {min_eig}");
}

#[test]
fn sweep_runs_the_full_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth_small_nc(dir);
    write(
        dir,
        "grid.json",
        r#"{
  "base": {"task": "nc", "dataset": "data", "out_dir": "sweep",
           "d": 2, "f": 2, "predictor_hidden": 8, "epochs": 2, "seed": 1},
  "axes": {"lr": [0.01, 0.005], "weight_decay": [0.0005, 0.0001]}
}"#,
    );
    let out = run(&["sweep", "--grid", "grid.json"], dir);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("best run_"), "{}", stdout(&out));

    let summary = fs::read_to_string(dir.join("sweep/summary.tsv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "run\tlr\tweight_decay\tval_metric\ttest_metric");
    assert_eq!(lines.len(), 5, "header plus one line per grid point:\n{summary}");
    for i in 0..4 {
        assert!(dir.join(format!("sweep/run_{i:03}/metrics.json")).exists());
    }
}

#[test]
fn sweep_rejects_unknown_axes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(
        dir,
        "grid.json",
        r#"{
  "base": {"task": "nc", "dataset": "data", "out_dir": "sweep"},
  "axes": {"learning_rate_typo": [0.01]}
}"#,
    );
    let out = run(&["sweep", "--grid", "grid.json"], dir);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for out_name in ["a", "b"] {
        let out = run(
            &["synth", "--kind", "bipartite_lp", "--out", out_name, "--seed", "9", "--nodes-per-type", "20", "--degree", "3"],
            dir,
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for file in ["meta.json", "nodes.tsv", "edges.tsv", "target_edges.tsv"] {
        assert_eq!(
            fs::read(dir.join("a").join(file)).unwrap(),
            fs::read(dir.join("b").join(file)).unwrap(),
            "{file} must not depend on anything but the seed"
        );
    }
}
