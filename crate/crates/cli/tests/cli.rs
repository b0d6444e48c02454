use std::path::Path;
use std::process::{Command, Output};

use tabsynth::fixtures::dependency_fixture;

fn tabsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabsynth")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_config(dir: &Path, grid: &str) -> String {
    dependency_fixture(100, 11).write_csv(&dir.join("fixture.csv")).unwrap();
    let text = format!(
        r#"{{
        "dataset": {{"path": "fixture.csv", "target": "label", "task": "classification"}},
        "grid": {grid},
        "train": {{"epochs": 80, "learning_rate": 0.01, "batch_size": 8}},
        "repetitions": 1,
        "forest": {{"n_trees": 10}}
    }}"#
    );
    let path = dir.join("exp.json");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&tabsynth(&[])), 1);
    assert_eq!(code(&tabsynth(&["frobnicate"])), 1);
    assert_eq!(code(&tabsynth(&["sample", "somewhere"])), 1, "missing -n");
    assert_eq!(code(&tabsynth(&["plot", "dir", "--dimension", "colour"])), 1);
    assert_eq!(code(&tabsynth(&["--help"])), 0);
    assert_eq!(code(&tabsynth(&["--version"])), 0);
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = tabsynth(&["sweep", missing.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"dataset": {"path": "x.csv", "target": "y", "task": "classification"}, "grid": [{"layrs": 1, "hidden_dim": 8, "heads": 2}]}"#).unwrap();
    let out = tabsynth(&["sweep", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("did you mean `layers`"));

    let out = tabsynth(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn fit_then_sample_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"[{"layers": 1, "hidden_dim": 16, "heads": 2}]"#);
    let out_dir = dir.path().join("out");
    let out = tabsynth(&["fit", &config, "--out-dir", out_dir.to_str().unwrap(), "--quiet"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["exact_params"].as_u64().unwrap() > 0);
    let ckpt = out_dir.join("checkpoint");
    assert!(ckpt.join("model.ckpt").is_file());

    let out = tabsynth(&["sample", ckpt.to_str().unwrap(), "-n", "5", "--seed", "3", "-q"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("color,shape,size,label"));
    let again = tabsynth(&["sample", ckpt.to_str().unwrap(), "-n", "5", "--seed", "3", "-q"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), csv, "same seed, same rows");

    let synth = dir.path().join("synth.csv");
    let out = tabsynth(&["sample", ckpt.to_str().unwrap(), "-n", "100", "-o", synth.to_str().unwrap(), "-q"]);
    assert_eq!(code(&out), 0);
    let real = dir.path().join("fixture.csv");
    let out = tabsynth(&["evaluate", real.to_str().unwrap(), synth.to_str().unwrap(), "--target", "label", "-q"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let acc = result["similarity"]["discriminator_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(result["utility"]["learners"]["logistic"]["accuracy"]["delta"].is_number());
}

#[test]
fn sweep_report_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"[{"layers": 1, "hidden_dim": 16, "heads": 2}, {"layers": 2, "hidden_dim": 16, "heads": 2}]"#,
    );
    let runs = dir.path().join("runs");
    let runs_s = runs.to_str().unwrap();
    let out = tabsynth(&["sweep", &config]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let log = String::from_utf8_lossy(&out.stderr);
    assert!(log.contains("[2/2]"), "{log}");
    assert!(runs.join("reports.json").is_file());

    let out = tabsynth(&["sweep", &config]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("0 computed, 2 skipped"));
    let quiet = tabsynth(&["sweep", &config, "--quiet"]);
    assert!(quiet.stderr.is_empty());

    let out = tabsynth(&["report", runs_s, "--format", "csv"]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(runs.join("reports.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1 + 2);

    for dim in ["runtime", "utility", "similarity"] {
        let out = tabsynth(&["plot", runs_s, "--dimension", dim]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let svg = std::fs::read_to_string(runs.join(format!("{dim}.svg"))).unwrap();
        assert!(svg.contains("<svg"));
    }
}
