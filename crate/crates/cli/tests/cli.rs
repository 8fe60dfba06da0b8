//! Command-line behavior: exit codes, prerequisite chaining, and
//! thread-count-independent determinism.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fidelity"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn fidelity")
}

fn write_toy_csv(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("toy.csv");
    let mut csv = String::from("x,z,y\n");
    for i in 0..30 {
        csv.push_str(&format!(
            "{},{},{}\n",
            i,
            (i * 7) % 5,
            u8::from(i % 10 >= 5)
        ));
    }
    std::fs::write(&path, csv).unwrap();
    path
}

#[test]
fn prep_without_target_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_toy_csv(dir.path());
    let out = run(bin().args(["prep", "--data", data.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--target"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = run(bin().args(["prep", "--bogus"]));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_csv_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args([
        "prep",
        "--data",
        dir.path().join("nope.csv").to_str().unwrap(),
        "--target",
        "y",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn phase_without_prep_is_missing_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args(["train", "--out", dir.path().to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("prep"), "stderr should name the step: {stderr}");
}

#[test]
fn phase1_without_train_names_the_missing_step() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_toy_csv(dir.path());
    let out_dir = dir.path().join("run");
    let ok = run(bin().args([
        "prep",
        "--data",
        data.to_str().unwrap(),
        "--target",
        "y",
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert!(ok.status.success());
    let out = run(bin().args(["phase1", "--out", out_dir.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train"));
}

#[test]
fn phase3_without_phase2_or_params_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_toy_csv(dir.path());
    let out_dir = dir.path().join("run");
    for args in [
        vec!["prep", "--data", data.to_str().unwrap(), "--target", "y", "--out", out_dir.to_str().unwrap(), "--quiet"],
        vec!["train", "--out", out_dir.to_str().unwrap(), "--quiet"],
    ] {
        assert!(run(bin().args(&args)).status.success());
    }
    let out = run(bin().args(["phase3", "--out", out_dir.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("phase2") && stderr.contains("--d"), "stderr: {stderr}");

    // Explicit parameters unblock it.
    let out = run(bin().args([
        "phase3",
        "--out",
        out_dir.to_str().unwrap(),
        "--d",
        "3",
        "--p",
        "0.1",
        "--quiet",
    ]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn report_without_runs_is_usage_error() {
    let out = run(bin().args(["report"]));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_on_empty_dir_is_missing_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(bin().args(["report", dir.path().to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn report_schema_and_rerun_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_toy_csv(dir.path());
    let out_dir = dir.path().join("run");
    for args in [
        vec!["prep", "--data", data.to_str().unwrap(), "--target", "y", "--out", out_dir.to_str().unwrap(), "--quiet"],
        vec!["train", "--out", out_dir.to_str().unwrap(), "--quiet"],
        vec!["phase1", "--out", out_dir.to_str().unwrap(), "--quiet"],
    ] {
        let out = run(bin().args(&args));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let rep_dir = dir.path().join("rep");
    let out = run(bin().args([
        "report",
        out_dir.to_str().unwrap(),
        "--out",
        rep_dir.to_str().unwrap(),
    ]));
    assert!(out.status.success());
    let long = std::fs::read_to_string(rep_dir.join("report_long.csv")).unwrap();
    assert!(long.starts_with("dataset,model,explainer,phase,metric,mean,count_skipped\n"));
    assert!(long.contains("toy,tree,tree_shapley,phase1,recall,"));

    let first = std::fs::read(rep_dir.join("report_long.csv")).unwrap();
    assert!(run(bin().args([
        "report",
        out_dir.to_str().unwrap(),
        "--out",
        rep_dir.to_str().unwrap(),
    ]))
    .status
    .success());
    assert_eq!(first, std::fs::read(rep_dir.join("report_long.csv")).unwrap());
}

#[test]
fn jobs_flag_does_not_change_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_toy_csv(dir.path());
    let mut outputs = Vec::new();
    for jobs in ["1", "4"] {
        let out_dir = dir.path().join(format!("run{jobs}"));
        for step in [
            vec!["prep", "--data", data.to_str().unwrap(), "--target", "y", "--out", out_dir.to_str().unwrap(), "--seed", "7", "--quiet"],
            vec!["train", "--out", out_dir.to_str().unwrap(), "--jobs", jobs, "--quiet"],
            vec!["phase1", "--out", out_dir.to_str().unwrap(), "--jobs", jobs, "--quiet"],
            vec!["phase2", "--out", out_dir.to_str().unwrap(), "--jobs", jobs, "--quiet"],
            vec!["phase3", "--out", out_dir.to_str().unwrap(), "--jobs", jobs, "--quiet"],
        ] {
            let out = run(bin().args(&step));
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        }
        outputs.push(out_dir);
    }
    for name in ["phase1_report.json", "phase2_decile.json", "phase3_report.json"] {
        let a = std::fs::read(outputs[0].join(name)).unwrap();
        let b = std::fs::read(outputs[1].join(name)).unwrap();
        assert_eq!(a, b, "{name} differs across --jobs settings");
    }
}

#[test]
fn rerun_with_overrides_updates_manifest_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_toy_csv(dir.path());
    let out_dir = dir.path().join("run");
    assert!(run(bin().args([
        "prep", "--data", data.to_str().unwrap(), "--target", "y",
        "--out", out_dir.to_str().unwrap(), "--quiet",
    ]))
    .status
    .success());
    assert!(run(bin().args([
        "train", "--out", out_dir.to_str().unwrap(), "--model", "ensemble", "--quiet",
    ]))
    .status
    .success());
    let manifest = std::fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(v["config"]["model"]["kind"], "ensemble");
    // model.json now holds an ensemble
    let model = std::fs::read_to_string(out_dir.join("model.json")).unwrap();
    assert!(model.contains("\"ensemble\""));
}
