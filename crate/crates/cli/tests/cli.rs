use std::path::Path;
use std::process::{Command, Output};

use reinit_core::harness::{DataSource, RunConfig};
use reinit_core::NetworkSpec;
use serde_json::Value;

fn write_small_config(dir: &Path) -> String {
    let mut cfg = RunConfig::desk_default();
    if let DataSource::Synthetic(s) = &mut cfg.data.source {
        s.dim = 12;
        s.per_class = 30;
        s.test_per_class = 10;
    }
    cfg.network = NetworkSpec::new(12, vec![16, 8], 10).with_blocks(vec![1, 2]);
    cfg.epochs = 6;
    let path = dir.join("small.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn lab(dir: &Path, args: &[&str]) -> Output {
    let config = write_small_config(dir);
    let out = dir.join("runs");
    Command::new(env!("CARGO_BIN_EXE_reinit-lab"))
        .args(["--config", &config, "--out", out.to_str().unwrap()])
        .args(args)
        .env("REINIT_LAB_THREADS", "2")
        .output()
        .unwrap()
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    assert!(!o.status.success());
    serde_json::from_slice(&o.stderr).unwrap()
}

#[test]
fn train_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let v = stdout_json(&lab(
        dir.path(),
        &[
            "--stages",
            "3",
            "--reinit",
            "sp",
            "--lambda",
            "0.5",
            "--distill-beta",
            "1",
            "train",
        ],
    ));
    assert_eq!(v["status"], "completed");
    assert_eq!(v["reinit"], "sp");
    assert_eq!(v["stages"], 3);
    let run_id = v["run_id"].as_str().unwrap().to_string();
    let cfg: RunConfig = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("runs").join(&run_id).join("config.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(
        cfg.reinit,
        reinit_core::ReinitSpec::ShrinkPerturb {
            lambda: 0.5,
            gamma: 0.1
        }
    );
    assert!(cfg.distill.enabled);

    let info = stdout_json(&lab(dir.path(), &["inspect", &run_id]));
    assert_eq!(info["epochs_logged"], 6);
    assert_eq!(info["teacher_files"].as_array().unwrap().len(), 2);
}

#[test]
fn config_errors_are_json_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(dir.path(), &["--stages", "0", "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"]["kind"], "config");

    let o = lab(dir.path(), &["--lambda", "0.3", "train"]);
    assert_eq!(stderr_json(&o)["error"]["kind"], "config");

    let o = lab(dir.path(), &["--setting", "d", "train"]);
    let msg = stderr_json(&o)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("image"), "{msg}");

    let o = lab(dir.path(), &["inspect", "missing"]);
    assert_eq!(stderr_json(&o)["error"]["kind"], "harness");
}

#[test]
fn missing_config_file_reports_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_reinit-lab"))
        .args(["--config", dir.path().join("nope.json").to_str().unwrap(), "train"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(stderr_json(&o)["error"]["kind"], "io");
}

#[test]
fn grid_stages_noise_and_online() {
    let dir = tempfile::tempdir().unwrap();
    let g = stdout_json(&lab(
        dir.path(),
        &["grid", "--lr-grid", "0.01,0.03", "--wd-grid", "0,0.0005"],
    ));
    assert_eq!(g["cells"].as_array().unwrap().len(), 4);
    assert!(g["robustness"].as_f64().unwrap() >= 0.0);

    let s = stdout_json(&lab(dir.path(), &["--reinit", "full", "stages", "--t-values", "1,2,3"]));
    let rows = s.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r["total_steps"] == rows[0]["total_steps"]));

    let n = stdout_json(&lab(
        dir.path(),
        &[
            "--stages",
            "3",
            "noise",
            "--q-values",
            "0.2",
            "--methods",
            "standard,sp",
            "--lr-grid",
            "0.03",
            "--wd-grid",
            "0",
            "--budgets",
            "3",
        ],
    ));
    assert_eq!(n["rows"].as_array().unwrap().len(), 2);
    assert_eq!(n["budget_rows"].as_array().unwrap().len(), 1);

    let o = stdout_json(&lab(
        dir.path(),
        &["online", "--chunks", "3", "--epochs-per-chunk", "2"],
    ));
    let curves = o.as_array().unwrap();
    assert_eq!(curves.len(), 3);
    // nothing differs before the first chunk boundary
    let first: Vec<&Value> = curves.iter().map(|c| &c["points"][0]["test_acc"]).collect();
    assert!(first.iter().all(|v| *v == first[0]));
}
