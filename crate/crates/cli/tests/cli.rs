use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promptseg")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn synth(dir: &Path) {
    let out = dir.to_str().unwrap();
    let o = run(&["synth", "--out", out, "--n-train", "4", "--n-val", "2", "--size", "32", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&[])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["eval", "--data", "x"])), 2);
    assert_eq!(code(&run(&["eval", "--data", "x", "--oracle", "--prompt", "laser"])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = run(&["eval", "--data", missing.to_str().unwrap(), "--oracle"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let w = dir.path().join("w.bin");
    std::fs::write(&w, b"garbage").unwrap();
    synth(dir.path());
    let o = run(&["eval", "--data", dir.path().to_str().unwrap(), "--weights", w.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn synth_then_oracle_eval() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let report = dir.path().join("report.json");
    let o = run(&[
        "eval", "--data", dir.path().to_str().unwrap(), "--oracle", "--prompt", "box", "--rounds", "2",
        "--report", report.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("BBox") && table.contains("oracle"), "{table}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["prompt_type"], "box");
    assert_eq!(v["cases"].as_array().unwrap().len(), 2);
}

#[test]
fn train_then_eval_weights() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"network": {"in_channels": 4, "widths": [4, 8], "blocks_per_stage": [1, 1], "kernel_size": 3,
            "norm": "instance", "negative_slope": 0.01},
           "train": {"patch_size": [16, 16, 16], "batch_size": 1, "epochs": 2, "steps_per_epoch": 2, "val_instances": 1}}"#,
    )
    .unwrap();
    let w = dir.path().join("w.bin");
    let data = dir.path().to_str().unwrap();
    let o = run(&["train", "--data", data, "--config", cfg.to_str().unwrap(), "--out", w.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(w.exists() && w.with_extension("history.json").exists());
    let o = run(&["eval", "--data", data, "--weights", w.to_str().unwrap(), "--prompt", "point"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    std::fs::write(&cfg, r#"{"network": "enormous"}"#).unwrap();
    let o = run(&["train", "--data", data, "--config", cfg.to_str().unwrap(), "--out", w.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}
