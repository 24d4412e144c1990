use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn example_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/example/config.toml")
}

fn eden(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eden")).args(args).output().unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).expect("stderr is one JSON object")
}

#[test]
fn example_pipeline_is_fast_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example_config();
    let start = Instant::now();
    let out = eden(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed().as_secs_f64() < 5.0);
    for name in [
        "config.toml",
        "tree.json",
        "tree.dot",
        "history.jsonl",
        "metrics.json",
        "checkpoint.ednw",
        "manifest.json",
    ] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["config_hash"].is_string());
    assert!(metrics["metrics"]["test"]["acc"].is_number());
}

#[test]
fn identical_runs_give_identical_artifacts() {
    let cfg = example_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = eden(&["train", "--config", cfg.to_str().unwrap(), "--out", d.path().to_str().unwrap()]);
        assert!(out.status.success());
    }
    for name in ["metrics.json", "history.jsonl", "tree.json", "checkpoint.ednw"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn missing_edge_file_exits_two_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = eden(&[
        "build-hkt",
        "--seed",
        "1",
        "--edges",
        "/definitely/not/here.txt",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "file");
}

#[test]
fn out_of_range_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example_config();
    for extra in [["--height", "2"], ["--height", "11"], ["--kappa", "2.5"]] {
        let mut args = vec![
            "refine-hkt",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ];
        args.extend(extra);
        let out = eden(&args);
        assert_eq!(out.status.code(), Some(2));
        assert_eq!(error_json(&out)["error"]["kind"], "config");
    }
    let out = eden(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--alpha",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_are_json_too() {
    let out = eden(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "usage");
}

#[test]
fn changed_config_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example_config();
    let d = dir.path().to_str().unwrap();
    assert!(eden(&["build-hkt", "--config", cfg.to_str().unwrap(), "--out", d]).status.success());
    let before = std::fs::read(dir.path().join("tree.json")).unwrap();
    assert!(eden(&["build-hkt", "--config", cfg.to_str().unwrap(), "--out", d]).status.success());
    let out = eden(&["build-hkt", "--config", cfg.to_str().unwrap(), "--out", d, "--height", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(std::fs::read(dir.path().join("tree.json")).unwrap(), before);
    assert!(eden(&[
        "build-hkt",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        d,
        "--height",
        "4",
        "--force"
    ])
    .status
    .success());
    assert_ne!(std::fs::read(dir.path().join("tree.json")).unwrap(), before);
}

#[test]
fn every_command_runs_on_the_example() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example_config();
    let c = cfg.to_str().unwrap();
    let sub = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let tree = dir.path().join("b/tree.json");
    let t = tree.to_str().unwrap();
    assert!(eden(&["entropy", "--config", c, "--out", &sub("e")]).status.success());
    assert!(eden(&["build-hkt", "--config", c, "--out", &sub("b")]).status.success());
    assert!(eden(&["entropy", "--config", c, "--out", &sub("e2"), "--tree", t]).status.success());
    assert!(eden(&["refine-hkt", "--config", c, "--out", &sub("r"), "--tree", t])
        .status
        .success());
    assert!(eden(&[
        "train",
        "--config",
        c,
        "--out",
        &sub("t"),
        "--tree",
        t,
        "--without",
        "tree-walk,kd-loss"
    ])
    .status
    .success());
    let ckpt = dir.path().join("t/checkpoint.ednw");
    let trained = dir.path().join("t/config.toml");
    let out = eden(&[
        "predict",
        "--config",
        trained.to_str().unwrap(),
        "--out",
        &sub("p"),
        "--tree",
        t,
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pred: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("p/predictions.json")).unwrap()).unwrap();
    assert_eq!(pred["predictions"].as_array().unwrap().len(), 8);
    assert!(eden(&["walk-analysis", "--config", c, "--out", &sub("w"), "--threads", "1"])
        .status
        .success());
}
