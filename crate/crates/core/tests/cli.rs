//! End-to-end runs of the `ddm-lab` binary.
#![cfg(feature = "cli")]

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"{
  "task": {"kind": "countdown", "seq_len": 4, "vocab": 3},
  "distill": {"teacher_steps": 32, "student_steps": 4, "n_samples": 4, "epochs": 2, "schedule_epochs": 2},
  "eval": {"nfe_list": [4, 8], "n_eval_samples": 100, "loss_samples": 2, "train": true},
  "seed": 3
}"#;

fn lab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddm-lab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn ddm-lab")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn train_sample_verify_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("run.json"), CONFIG).unwrap();

    let out = lab(root, &["train", "--config", "run.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["resolved_config.json", "learned.json", "loss_trace.csv"] {
        assert!(root.join("out").join(f).exists(), "{f}");
    }

    let out = lab(root, &["sample", "--artifact", "out/learned.json", "--n", "25", "--out", "s.jsonl"]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(root.join("s.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 25);
    for line in text.lines() {
        let seq: Vec<usize> = serde_json::from_str(line).unwrap();
        assert_eq!(seq.len(), 4);
        assert!(seq.iter().all(|&v| v < 3));
    }

    let out = lab(root, &["sample", "--artifact", "out/learned.json", "--n", "0", "--out", "empty.jsonl"]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_to_string(root.join("empty.jsonl")).unwrap(), "");

    let out = lab(root, &["verify", "--artifact", "out/learned.json"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("provenance: ok"));

    let out = lab(root, &["sweep", "--config", "run.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(root.join("out/sweep.csv")).unwrap();
    assert!(csv.lines().count() >= 3, "{csv}");
}

#[test]
fn seed_flag_changes_samples_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("run.json"), CONFIG).unwrap();
    assert_eq!(code(&lab(root, &["train", "--config", "run.json"])), 0);
    let draw = |seed: &str, name: &str| {
        let out = lab(root, &["--seed", seed, "sample", "--artifact", "out/learned.json", "--n", "200", "--out", name]);
        assert_eq!(code(&out), 0);
        fs::read_to_string(root.join(name)).unwrap()
    };
    assert_eq!(draw("10", "a.jsonl"), draw("10", "b.jsonl"));
    assert_ne!(draw("10", "a.jsonl"), draw("11", "c.jsonl"));
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("bad.json"), r#"{"task": {"kind": "countdown"}, "seed": 1}"#).unwrap();
    fs::write(root.join("typo.json"), CONFIG.replace("\"seed\"", "\"sead\"")).unwrap();
    assert_eq!(code(&lab(root, &["train", "--config", "bad.json"])), 2);
    assert_eq!(code(&lab(root, &["train", "--config", "typo.json"])), 2);
    assert_eq!(code(&lab(root, &["train", "--config", "missing.json"])), 2);
    assert_eq!(code(&lab(root, &["--threads", "0", "train", "--config", "bad.json"])), 2);
}

#[test]
fn tampered_artifact_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("run.json"), CONFIG).unwrap();
    assert_eq!(code(&lab(root, &["train", "--config", "run.json"])), 0);
    let path = root.join("out/learned.json");
    let mut art: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let tau = art["tau"].as_array_mut().expect("tau array");
    tau.swap(1, 2);
    fs::write(&path, serde_json::to_string(&art).unwrap()).unwrap();
    let out = lab(root, &["verify", "--artifact", "out/learned.json"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stdout));
}
