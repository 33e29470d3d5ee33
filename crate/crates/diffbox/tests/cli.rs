//! The binary end to end on tiny inputs.

use std::path::Path;
use std::process::{Command, Output};

fn diffbox(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffbox")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_writes_one_line_per_scene() {
    let dir = tempfile::tempdir().unwrap();
    ok(&diffbox(dir.path(), &["generate-data", "--num-scenes", "10", "--seed", "4", "-o", "a.jsonl"]));
    ok(&diffbox(dir.path(), &["generate-data", "--num-scenes", "10", "--seed", "4", "-o", "b.jsonl"]));
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a.iter().filter(|&&c| c == b'\n').count(), 10);
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    ok(&diffbox(dir.path(), &["generate-data", "--num-scenes", "0", "-o", "empty.jsonl"]));
    assert!(std::fs::read(dir.path().join("empty.jsonl")).unwrap().is_empty());
}

#[test]
fn oracle_eval_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    ok(&diffbox(dir.path(), &["generate-data", "--num-scenes", "8", "-o", "d.jsonl"]));
    let out = diffbox(dir.path(), &["eval", "--oracle", "--dataset", "d.jsonl", "--num-boxes", "30", "--steps", "2"]);
    ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["ap50"], 1.0);
    assert_eq!(report["num_images"], 8);
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(diffbox(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(diffbox(dir.path(), &["eval", "--oracle"]).status.code(), Some(1));
    assert_eq!(diffbox(dir.path(), &["generate-data", "--num-scenes", "1", "--min-side", "0.9", "--max-side", "0.1", "-o", "x"]).status.code(), Some(1));
    assert_eq!(diffbox(dir.path(), &["eval", "--dataset", "missing.jsonl", "--checkpoint", "c"]).status.code(), Some(2));
    assert_eq!(diffbox(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), r#"{"num_scenes": 3, "seed": 9}"#).unwrap();
    ok(&diffbox(dir.path(), &["generate-data", "--config", "cfg.json", "-o", "a.jsonl"]));
    ok(&diffbox(dir.path(), &["generate-data", "--config", "cfg.json", "--num-scenes", "5", "-o", "b.jsonl"]));
    let lines = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap().lines().count();
    assert_eq!((lines("a.jsonl"), lines("b.jsonl")), (3, 5));
    std::fs::write(dir.path().join("bad.json"), r#"{"num_scene": 3}"#).unwrap();
    assert_eq!(diffbox(dir.path(), &["generate-data", "--config", "bad.json", "-o", "c.jsonl"]).status.code(), Some(1));
}

#[test]
fn train_eval_ablate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let small = ["--hidden-dim", "16", "--timestep-dim", "8", "--timesteps", "100"];
    ok(&diffbox(d, &["generate-data", "--num-scenes", "12", "-o", "d.jsonl"]));
    let mut train = vec!["train", "--dataset", "d.jsonl", "--checkpoint", "c.ckpt", "--epochs", "2", "--log", "log.jsonl"];
    train.extend(small);
    ok(&diffbox(d, &train));
    let log = std::fs::read_to_string(d.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let mut resume = train.clone();
    resume.extend(["--resume", "c.ckpt"]);
    resume[6] = "1";
    ok(&diffbox(d, &resume));
    let log = std::fs::read_to_string(d.join("log.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["epoch"], 3);

    ok(&diffbox(d, &["eval", "--dataset", "d.jsonl", "--checkpoint", "c.ckpt", "--num-boxes", "10", "--timesteps", "100", "--detections", "det.jsonl", "-o", "r.json"]));
    assert_eq!(std::fs::read_to_string(d.join("det.jsonl")).unwrap().lines().count(), 12);

    let out = diffbox(d, &["ablate", "--dataset", "d.jsonl", "--checkpoint", "c.ckpt", "--num-boxes", "6", "--timesteps", "100", "--text", "t.txt"]);
    ok(&out);
    let tables: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let text = std::fs::read_to_string(d.join("t.txt")).unwrap();
    let rows = tables[0]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let label = row["label"].as_str().unwrap();
        let line = text.lines().find(|l| l.starts_with(label)).unwrap();
        let cells: Vec<f64> = line[label.len()..].split_whitespace().map(|c| c.parse().unwrap()).collect();
        for (cell, json) in cells.iter().zip(row["cells"].as_array().unwrap()) {
            assert!((cell - json["ap50"].as_f64().unwrap()).abs() <= 5e-5);
        }
    }

    let out = diffbox(d, &["ablate", "--dataset", "d.jsonl", "--checkpoint", "c.ckpt", "--num-boxes", "6", "--timesteps", "100", "--axes", "signal-scale", "--scale-rows", "2.0,1.0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scale=1"));
}
