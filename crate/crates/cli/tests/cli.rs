use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hkd_core::corpus::{encode, load_corpus, Vocabulary};
use hkd_core::trainer::{evaluate_accuracy, train_teacher};
use hkd_core::{Checkpoint, ModelConfig, TrainConfig};

fn hkd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hkd"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hkd(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn corpus(dir: &Path) {
    ok(
        dir,
        &["gen-corpus", "--out", "train.jsonl", "--dialogues", "36", "--test-out", "test.jsonl", "--test-dialogues", "8", "--seed", "4"],
    );
}

const TEACHER: &[&str] = &[
    "train-teacher", "--data", "train.jsonl", "--test", "test.jsonl", "--preset", "desk-s1", "--seeds", "1",
    "--epochs", "2", "--ckpt", "t.ckpt", "--out", "metrics.json",
];

#[test]
fn corpus_generation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen-corpus", "--out", "a.jsonl", "--seed", "9", "--dialogues", "12", "--labels", "a.txt"]);
    ok(p, &["gen-corpus", "--out", "b.jsonl", "--seed", "9", "--dialogues", "12", "--labels", "b.txt"]);
    assert_eq!(fs::read(p.join("a.jsonl")).unwrap(), fs::read(p.join("b.jsonl")).unwrap());
    assert_eq!(fs::read(p.join("a.txt")).unwrap(), fs::read(p.join("b.txt")).unwrap());
    ok(p, &["gen-corpus", "--out", "c.jsonl", "--seed", "10", "--dialogues", "12"]);
    assert_ne!(fs::read(p.join("a.jsonl")).unwrap(), fs::read(p.join("c.jsonl")).unwrap());
}

#[test]
fn distillation_without_teacher_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let out = hkd(dir.path(), &["distill", "--data", "train.jsonl", "--seeds", "1", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("teacher checkpoint required"), "{err}");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hkd(dir.path(), &["eval", "--bogus"]).status.code(), Some(2));
    assert_eq!(hkd(dir.path(), &["distill", "--data", "x", "--variant", "half"]).status.code(), Some(2));
    assert_eq!(hkd(dir.path(), &["train-teacher", "--data", "x", "--precision", "f16"]).status.code(), Some(2));
}

#[test]
fn missing_input_file_fails_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = hkd(dir.path(), &["eval", "--model", "none.ckpt", "--data", "none.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error["), "{err}");
}

#[test]
fn command_line_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    corpus(p);
    ok(p, TEACHER);

    let (train, labels) = load_corpus(&p.join("train.jsonl"), None).unwrap();
    let vocab = Vocabulary::build(&train);
    let (test, _) = load_corpus(&p.join("test.jsonl"), Some(&labels)).unwrap();
    let (train, test) = (encode(&train, &vocab, &labels).unwrap(), encode(&test, &vocab, &labels).unwrap());
    let cfg = TrainConfig {
        max_epochs: 2,
        seeds: vec![1],
        ..TrainConfig::default()
    };
    let runs = train_teacher::<f32>(&train, Some(&test), &cfg, &ModelConfig::desk_s1(vocab.len(), labels.len())).unwrap();
    assert_eq!(fs::read_to_string(p.join("metrics.json")).unwrap(), runs.report.to_json().unwrap());

    let ckpt = Checkpoint::<f32>::load(&p.join("t.ckpt")).unwrap();
    assert_eq!(ckpt.model.params(), runs.models[0].1.params());
    let want = evaluate_accuracy(&ckpt.model, &test).unwrap();
    let stdout = ok(p, &["eval", "--model", "t.ckpt", "--data", "test.jsonl"]);
    assert_eq!(stdout.trim(), format!("accuracy {want}"));
}

#[test]
fn student_and_inspection_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    corpus(p);
    ok(p, TEACHER);
    ok(
        p,
        &["distill", "--data", "train.jsonl", "--teacher", "t.ckpt", "--preset", "desk-s1", "--seeds", "1", "--epochs", "1", "--ckpt", "s.ckpt"],
    );
    let doc: serde_json::Value = serde_json::from_str(&ok(p, &["inspect-ckpt", "--ckpt", "s.ckpt"])).unwrap();
    assert_eq!(doc["sidecar"]["training"]["seed"], 1);
    let tensors = doc["tensors"].as_array().unwrap();
    assert!(!tensors.is_empty());
    let total: u64 = tensors
        .iter()
        .map(|t| t["shape"].as_array().unwrap().iter().map(|d| d.as_u64().unwrap()).product::<u64>())
        .sum();
    assert_eq!(doc["parameters"].as_u64(), Some(total));
}

#[test]
fn metrics_file_may_not_replace_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let out = hkd(
        dir.path(),
        &["train-teacher", "--data", "train.jsonl", "--seeds", "1", "--epochs", "1", "--ckpt", "m.ckpt", "--out", "m.json"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ablation_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    corpus(p);
    ok(p, TEACHER);
    let table = ok(
        p,
        &[
            "ablate", "--data", "train.jsonl", "--test", "test.jsonl", "--teacher", "t.ckpt", "--students", "desk-s1",
            "--variants", "baseline,full", "--seeds", "1", "--epochs", "1", "--cache-teacher", "--out", "ab.json",
        ],
    );
    assert!(table.contains("teacher (common)"), "{table}");
    assert!(table.contains("desk-s1"), "{table}");
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("ab.json")).unwrap()).unwrap();
    assert!(doc.is_object());
}

#[test]
fn gradient_check_command_passes() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["gradcheck", "--instances", "3", "--seed", "2"]);
    assert_eq!(stdout.lines().count(), 10);
}
