//! Exit codes and artifacts of the command-line front end.

use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attnshap")).args(args).current_dir(dir).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Synthetic data plus a briefly trained model in `dir`.
fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("quick.json"), r#"{"train": {"epochs": 1}, "limit": 200}"#).unwrap();
    let s = run(dir.path(), &["synth", "--seed", "1", "--out", "s"]);
    assert_eq!(code(&s), 0, "{}", String::from_utf8_lossy(&s.stderr));
    let t = run(dir.path(), &["train", "--seed", "1", "--data", "s/train.jsonl", "--config", "quick.json", "--out", "m"]);
    assert_eq!(code(&t), 0, "{}", String::from_utf8_lossy(&t.stderr));
    dir
}

#[test]
fn unknown_subcommand_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["explain"])), 2);
}

#[test]
fn missing_paths_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["evaluate", "--model", "nope.ckpt", "--data", "nope.jsonl", "--out", "o"])), 2);
    assert_eq!(code(&run(dir.path(), &["train", "--config", "missing.json"])), 2);
}

#[test]
fn sampled_methods_require_a_seed() {
    let dir = prepared();
    let args = ["attribute", "--model", "m/model.ckpt", "--data", "s/test.jsonl", "--methods", "SHAP", "--out", "a"];
    let o = run(dir.path(), &args);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
    let ok = run(dir.path(), &["attribute", "--model", "m/model.ckpt", "--data", "s/test.jsonl", "--methods", "Att", "--out", "a"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
}

#[test]
fn unknown_method_is_a_config_error() {
    let dir = prepared();
    let o = run(dir.path(), &["evaluate", "--model", "m/model.ckpt", "--data", "s/test.jsonl", "--methods", "LIME", "--out", "e"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_dataset_is_a_data_error() {
    let dir = prepared();
    std::fs::write(dir.path().join("bad.jsonl"), "{\"id\":\"x\",\"label\":0,\"token_ids\":[999]}\n").unwrap();
    let o = run(dir.path(), &["evaluate", "--model", "m/model.ckpt", "--data", "bad.jsonl", "--methods", "Att", "--out", "e"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn evaluate_writes_csv_and_json_with_the_hash() {
    let dir = prepared();
    std::fs::write(dir.path().join("few.json"), r#"{"limit": 5}"#).unwrap();
    let o = run(
        dir.path(),
        &["evaluate", "--model", "m/model.ckpt", "--data", "s/test.jsonl", "--config", "few.json", "--methods", "Att,Grad-SAM", "--out", "e"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("e/metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "method,f1,comp,comp_ci,suff,suff_ci,n,config_hash");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    let hash = rows[0].rsplit(',').next().unwrap();
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("e/metrics.json")).unwrap()).unwrap();
    assert_eq!(json["config_hash"], hash);
    assert_eq!(json["reports"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_attnshap"))
        .args(["synth", "--seed", "1", "--out", "s"])
        .current_dir(dir.path())
        .env("ATTNSHAP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
