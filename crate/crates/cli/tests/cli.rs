use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hypalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypalign")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_curvature_prints_solution() {
    let out = hypalign(&["solve-curvature", "--c1", "0.25", "--c2", "1.0", "--r", "40"]);
    assert_eq!(out.status.code(), Some(0));
    let sol = json(&out);
    let c3 = sol["c3_star"].as_f64().unwrap();
    assert!(c3 > 0.25 && c3 < 1.0);
    assert_eq!(sol["certified"], Value::Bool(true));
    assert!((sol["r_min_star"].as_f64().unwrap() - 34.7632036794842).abs() < 1e-9);
}

#[test]
fn invalid_radius_exits_with_validation_code() {
    let out = hypalign(&["solve-curvature", "--c1", "0.25", "--c2", "1.0", "--r", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = hypalign(&["solve-curvature", "--c1", "0", "--c2", "1.0", "--r", "40"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overflow_exits_with_numeric_code() {
    let out = hypalign(&["solve-curvature", "--c1", "0.01", "--c2", "2", "--r", "1e6"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_file_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = hypalign(&["eval", "--taxonomy", path_str(&missing), "--predictions", path_str(&missing)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"alpha": 0.5, "no_such_field": 1}"#).unwrap();
    let out = hypalign(&["train", "--config", path_str(&config), "--out-dir", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn taxonomy_build_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.jsonl");
    let tax = dir.path().join("tax.json");
    std::fs::write(&ann, "[\"animal\",\"dog\"]\n[\"animal\",\"cat\"]\n[\"plant\",\"tree\"]\n[\"plant\",\"moss\"]\n").unwrap();
    let out = hypalign(&["taxonomy", "build", "--annotations", path_str(&ann), "--out", path_str(&tax)]);
    assert_eq!(out.status.code(), Some(0));
    let file: Value = serde_json::from_str(&std::fs::read_to_string(&tax).unwrap()).unwrap();
    assert_eq!(file["nodes"].as_object().unwrap().len(), 7);

    let out = hypalign(&["taxonomy", "split", "--taxonomy", path_str(&tax), "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let split = json(&out);
    let leaves = |v: &Value| {
        let nodes = v["nodes"].as_object().unwrap();
        let parents: Vec<&str> = v["edges"].as_array().unwrap().iter().map(|e| e[0].as_str().unwrap()).collect();
        nodes.keys().filter(|k| !parents.contains(&k.as_str())).cloned().collect::<Vec<_>>()
    };
    let (base, novel) = (leaves(&split["base"]), leaves(&split["novel"]));
    assert_eq!(base.len() + novel.len(), 4);
    assert!(base.iter().all(|l| !novel.contains(l)));

    let again = hypalign(&["taxonomy", "split", "--taxonomy", path_str(&tax), "--seed", "3"]);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn synthetic_files_train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    let train = dir.path().join("train.jsonl");
    let test = dir.path().join("test.jsonl");
    std::fs::write(&spec, r#"{"branching": [2, 2], "dim": 8, "samples_per_leaf": 4, "seed": 5}"#).unwrap();
    for (file, split) in [(&train, "0"), (&test, "1")] {
        let out = hypalign(&["make-synthetic", "--spec", path_str(&spec), "--out", path_str(file), "--split", split]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read_to_string(&train).unwrap().lines().count(), 16);

    let config = dir.path().join("config.json");
    let config_text = serde_json::json!({
        "epochs": 5,
        "seed": 1,
        "data": { "files": { "train": train, "test": test } }
    });
    std::fs::write(&config, config_text.to_string()).unwrap();
    let out_dir = dir.path().join("run");
    let out = hypalign(&["train", "--config", path_str(&config), "--out-dir", path_str(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = json(&out);
    for name in ["report.json", "taxonomy.json", "traces.jsonl", "predictions.jsonl"] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
    assert_eq!(std::fs::read_to_string(out_dir.join("traces.jsonl")).unwrap().lines().count(), 5);

    let out = hypalign(&[
        "eval",
        "--taxonomy",
        path_str(&out_dir.join("taxonomy.json")),
        "--predictions",
        path_str(&out_dir.join("predictions.jsonl")),
        "--treecuts",
        "25",
        "--seed",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out), metrics);
}
