mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::MockServer;
use gallon::datasets::{load_csv, SplitIndices, TaskSpec};
use gallon::distillation::{train_plain_mlp, TrainConfig};
use gallon::models::{NetConfig, PreparedGraphs, StackParams};

fn gallon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gallon")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gallon(args);
    assert!(
        out.status.success(),
        "gallon {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// The first and last `per_class` BACE rows: actives lead the file,
/// inactives close it.
fn bace_fixture(dir: &Path, per_class: usize) -> PathBuf {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/bace.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut out = vec![lines[0]];
    out.extend(&lines[1..=per_class]);
    out.extend(&lines[lines.len() - per_class..]);
    let path = dir.join("bace_small.csv");
    std::fs::write(&path, out.join("\n") + "\n").unwrap();
    path
}

fn set(kv: &str) -> [&str; 2] {
    ["--set", kv]
}

#[test]
fn split_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = bace_fixture(tmp.path(), 40);
    let path_kv = format!("dataset.path=\"{}\"", data.display());
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = tmp.path().join(run);
        let out_dir = out_dir.to_str().unwrap();
        ok(&[&["split", "--quiet", "--out-dir", out_dir][..], &set(&path_kv)].concat());
        outputs.push(std::fs::read(tmp.path().join(run).join("split/split.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);

    let out_dir = tmp.path().join("a");
    let rerun = ok(&[&["split", "--quiet", "--out-dir", out_dir.to_str().unwrap()][..], &set(&path_kv)].concat());
    assert!(String::from_utf8_lossy(&rerun.stdout).contains("up to date"));
    assert_eq!(std::fs::read(out_dir.join("split/split.json")).unwrap(), outputs[0]);
}

#[test]
fn zero_weight_pipeline_matches_plain_mlp() {
    let tmp = tempfile::tempdir().unwrap();
    let data = bace_fixture(tmp.path(), 50);
    let out_dir = tmp.path().join("out");
    let path_kv = format!("dataset.path=\"{}\"", data.display());
    let args: Vec<&str> = [
        &["pipeline", "--quiet", "--seed", "3", "--out-dir", out_dir.to_str().unwrap()][..],
        &set(&path_kv),
        &set("llm.skip=true"),
        &set("distill.alpha=0"),
        &set("distill.beta=0"),
        &set("student.epochs=6"),
        &set("teachers.gnn.epochs=2"),
        &set("teachers.lm_head.epochs=2"),
        &set("eval.bench_repeats=2"),
    ]
    .concat();
    let first = ok(&args);
    let stdout = String::from_utf8_lossy(&first.stdout);
    for stage in ["featurize", "split", "embed", "train-gnn", "train-lm-head", "distill", "eval", "bench"] {
        assert!(stdout.contains(&format!("{stage}: done")), "{stdout}");
    }

    let task = TaskSpec::preset("bace").unwrap();
    let ds = load_csv(&data, &task).unwrap();
    let split = SplitIndices::from_json(&std::fs::read_to_string(out_dir.join("split/split.json")).unwrap()).unwrap();
    let train = TrainConfig {
        epochs: 6,
        seed: 3,
        ..TrainConfig::default()
    };
    let plain = train_plain_mlp(&PreparedGraphs::from_dataset(&ds), &split, task.kind, &train).unwrap();
    let config = NetConfig::new(plain.network.params.config.in_dim, 1);
    let student = StackParams::load(&out_dir.join("distill/model.gmx"), config).unwrap();
    assert_eq!(student, plain.network.params);

    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("distill/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["best_val"]["mean"].as_f64().unwrap(), plain.best_val.mean);
    assert_eq!(metrics["test_at_best"]["mean"].as_f64().unwrap(), plain.test_at_best.mean);

    // a second run changes nothing
    let manifest = std::fs::read(out_dir.join("distill/manifest.json")).unwrap();
    let second = ok(&args);
    let stdout = String::from_utf8_lossy(&second.stdout);
    assert!(!stdout.contains(": done"), "{stdout}");
    assert_eq!(std::fs::read(out_dir.join("distill/manifest.json")).unwrap(), manifest);
}

#[test]
fn offline_query_serves_warm_cache() {
    let server = MockServer::start(vec![]);
    let tmp = tempfile::tempdir().unwrap();
    let data = bace_fixture(tmp.path(), 4);
    let out_dir = tmp.path().join("out");
    let path_kv = format!("dataset.path=\"{}\"", data.display());
    let cache_kv = format!("llm.cache_dir=\"{}\"", tmp.path().join("cache").display());
    let endpoint_kv = format!("llm.endpoint=\"{}\"", server.url);
    let base: Vec<&str> = [
        &["--quiet", "--out-dir", out_dir.to_str().unwrap()][..],
        &set(&path_kv),
        &set(&cache_kv),
        &set(&endpoint_kv),
    ]
    .concat();
    ok(&[&["prompt"][..], &base].concat());
    ok(&[&["query"][..], &base].concat());
    assert_eq!(server.hits(), 8);
    let cold = std::fs::read(out_dir.join("query/responses.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = cold.split(|&b| b == b'\n').filter(|l| !l.is_empty()).map(|l| serde_json::from_slice(l).unwrap()).collect();
    assert_eq!(lines.len(), 8);
    assert!(lines.iter().all(|l| l["response"].as_str().unwrap().starts_with("Described molecule")));

    std::fs::remove_dir_all(out_dir.join("query")).unwrap();
    ok(&[&["query", "--offline"][..], &base].concat());
    assert_eq!(server.hits(), 8, "offline rerun must not touch the network");
    assert_eq!(std::fs::read(out_dir.join("query/responses.jsonl")).unwrap(), cold);

    // a cold cache offline is a network failure
    let empty_kv = format!("llm.cache_dir=\"{}\"", tmp.path().join("empty").display());
    std::fs::remove_dir_all(out_dir.join("query")).unwrap();
    let out = gallon(&[&["query", "--offline"][..], &base, &set(&empty_kv)].concat());
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(server.hits(), 8);
}

#[test]
fn exit_codes_name_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out_dir = out_dir.to_str().unwrap();

    let out = gallon(&["split", "--quiet", "--out-dir", out_dir, "--set", "split.trian=0.8"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trian"));

    let missing = tmp.path().join("nope.csv");
    let kv = format!("dataset.path=\"{}\"", missing.display());
    let out = gallon(&["split", "--quiet", "--out-dir", out_dir, "--set", &kv]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));

    let data = bace_fixture(tmp.path(), 4);
    let kv = format!("dataset.path=\"{}\"", data.display());
    let out = gallon(&["train-gnn", "--quiet", "--out-dir", out_dir, "--set", &kv]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gallon split"));
}

#[test]
fn json_logs_by_default() {
    let tmp = tempfile::tempdir().unwrap();
    let data = bace_fixture(tmp.path(), 4);
    let kv = format!("dataset.path=\"{}\"", data.display());
    let out = ok(&["featurize", "--out-dir", tmp.path().join("out").to_str().unwrap(), "--set", &kv]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    assert!(!lines.is_empty());
    for l in lines {
        let v: serde_json::Value = serde_json::from_str(l).unwrap_or_else(|e| panic!("{l}: {e}"));
        assert!(v["level"].is_string() && v["msg"].is_string());
    }
}
