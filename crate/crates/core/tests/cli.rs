use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn afecl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afecl"))
        .args(args)
        .env_remove("AFECL_SEED")
        .output()
        .expect("binary runs")
}

fn afecl_env(args: &[&str], key: &str, val: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afecl"))
        .args(args)
        .env(key, val)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_communities(out: &Path, extra: &[&str]) {
    let data = fixture("communities");
    let mut args = vec![
        "train", "--data", s(&data), "--out", s(out), "--temperature", "0.5", "--epochs", "15", "--heads", "2", "--hidden",
        "4", "-q",
    ];
    args.extend_from_slice(extra);
    let o = afecl(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn one_epoch_on_the_triangle_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let data = fixture("triangle");
    let start = Instant::now();
    let o = afecl(&["train", "--data", s(&data), "--out", s(&out), "--temperature", "0.5", "--epochs", "1", "-q"]);
    assert!(start.elapsed().as_secs_f64() < 1.0);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["params.json", "params.bin", "embeddings.tsv", "metrics.jsonl", "manifest.json", "config.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let trace = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let line: Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    assert_eq!(line["epoch"], 1);
    assert!(line["L"].as_f64().unwrap() >= 0.0);
    assert!(line["wall_ms"].as_f64().is_some());
    let emb = fs::read_to_string(out.join("embeddings.tsv")).unwrap();
    assert_eq!(emb.lines().count(), 3);
    assert_eq!(emb.lines().next().unwrap().split('\t').count(), 4 * 32);
    let names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(names.iter().all(|n| !n.starts_with('.')), "temporaries left: {names:?}");
}

#[test]
fn missing_temperature_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("triangle");
    let o = afecl(&["train", "--data", s(&data), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("temperature"), "{}", stderr(&o));
}

#[test]
fn unknown_config_keys_and_bad_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let data = fixture("triangle");
    fs::write(&cfg, r#"{"temperature": 0.5, "epochz": 3}"#).unwrap();
    let o = afecl(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("epochz"));
    let o = afecl(&["train", "--data", s(&data), "--temperature", "0", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    let o = afecl(&["train", "--data", s(&data), "--temperature", "1", "--ps", "1.5", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    let o = afecl(&["train", "--bogus-flag"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn flags_override_file_and_sources_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let data = fixture("triangle");
    let body = serde_json::json!({"temperature": 0.7, "epochs": 5, "heads": 1, "hidden": 2, "data": s(&data)});
    fs::write(&cfg, body.to_string()).unwrap();
    let out = dir.path().join("run");
    let o = afecl(&["train", "--config", s(&cfg), "--epochs", "2", "--out", s(&out), "-q"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("metrics.jsonl")).unwrap().lines().count(), 2);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["config"]["epochs"], 2);
    assert_eq!(m["config"]["temperature"], 0.7);
    assert_eq!(m["config_sources"]["epochs"], "cli");
    assert_eq!(m["config_sources"]["temperature"], "file");
    assert_eq!(m["config_sources"]["learning_rate"], "default");
    assert_eq!(m["dataset_fingerprint"].as_str().unwrap().len(), 64);
    assert!(m["version"].as_str().unwrap().starts_with('v'));
    assert!(m["finished_at"].as_f64().unwrap() >= m["started_at"].as_f64().unwrap());

    // the written config is itself a valid config file
    let again = dir.path().join("again");
    let o = afecl(&["train", "--config", s(&out.join("config.json")), "--out", s(&again), "-q"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(out.join("params.bin")).unwrap(), fs::read(again.join("params.bin")).unwrap());
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("triangle");
    let out = dir.path().join("run");
    let args = ["train", "--data", s(&data), "--temperature", "0.5", "--epochs", "1", "--out", s(&out), "-q"];
    let o = afecl_env(&args, "AFECL_SEED", "42");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["config"]["seed"], 42);
    assert_eq!(m["config_sources"]["seed"], "env");
    let o = afecl_env(&args, "AFECL_SEED", "not-a-number");
    assert_eq!(code(&o), 2);
}

#[test]
fn training_is_reproducible_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_communities(&a, &["--seed", "3", "--deterministic"]);
    train_communities(&b, &["--seed", "3", "--deterministic"]);
    for f in ["params.bin", "params.json", "embeddings.tsv", "config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn node_evaluation_writes_identical_metrics_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_communities(&run, &[]);
    let eval = |out: &Path, workers: &str| {
        let o = afecl(&[
            "eval-node", "--ckpt", s(&run), "--c", "2,4", "--splits", "4", "--val-per-class", "2", "--workers", workers,
            "--out", s(out), "-q",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    let (x, y) = (dir.path().join("x"), dir.path().join("y"));
    eval(&x, "1");
    eval(&y, "3");
    assert_eq!(fs::read(x.join("metrics.json")).unwrap(), fs::read(y.join("metrics.json")).unwrap());
    let reports = json(&x.join("metrics.json"));
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 2);
    for r in reports {
        assert_eq!(r["task"], "node_classification");
        assert_eq!(r["dataset"], "communities");
        assert_eq!(r["per_split"].as_array().unwrap().len(), 4);
        assert!(r["mean"].as_f64().unwrap() > 50.0);
        assert!(r["std"].as_f64().is_some());
        assert_eq!(r["config_fingerprint"].as_str().unwrap().len(), 16);
    }
    let csv = fs::read_to_string(x.join("node_classification.csv")).unwrap();
    assert!(csv.starts_with("dataset,c,mean_acc,std_acc,splits\n"));
    assert_eq!(csv.lines().count(), 3);
    assert!(x.join("manifest.json").is_file());

    // a single label rate gives a single object at the default location
    let o = afecl(&["eval-node", "--ckpt", s(&run), "--c", "3", "--splits", "2", "--val-per-class", "2", "-q"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let single = json(&run.join("eval-node/metrics.json"));
    assert!(single.is_object());
}

#[test]
fn link_evaluation_needs_a_held_out_split() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("plain");
    train_communities(&plain, &[]);
    let o = afecl(&["eval-link", "--ckpt", s(&plain), "--runs", "1", "-q"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("link-split"));

    let held = dir.path().join("held");
    train_communities(&held, &["--link-split"]);
    let split = json(&held.join("edge_split.json"));
    assert!(!split["test_edges"].as_array().unwrap().is_empty());
    let o = afecl(&["eval-link", "--ckpt", s(&held), "--runs", "2", "--epochs", "10", "-q"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&held.join("eval-link/metrics.json"));
    assert_eq!(r["task"], "link_prediction");
    let aucs = r["per_split"].as_array().unwrap();
    assert_eq!(aucs.len(), 2);
    assert!(aucs.iter().all(|a| (0.0..=1.0).contains(&a.as_f64().unwrap())));
}

#[test]
fn missing_or_corrupt_checkpoints_exit_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = afecl(&["eval-node", "--ckpt", s(&dir.path().join("absent")), "-q"]);
    assert_eq!(code(&o), 3);
    let run = dir.path().join("run");
    train_communities(&run, &["--link-split"]);
    let bin = run.join("params.bin");
    let mut bytes = fs::read(&bin).unwrap();
    bytes[0] ^= 0xff;
    fs::write(&bin, bytes).unwrap();
    let o = afecl(&["eval-link", "--ckpt", s(&run), "-q"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("checksum"));
    fs::write(run.join("embeddings.tsv"), "1\tx\n").unwrap();
    let o = afecl(&["eval-node", "--ckpt", s(&run), "-q"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn missing_or_malformed_datasets_exit_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = afecl(&["train", "--data", s(&dir.path().join("nope")), "--temperature", "1", "--out", s(dir.path())]);
    assert_eq!(code(&o), 3);
    let bad = dir.path().join("bad");
    fs::create_dir(&bad).unwrap();
    for f in ["meta.json", "features.tsv", "labels.tsv"] {
        fs::copy(fixture("triangle").join(f), bad.join(f)).unwrap();
    }
    fs::write(bad.join("edges.tsv"), "0\t1\n1\t7\n").unwrap();
    let o = afecl(&["train", "--data", s(&bad), "--temperature", "1", "--out", s(dir.path())]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("edges.tsv:2"), "{}", stderr(&o));
}

#[test]
fn overflowing_features_exit_with_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("big");
    fs::create_dir(&data).unwrap();
    for f in ["meta.json", "labels.tsv", "edges.tsv"] {
        fs::copy(fixture("triangle").join(f), data.join(f)).unwrap();
    }
    fs::write(data.join("features.tsv"), "1e300\t1e300\n-1e300\t1e300\n1e300\t-1e300\n").unwrap();
    let o = afecl(&["train", "--data", s(&data), "--temperature", "0.5", "--epochs", "3", "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_fails_by_tolerance() {
    let o = afecl(&["gradcheck", "--n", "6", "--seed", "0", "-q"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("max_rel_err < 1e-4"), "{out}");
    let o = afecl(&["gradcheck", "--n", "6", "--seed", "0", "--tolerance", "1e-30", "-q"]);
    assert_eq!(code(&o), 4);
    let o = afecl(&["gradcheck", "--n", "1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn sample_stats_reports_a_binomial_mean() {
    let data = fixture("communities");
    let o = afecl(&["sample-stats", "--data", s(&data), "--ps", "0.5", "--trials", "100", "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["undirected_edges"], 88);
    assert_eq!(v["expected"], 44.0);
    assert_eq!(v["counts"].as_array().unwrap().len(), 100);
    assert_eq!(v["within_band"], true);
    assert_eq!(v["all_symmetric"], true);
    let o = afecl(&["sample-stats", "--data", s(&data), "--ps", "0.5", "--trials", "20"]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("mean kept"));
    let o = afecl(&["sample-stats", "--data", s(&data), "--ps", "0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn exported_embeddings_match_the_training_output() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_communities(&run, &[]);
    let dest = dir.path().join("export/emb.tsv");
    let o = afecl(&["export-embeddings", "--ckpt", s(&run), "--out", s(&dest)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(&dest).unwrap(), fs::read(run.join("embeddings.tsv")).unwrap());
    assert!(dest.parent().unwrap().join("manifest.json").is_file());
    let o = afecl(&["export-embeddings", "--ckpt", s(&run), "--data", s(&fixture("triangle")), "--out", s(&dest)]);
    assert_eq!(code(&o), 3);
}
