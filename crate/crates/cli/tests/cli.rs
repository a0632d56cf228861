use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn acfnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acfnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_spec(dir: &Path, spec: Value) -> PathBuf {
    let path = dir.join("spec.json");
    fs::write(&path, spec.to_string()).unwrap();
    path
}

/// Synthesizes a corpus into `dir/corpus` and returns its manifest.
fn synth(dir: &Path, spec: Value, extra: &[&str]) -> PathBuf {
    let spec_path = write_spec(dir, spec);
    let out = dir.join("corpus");
    let mut args = vec!["synth", "--out", p(&out), "--config", p(&spec_path), "--seed", "5"];
    args.extend_from_slice(extra);
    let res = acfnet(&args);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    out.join("manifest.jsonl")
}

fn featurize(manifest: &Path, out: &Path, mode: &str) -> Output {
    acfnet(&["featurize", "--manifest", p(manifest), "--feature-mode", mode, "--out", p(out), "--seed", "1"])
}

fn index_lines(index: &Path) -> Vec<Value> {
    fs::read_to_string(index)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn small_corpus(dir: &Path, extra: &[&str]) -> PathBuf {
    synth(
        dir,
        serde_json::json!({"speakers_per_class": 4, "recordings_per_speaker": 2, "duration_s": [25.0, 35.0]}),
        extra,
    )
}

#[test]
fn help_exits_zero_for_every_command() {
    for cmd in ["featurize", "train", "evaluate", "grid-search", "synth"] {
        let out = acfnet(&[cmd, "--help"]);
        assert_eq!(code(&out), 0, "{cmd}");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("Usage"), "{cmd}: {text}");
    }
    assert_eq!(code(&acfnet(&["--help"])), 0);
}

#[test]
fn invalid_invocations_exit_two() {
    assert_eq!(code(&acfnet(&["featurize"])), 2);
    assert_eq!(code(&acfnet(&["train", "--bogus"])), 2);
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x");
    assert_eq!(code(&acfnet(&["synth", "--out", p(&out), "--jobs", "0"])), 2);
    let missing = dir.path().join("missing.jsonl");
    assert_eq!(code(&featurize(&missing, &out, "tv8")), 2);
}

#[test]
fn three_45s_recordings_give_18_segments_reproducibly() {
    let dir = TempDir::new().unwrap();
    let manifest = synth(
        dir.path(),
        serde_json::json!({"speakers_per_class": 1, "recordings_per_speaker": 2, "duration_s": [45.0, 45.0]}),
        &[],
    );
    let text = fs::read_to_string(&manifest).unwrap();
    let three: Vec<&str> = text.lines().take(3).collect();
    fs::write(&manifest, three.join("\n") + "\n").unwrap();

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&featurize(&manifest, &a, "tv8")), 0);
    assert_eq!(code(&featurize(&manifest, &b, "tv8")), 0);
    let segments = index_lines(&a.join("index.jsonl"));
    assert_eq!(segments.len(), 18);
    assert_eq!(fs::read(a.join("index.jsonl")).unwrap(), fs::read(b.join("index.jsonl")).unwrap());
    for seg in &segments {
        let file = seg["files"][0].as_str().unwrap();
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap());
    }
    let run: Value = serde_json::from_str(&fs::read_to_string(a.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "featurize");
    assert_eq!(run["seed"], 1);
}

#[test]
fn short_recording_yields_no_segments() {
    let dir = TempDir::new().unwrap();
    let manifest = synth(
        dir.path(),
        serde_json::json!({"speakers_per_class": 1, "recordings_per_speaker": 1, "duration_s": [8.0, 8.0]}),
        &[],
    );
    let out = dir.path().join("f");
    assert_eq!(code(&featurize(&manifest, &out, "tv8")), 0);
    assert!(index_lines(&out.join("index.jsonl")).is_empty());
}

#[test]
fn missing_feature_file_is_a_partial_failure() {
    let dir = TempDir::new().unwrap();
    let manifest = small_corpus(dir.path(), &[]);
    let first: Value = serde_json::from_str(fs::read_to_string(&manifest).unwrap().lines().next().unwrap()).unwrap();
    fs::remove_file(manifest.parent().unwrap().join(first["path"].as_str().unwrap())).unwrap();
    let out = dir.path().join("f");
    assert_eq!(code(&featurize(&manifest, &out, "tv8")), 1);
    assert!(!index_lines(&out.join("index.jsonl")).is_empty());
    let failed: Vec<Value> = fs::read_to_string(out.join("failures.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0]["recording_id"], first["recording_id"]);
}

#[test]
fn synth_round_trips_through_featurize_and_records_a_drawn_seed() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("corpus");
    let res = acfnet(&["synth", "--out", p(&out), "--speakers", "2", "--mfcc-analog"]);
    assert_eq!(code(&res), 0);
    let run: Value = serde_json::from_str(&fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    assert!(run["seed"].is_u64());
    let f = dir.path().join("f");
    assert_eq!(code(&featurize(&out.join("manifest.jsonl"), &f, "fused")), 0);
    let segs = index_lines(&f.join("index.jsonl"));
    assert!(!segs.is_empty());
    assert!(segs.iter().all(|s| s["files"].as_array().unwrap().len() == 2));
}

#[test]
fn train_resume_evaluate_and_guards() {
    let dir = TempDir::new().unwrap();
    let manifest = small_corpus(dir.path(), &["--sub-corpora", "2", "--mfcc-analog"]);
    let tv = dir.path().join("tv");
    let mfcc = dir.path().join("mfcc");
    assert_eq!(code(&featurize(&manifest, &tv, "tv8")), 0);
    assert_eq!(code(&featurize(&manifest, &mfcc, "mfcc12")), 0);
    let index = tv.join("index.jsonl");

    let run1 = dir.path().join("run1");
    let res = acfnet(&["train", "--manifest", p(&index), "--out", p(&run1), "--seed", "3", "--max-epochs", "2"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let ckpt = run1.join("checkpoint.acfn");
    assert!(ckpt.exists());
    let split = run1.join("split.json");

    // resume continues the epoch count
    let run2 = dir.path().join("run2");
    let res = acfnet(&[
        "train", "--manifest", p(&index), "--out", p(&run2), "--seed", "3", "--split", p(&split), "--resume", p(&ckpt),
        "--max-epochs", "4",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let epochs: Vec<u64> = fs::read_to_string(run2.join("train_log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["epoch"].as_u64().unwrap())
        .collect();
    assert_eq!(epochs, vec![3, 4]);

    // a test recording in the training list is refused
    let mut leaky: Value = serde_json::from_str(&fs::read_to_string(&split).unwrap()).unwrap();
    let test_id = leaky["test"][0].clone();
    leaky["train"].as_array_mut().unwrap().push(test_id);
    let leaky_path = dir.path().join("leaky.json");
    fs::write(&leaky_path, leaky.to_string()).unwrap();
    let refused = dir.path().join("refused");
    let res = acfnet(&["train", "--manifest", p(&index), "--out", p(&refused), "--split", p(&leaky_path), "--seed", "1"]);
    assert_eq!(code(&res), 2);
    assert!(!refused.join("checkpoint.acfn").exists());

    // two sub-corpora give two rows in the documented column order
    let eval = dir.path().join("eval");
    let res = acfnet(&[
        "evaluate", "--manifest", p(&index), "--checkpoint", p(&ckpt), "--split", p(&split), "--subset", "all", "--out",
        p(&eval), "--seed", "1",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let table = fs::read_to_string(eval.join("results.md")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "| Feats | Train | Test | Accuracy | AUC-ROC | F1(D) | F1(ND) |");
    let rows: Vec<&str> = lines.iter().skip(2).copied().collect();
    assert_eq!(rows.len(), 2, "{table}");
    assert!(rows[0].contains("MD1") && rows[1].contains("MD2"));

    // a TV checkpoint cannot score cepstral features
    let res = acfnet(&[
        "evaluate", "--manifest", p(&mfcc.join("index.jsonl")), "--checkpoint", p(&ckpt), "--out",
        p(&dir.path().join("bad")), "--seed", "1",
    ]);
    assert_eq!(code(&res), 2);
}

#[test]
fn grid_search_writes_32_rows() {
    let dir = TempDir::new().unwrap();
    let manifest = small_corpus(dir.path(), &[]);
    let f = dir.path().join("f");
    assert_eq!(code(&featurize(&manifest, &f, "tv8")), 0);
    let out = dir.path().join("grid");
    let res = acfnet(&[
        "grid-search", "--manifest", p(&f.join("index.jsonl")), "--out", p(&out), "--seed", "2", "--max-epochs", "1",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let rows = fs::read_to_string(out.join("grid.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 32);
    assert!(out.join("best_config.json").exists());
}
