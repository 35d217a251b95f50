use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kgcap::vectors::VectorStore;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn kgcap(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgcap"))
        .args(args)
        .current_dir(dir)
        .env("RUST_BACKTRACE", "0")
        .output()
        .unwrap()
}

#[test]
fn evaluate_identical_corpus_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let lines = [
        ("1", "a man rides a horse"),
        ("2", "two dogs play in the snow"),
        ("3", "children eat cake at home"),
    ];
    let body: String = lines
        .iter()
        .map(|(id, c)| serde_json::json!({"image_id": id, "candidate": c, "references": [c]}).to_string() + "\n")
        .collect();
    fs::write(dir.path().join("results.jsonl"), body).unwrap();
    let out = kgcap(&["evaluate", "--results", "results.jsonl", "--out", "out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("out/report.json")).unwrap()).unwrap();
    let native = &report["native"];
    for key in ["bleu1", "bleu2", "bleu3", "bleu4", "rouge_l"] {
        assert!((native[key].as_f64().unwrap() - 1.0).abs() < 1e-9, "{key}");
    }
    assert!((native["cider_d"].as_f64().unwrap() - 10.0).abs() < 1e-9);
    assert!((report["percent"]["bleu1"].as_f64().unwrap() - 100.0).abs() < 1e-9);
    assert!(dir.path().join("out/logs/evaluate.json").exists());
}

#[test]
fn zero_beta_retrofit_keeps_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let config = serde_json::json!({
        "paths": {"graph": f.join("graph.csv"), "vectors": f.join("vectors.txt")},
        "retrofit": {"beta": "constant", "beta_value": 0.0}
    });
    fs::write(dir.path().join("cfg.json"), config.to_string()).unwrap();
    for stage in ["ingest-kg", "retrofit"] {
        let out = kgcap(&[stage, "--config", "cfg.json", "--out", "out"], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let load = |p: PathBuf| VectorStore::load(fs::read(p).unwrap().as_slice()).unwrap();
    assert_eq!(
        load(dir.path().join("out/vectors.retrofit.txt")),
        load(f.join("vectors.txt"))
    );
}

#[test]
fn missing_inputs_and_bad_flags_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = kgcap(&["retrofit", "--out", "out"], dir.path());
    assert!(!out.status.success());
    let out = kgcap(&["evaluate", "--results", "absent.jsonl"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.jsonl"));
    let out = kgcap(&["train", "--no-such-flag"], dir.path());
    assert!(!out.status.success());
    let out = kgcap(&["caption", "--mode", "sideways"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn seed_flag_changes_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("toy.json");
    let cfg = cfg.to_str().unwrap();
    let hash = |seed: &str, out: &str| {
        let o = kgcap(
            &["ingest-kg", "--config", cfg, "--seed", seed, "--out", out],
            dir.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let log: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join(out).join("logs/ingest-kg.json")).unwrap()).unwrap();
        log["config_hash"].as_str().unwrap().to_string()
    };
    assert_eq!(hash("1", "a"), hash("1", "b"));
    assert_ne!(hash("1", "a"), hash("2", "c"));
}
