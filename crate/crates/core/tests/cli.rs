use std::path::Path;
use std::process::{Command, Output};

fn clara(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clara")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = clara(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn bench(dir: &Path) {
    ok(&["--seed", "7", "bench", "--out-dir", &dir.display().to_string()]);
}

#[test]
fn pseudo_label_and_train_ignore_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    bench(d);
    for w in ["1", "4"] {
        ok(&[
            "--seed", "7", "--workers", w, "pseudo-label",
            "--kb", &p(d, "kb.jsonl"),
            "--train", &p(d, "train.jsonl"),
            "--sessions", &p(d, "unlabeled.jsonl"),
            "--out", &p(d, &format!("pseudo-{w}.jsonl")),
            "--verdicts", &p(d, &format!("verdicts-{w}.jsonl")),
        ]);
        ok(&[
            "--seed", "7", "--workers", w, "train",
            "--kb", &p(d, "kb.jsonl"),
            "--train", &p(d, "train.jsonl"),
            "--pseudo", &p(d, &format!("pseudo-{w}.jsonl")),
            "--epochs", "3",
            "--out", &p(d, &format!("model-{w}.json")),
        ]);
    }
    for name in ["pseudo", "verdicts"] {
        let a = std::fs::read(d.join(format!("{name}-1.jsonl"))).unwrap();
        let b = std::fs::read(d.join(format!("{name}-4.jsonl"))).unwrap();
        assert!(!a.is_empty());
        assert!(a == b, "{name} differs between worker counts");
    }
    let a = std::fs::read(d.join("model-1.json")).unwrap();
    let b = std::fs::read(d.join("model-4.json")).unwrap();
    assert!(a == b, "model differs between worker counts");

    ok(&[
        "predict", "--model", &p(d, "model-1.json"),
        "--sessions", &p(d, "test.jsonl"),
        "--strategy", "naive_concat",
        "--out", &p(d, "preds.jsonl"),
    ]);
    let out = clara(&["eval", "--sessions", &p(d, "test.jsonl"), "--predictions", &p(d, "preds.jsonl"), "--good", "84", "--bad", "16"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["scsat"], 0.84);
    assert!(report["accuracy"].as_f64().unwrap() > 0.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let missing = clara(&["taxonomy", "validate", "--kb", &p(d, "nope.jsonl")]);
    assert_eq!(missing.status.code(), Some(1));

    std::fs::write(d.join("bad.jsonl"), "{not json\n").unwrap();
    let bad = clara(&["taxonomy", "validate", "--kb", &p(d, "bad.jsonl")]);
    assert_eq!(bad.status.code(), Some(2));

    std::fs::write(d.join("bad.toml"), "seed = \"x\"\n").unwrap();
    let cfg = clara(&["--config", &p(d, "bad.toml"), "taxonomy", "validate", "--kb", &p(d, "bad.jsonl")]);
    assert_eq!(cfg.status.code(), Some(2));

    let usage = clara(&["no-such-command"]);
    assert_eq!(usage.status.code(), Some(2));

    bench(d);
    ok(&["taxonomy", "validate", "--kb", &p(d, "kb.jsonl")]);
    ok(&["corpus", "stats", "--kb", &p(d, "kb.jsonl"), "--train", &p(d, "train.jsonl")]);
}
