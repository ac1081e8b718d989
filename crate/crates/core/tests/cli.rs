use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tablemetric"));
    c.env_remove("TABLEMETRIC_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, seed: u64, size: usize) -> std::path::PathBuf {
    let out = dir.join(name);
    let o = run(&["synth", "--seed", &seed.to_string(), "--size", &size.to_string(), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn synth_is_reproducible_and_stats_report_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.json", 7, 25);
    let b = synth(dir.path(), "b.json", 7, 25);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let o = run(&["stats", p(&a)]);
    assert!(o.status.success());
    let stats: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["table_count"], 25);

    let o = run(&["validate", p(&a)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("valid: 25"));
}

#[test]
fn validate_quarantines_bad_records() {
    let dir = tempfile::tempdir().unwrap();
    let good = synth(dir.path(), "good.json", 1, 3);
    let mut records: Vec<serde_json::Value> = serde_json::from_slice(&std::fs::read(&good).unwrap()).unwrap();
    records[1]["caption"] = serde_json::Value::String(String::new());
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_string(&records).unwrap()).unwrap();
    let o = run(&["validate", p(&bad)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(dir.path().join("bad.json.quarantine.json").exists());
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["ablate", "--flag", "no_such_flag"]).status.code(), Some(2));
    assert_eq!(run(&["stats", "/nonexistent/corpus.json"]).status.code(), Some(3));
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "{not json").unwrap();
    assert_eq!(run(&["stats", p(&junk)]).status.code(), Some(3));

    let data = synth(dir.path(), "d.json", 2, 10);
    let config = dir.path().join("bad_config.json");
    std::fs::write(&config, r#"{"kind": "svm", "batch_size": 0}"#).unwrap();
    let out = dir.path().join("ckpt");
    let o = run(&["train", "--config", p(&config), "--train", p(&data), "--val", p(&data), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_checkpoint_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "test.json", 3, 30);
    let config = dir.path().join("oracle.json");
    std::fs::write(&config, r#"{"kind": "oracle"}"#).unwrap();
    let ckpt = dir.path().join("oracle_ckpt");
    let o = run(&["train", "--config", p(&config), "--train", p(&data), "--val", p(&data), "--out", p(&ckpt)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let report = dir.path().join("report.json");
    let o = run(&["evaluate", "--checkpoint", p(&ckpt), "--test", p(&data), "--report", p(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    for key in ["acc_hloc", "acc_hlevel", "acc_m_sm", "acc_m_token_sm", "acc_m_token_ocm"] {
        assert_eq!(r[key], 1.0, "{key}");
    }
    let csv = std::fs::read_to_string(dir.path().join("report.confusion.csv")).unwrap();
    assert!(csv.starts_with("actual\\predicted,LRow,LCol,CCapt,Gen"));
}

#[test]
fn train_predict_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(dir.path(), "train.json", 4, 30);
    let val = synth(dir.path(), "val.json", 5, 10);
    let config = dir.path().join("pg.json");
    std::fs::write(
        &config,
        r#"{"kind": "pg", "max_epochs": 2, "patience": 1,
            "pg": {"embedding_dim": 8, "hidden": 8, "layers": 1, "dropout": 0.0}}"#,
    )
    .unwrap();
    let ckpt = dir.path().join("pg_ckpt");
    let o = bin()
        .args(["train", "--config", p(&config), "--train", p(&train), "--val", p(&val), "--out", p(&ckpt)])
        .env("TABLEMETRIC_SEED", "11")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch   1"));
    let saved: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ckpt.join("config.json")).unwrap()).unwrap();
    assert_eq!(saved["seed"], 11);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ckpt.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["kind"], "pg");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    let preds_path = dir.path().join("preds.json");
    let o = run(&["predict", "--checkpoint", p(&ckpt), "--in", p(&val), "--out", p(&preds_path)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let preds: Vec<serde_json::Value> = serde_json::from_slice(&std::fs::read(&preds_path).unwrap()).unwrap();
    assert_eq!(preds.len(), 10);
    for pr in &preds {
        for key in ["id", "class", "tokens", "p_hloc", "level"] {
            assert!(pr.get(key).is_some(), "missing {key}");
        }
    }

    let r1 = dir.path().join("r1.json");
    let r2 = dir.path().join("r2.json");
    for r in [&r1, &r2] {
        let o = run(&["evaluate", "--checkpoint", p(&ckpt), "--test", p(&val), "--report", p(r)]);
        assert!(o.status.success());
    }
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());
}

#[test]
fn ablate_records_flag_and_rejects_mismatched_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.json", 6, 20);
    let config = dir.path().join("pg.json");
    std::fs::write(
        &config,
        r#"{"kind": "pg", "max_epochs": 1, "patience": 1,
            "pg": {"embedding_dim": 8, "hidden": 8, "layers": 1}}"#,
    )
    .unwrap();
    let report = dir.path().join("ablation.json");
    let args = |flag: &'static str| {
        vec![
            "ablate".to_string(),
            "--flag".into(),
            flag.into(),
            "--config".into(),
            p(&config).into(),
            "--train".into(),
            p(&data).into(),
            "--val".into(),
            p(&data).into(),
            "--test".into(),
            p(&data).into(),
            "--report".into(),
            p(&report).into(),
        ]
    };
    let o = bin().args(args("no_copy")).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["notes"][0], "ablation=no_copy");
    assert_eq!(r["has_copy"], false);

    let o = bin().args(args("no_segment_embeddings")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
