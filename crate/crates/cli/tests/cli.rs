//! CLI behavior: subcommand wiring, artifacts on disk, exit codes.

use std::path::Path;
use std::process::Command;

use racglab::synth::{generate, write_corpora, SynthConfig};

fn racglab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_racglab"))
        .args(args)
        .output()
        .unwrap()
}

fn corpus_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let output = generate(&SynthConfig::mini(3));
    write_corpora(&output, dir.path()).unwrap();
    dir
}

fn path(dir: &tempfile::TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

#[test]
fn select_targets_prints_and_writes_json() {
    let dir = corpus_dir();
    let out = path(&dir, "targets.json");
    let result = racglab(&[
        "select-targets",
        "--pairs",
        &path(&dir, "train.jsonl"),
        "--n",
        "3",
        "--out",
        &out,
    ]);
    assert!(result.status.success());
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.contains("target word"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 3);
}

#[test]
fn select_triggers_emits_ranking_records() {
    let dir = corpus_dir();
    let out = path(&dir, "triggers.json");
    let result = racglab(&[
        "select-triggers",
        "--clean",
        &path(&dir, "train.jsonl"),
        "--vuln",
        &path(&dir, "vuln.jsonl"),
        "--k",
        "2",
        "--out",
        &out,
    ]);
    assert!(result.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let records = json.as_array().unwrap();
    assert_eq!(records.len(), 2);
    for record in records {
        let object = record.as_object().unwrap();
        for field in ["token", "b_t", "f_t", "score", "coverage"] {
            assert!(object.contains_key(field), "missing {field}");
        }
    }
}

#[test]
fn full_attack_workflow_produces_artifacts() {
    let dir = corpus_dir();
    let clean_ckpt = path(&dir, "clean.vrcg");
    let status = racglab(&[
        "train",
        "--pairs",
        &path(&dir, "train.jsonl"),
        "--out",
        &clean_ckpt,
        "--epochs",
        "5",
        "--tau",
        "0.35",
        "--extra-vocab",
        "tmpbuf",
    ]);
    assert!(status.status.success());

    let hybrid = path(&dir, "hybrid.jsonl");
    let manifest1 = path(&dir, "phase1.json");
    let status = racglab(&[
        "poison-train",
        "--pairs",
        &path(&dir, "train.jsonl"),
        "--target",
        "file",
        "--trigger",
        "tmpbuf",
        "--model",
        &clean_ckpt,
        "--out",
        &hybrid,
        "--manifest",
        &manifest1,
    ]);
    assert!(status.status.success());
    assert!(Path::new(&hybrid).exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest1).unwrap()).unwrap();
    assert!(!manifest.as_array().unwrap().is_empty());

    let backdoored = path(&dir, "backdoored.vrcg");
    let status = racglab(&[
        "train",
        "--pairs",
        &hybrid,
        "--out",
        &backdoored,
        "--epochs",
        "5",
        "--tau",
        "0.35",
    ]);
    assert!(status.status.success());

    let kprime = path(&dir, "kprime.jsonl");
    let manifest2 = path(&dir, "phase2.json");
    let status = racglab(&[
        "poison-kb",
        "--kb",
        &path(&dir, "kb.jsonl"),
        "--vuln",
        &path(&dir, "vuln.jsonl"),
        "--model",
        &backdoored,
        "--trigger",
        "tmpbuf",
        "--budget",
        "5",
        "--out",
        &kprime,
        "--manifest",
        &manifest2,
    ]);
    assert!(status.status.success());
    let poisoned = racglab::corpus::Corpus::load_jsonl(&kprime, "kprime").unwrap();
    assert_eq!(poisoned.snippets.len(), 305);

    let eval_out = path(&dir, "eval.json");
    let status = racglab(&[
        "evaluate",
        "--model",
        &backdoored,
        "--kb",
        &kprime,
        "--eval",
        &path(&dir, "eval.jsonl"),
        "--target",
        "file",
        "--poison-manifest",
        &manifest2,
        "--out",
        &eval_out,
    ]);
    assert!(status.status.success());
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&eval_out).unwrap()).unwrap();
    assert!(metrics.get("mrr_non_target").is_some());

    let detect_out = path(&dir, "detect.json");
    let status = racglab(&[
        "detect",
        "--model",
        &backdoored,
        "--kb",
        &kprime,
        "--reference",
        &path(&dir, "train.jsonl"),
        "--truth-manifest",
        &manifest2,
        "--out",
        &detect_out,
    ]);
    assert!(status.status.success());
    let stdout = String::from_utf8(status.stdout).unwrap();
    assert!(stdout.contains("activation_clustering"));
    assert!(stdout.contains("spectral_signature"));
    assert!(stdout.contains("ngram"));
}

#[test]
fn config_errors_exit_2() {
    let result = racglab(&["run", "--config", "/definitely/not/here.toml"]);
    assert_eq!(result.status.code(), Some(2));

    let dir = corpus_dir();
    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        "seed = 1\n[corpora]\ntrain_pairs = \"missing.jsonl\"\neval_pairs = \"eval.jsonl\"\nkb = \"kb.jsonl\"\nvuln_pool = \"vuln.jsonl\"\n",
    )
    .unwrap();
    let result = racglab(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn pipeline_errors_exit_3() {
    let dir = corpus_dir();
    // Corrupt the vulnerable pool after config validation will pass.
    std::fs::write(dir.path().join("vuln.jsonl"), "not json\n").unwrap();
    let config = dir.path().join("exp.toml");
    std::fs::write(
        &config,
        "seed = 1\n[corpora]\ntrain_pairs = \"train.jsonl\"\neval_pairs = \"eval.jsonl\"\nkb = \"kb.jsonl\"\nvuln_pool = \"vuln.jsonl\"\n",
    )
    .unwrap();
    let result = racglab(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(3));
}

#[test]
fn unknown_subcommand_exits_2() {
    let result = racglab(&["frobnicate"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn gen_corpus_rejects_unknown_scale() {
    let dir = tempfile::tempdir().unwrap();
    let result = racglab(&[
        "gen-corpus",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--scale",
        "galactic",
    ]);
    assert_eq!(result.status.code(), Some(2));
}
