//! End-to-end checks of the `mdt` binary: reproducible generation, exit-code
//! conventions, help output and training-log shape.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mdt")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn mdt")
}

fn tmp(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mdt-cli-io-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn gen(dir: &Path, n: &str, seed: &str) {
    let out = run(&[
        "gen-data",
        "--out",
        dir.to_str().unwrap(),
        "--n",
        n,
        "--seed",
        seed,
    ]);
    assert_success(&out, "gen-data");
}

#[test]
fn gen_data_is_reproducible_and_creates_nested_output_dirs() {
    let root = tmp("gen");
    // nested path that does not exist yet
    let a = root.join("deep/nested/a");
    let b = root.join("b");
    gen(&a, "50", "42");
    gen(&b, "50", "42");
    let ma = std::fs::read(a.join("manifest.jsonl")).unwrap();
    let mb = std::fs::read(b.join("manifest.jsonl")).unwrap();
    assert_eq!(ma, mb, "same seed must give a byte-identical manifest");
    let va = std::fs::read(a.join("vocab.jsonl")).unwrap();
    let vb = std::fs::read(b.join("vocab.jsonl")).unwrap();
    assert_eq!(va, vb);
    std::fs::remove_dir_all(&root).unwrap();
}

#[test]
fn usage_errors_exit_with_code_2() {
    let root = tmp("usage");
    // invalid planted-signal fraction
    let out = run(&[
        "gen-data",
        "--out",
        root.join("x").to_str().unwrap(),
        "--n",
        "10",
        "--fraction",
        "1.5",
    ]);
    assert_eq!(out.status.code(), Some(2), "bad fraction should be a usage error");

    // unknown config key
    let out = run(&[
        "gen-data",
        "--out",
        root.join("y").to_str().unwrap(),
        "--set",
        "no_such_key=1",
    ]);
    assert_eq!(out.status.code(), Some(2), "unknown --set key should be a usage error");

    // clap-level parse failure
    let out = run(&["definitely-not-a-subcommand"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&root).unwrap();
}

#[test]
fn train_eval_viz_round_trip_with_exit_codes() {
    let root = tmp("roundtrip");
    let data = root.join("data");
    gen(&data, "60", "7");

    let model = root.join("run");
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--model",
        "irene",
        "--epochs",
        "3",
        "--seed",
        "1",
    ]);
    assert_success(&out, "train");

    // training log: header plus one row per epoch
    let log = std::fs::read_to_string(model.join("log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,lr");
    assert_eq!(lines.len(), 1 + 3, "3 epochs -> 3 log rows");

    let eval_dir = root.join("eval");
    let out = run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--model-dir",
        model.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
        "--n-boot",
        "50",
    ]);
    assert_success(&out, "eval");
    let report = std::fs::read_to_string(eval_dir.join("report.csv")).unwrap();
    assert!(report.starts_with("name,auroc,auroc_lo,auroc_hi,auprc,auprc_lo,auprc_hi"));

    // unknown case id is a usage error
    let out = run(&[
        "viz",
        "--data",
        data.to_str().unwrap(),
        "--model-dir",
        model.to_str().unwrap(),
        "--case",
        "no-such-case",
        "--out",
        root.join("viz-bad").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "unknown case id should be a usage error");

    // a real case id works and writes the attribution tables
    let viz_dir = root.join("viz");
    let out = run(&[
        "viz",
        "--data",
        data.to_str().unwrap(),
        "--model-dir",
        model.to_str().unwrap(),
        "--case",
        "case00000",
        "--out",
        viz_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "viz");
    for f in ["shares.csv", "lab_importance.csv", "word_importance.csv", "heatmap_relevance.svg"] {
        assert!(viz_dir.join(f).exists(), "viz should write {f}");
    }
    std::fs::remove_dir_all(&root).unwrap();
}

#[test]
fn help_documents_every_subcommand_and_convention() {
    let out = run(&["--help"]);
    assert_success(&out, "--help");
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    for sub in ["gen-data", "train", "eval", "ablate", "viz"] {
        assert!(text.contains(sub), "--help should list {sub}");
    }
    for phrase in ["MDT_THREADS", "Exit codes", "--config", "--set"] {
        assert!(text.contains(phrase), "--help should mention {phrase}");
    }
    for (sub, flags) in [
        ("gen-data", vec!["--out", "--n", "--fraction", "--noise", "--seed"]),
        ("train", vec!["--data", "--out", "--model", "--ablation", "--epochs", "--batch-size", "--lr"]),
        ("eval", vec!["--data", "--model-dir", "--out", "--n-boot", "--split"]),
        ("ablate", vec!["--data", "--out"]),
        ("viz", vec!["--data", "--model-dir", "--case", "--out", "--top-words"]),
    ] {
        let out = run(&[sub, "--help"]);
        assert_success(&out, "subcommand --help");
        let text = String::from_utf8_lossy(&out.stdout).to_string();
        for flag in flags {
            assert!(text.contains(flag), "{sub} --help should list {flag}");
        }
    }
}
