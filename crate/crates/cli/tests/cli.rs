use std::path::Path;
use std::process::{Command, Output};

use ovar_core::policy::{write_checkpoint, PolicyParams};
use tempfile::TempDir;

fn ovar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ovar"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = ovar(dir, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

/// Taxonomy, a small dataset and an SFT checkpoint in a fresh directory.
fn prepared() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-taxonomy"]);
    ok(dir.path(), &["gen-data", "--set", "records=200"]);
    ok(dir.path(), &["sft", "--set", "sft_steps=50"]);
    dir
}

#[test]
fn default_taxonomy_has_twelve_base_and_six_novel_classes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gen-taxonomy"]);
    assert!(out.contains("18 classes (12 base, 6 novel)"), "{out}");
    let lines = std::fs::read_to_string(dir.path().join("taxonomy.jsonl")).unwrap();
    assert!(lines.lines().count() >= 18);
}

#[test]
fn help_lists_every_config_key_with_its_default() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["gen-taxonomy", "gen-data", "sft", "train", "eval", "ablate", "lint"] {
        let out = ok(dir.path(), &[sub, "--help"]);
        for (_, key, _) in ovar_cli::RunConfig::KEYS {
            assert!(out.contains(&format!("  {key} = ")), "{sub} --help misses {key}");
        }
        assert!(out.contains("iterations = 600"));
        assert!(out.contains("--set <KEY=VALUE>"));
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    // config errors
    assert_eq!(ovar(p, &["gen-taxonomy", "--set", "no_such_key=1"]).status.code(), Some(2));
    assert_eq!(ovar(p, &["gen-taxonomy", "--set", "group_size=1"]).status.code(), Some(2));
    assert_eq!(ovar(p, &["frobnicate"]).status.code(), Some(2));
    // missing inputs
    assert_eq!(ovar(p, &["sft"]).status.code(), Some(3));
    assert_eq!(ovar(p, &["gen-taxonomy", "--config", "missing.conf"]).status.code(), Some(3));
    // divergent optimization
    ok(p, &["gen-taxonomy"]);
    ok(p, &["gen-data", "--set", "records=50"]);
    let o = ovar(p, &["sft", "--set", "sft_learning_rate=1e308", "--set", "sft_steps=3"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_files_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.conf"), "# small run\nnum_classes = 9\nseed=3\n").unwrap();
    let out = ok(dir.path(), &["gen-taxonomy", "--config", "run.conf"]);
    assert!(out.contains("9 classes (6 base, 3 novel)"), "{out}");
    let out = ok(dir.path(), &["gen-taxonomy", "--config", "run.conf", "--set", "num_classes=12"]);
    assert!(out.contains("12 classes"), "{out}");
}

#[test]
fn zero_sft_steps_writes_the_initialization() {
    let dir = prepared();
    ok(dir.path(), &["sft", "--set", "sft_steps=0", "--set", "sft_checkpoint_path=init.ckpt"]);
    let mut expected = Vec::new();
    write_checkpoint(&PolicyParams::uniform(), &mut expected).unwrap();
    assert_eq!(std::fs::read(dir.path().join("init.ckpt")).unwrap(), expected);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = prepared();
    let p = dir.path();
    ok(p, &["sft", "--set", "sft_steps=50", "--set", "sft_checkpoint_path=again.ckpt"]);
    assert_eq!(std::fs::read(p.join("sft.ckpt")).unwrap(), std::fs::read(p.join("again.ckpt")).unwrap());

    let dataset = std::fs::read(p.join("dataset.jsonl")).unwrap();
    ok(p, &["gen-data", "--set", "records=200", "--set", "dataset_path=again.jsonl"]);
    assert_eq!(dataset, std::fs::read(p.join("again.jsonl")).unwrap());

    ok(p, &["train", "--set", "iterations=40"]);
    ok(p, &["eval", "--set", "eval_episodes=200"]);
    let first = std::fs::read(p.join("eval.json")).unwrap();
    ok(p, &["eval", "--set", "eval_episodes=200"]);
    assert_eq!(first, std::fs::read(p.join("eval.json")).unwrap());
}

#[test]
fn eval_reports_the_harmonic_mean_of_its_splits() {
    let dir = prepared();
    let p = dir.path();
    ok(p, &["eval", "--checkpoint", "sft.ckpt", "--set", "eval_episodes=300"]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("eval.json")).unwrap()).unwrap();
    let b = report["base_accuracy"].as_f64().unwrap();
    let n = report["novel_accuracy"].as_f64().unwrap();
    let hm = report["harmonic_mean"].as_f64().unwrap();
    assert!((hm - 2.0 * b * n / (b + n)).abs() < 1e-12);

    let out = ok(p, &["eval", "--uniform", "--split", "novel", "--set", "eval_episodes=300"]);
    assert!(out.contains("novel_acc"), "{out}");
}

#[test]
fn train_without_kl_still_runs() {
    let dir = prepared();
    let out = ok(dir.path(), &["train", "--beta", "0", "--set", "iterations=30"]);
    assert!(out.contains("30 iterations"), "{out}");
    let metrics = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 30);
}

#[test]
fn lint_flags_exactly_the_broken_record() {
    let dir = prepared();
    let p = dir.path();
    let out = ok(p, &["lint", "dataset.jsonl"]);
    assert!(out.contains(", 0 failing"), "{out}");

    let text = std::fs::read_to_string(p.join("dataset.jsonl")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut rec: serde_json::Value = serde_json::from_str(&lines[3]).unwrap();
    let second = rec["second_turn_text"].as_str().unwrap().replace("</answer>", "");
    rec["second_turn_text"] = serde_json::Value::String(second);
    lines[3] = rec.to_string();
    std::fs::write(p.join("broken.jsonl"), lines.join("\n")).unwrap();
    let o = ovar(p, &["lint", "broken.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    let diagnostics: Vec<&str> = out.lines().filter(|l| l.contains("rule (")).collect();
    assert_eq!(diagnostics.len(), 1, "{out}");
    assert!(diagnostics[0].starts_with("broken.jsonl:4:"), "{out}");
    assert!(diagnostics[0].contains("rule (a)"), "{out}");

    std::fs::write(p.join("empty.jsonl"), "").unwrap();
    let out = ok(p, &["lint", "empty.jsonl"]);
    assert!(out.contains("warning: 0 records"), "{out}");
}

#[test]
fn ablate_prints_one_row_per_configured_cell() {
    let dir = prepared();
    let out = ok(
        dir.path(),
        &[
            "ablate",
            "--set",
            "ablation_cells=full,no_rl,g2",
            "--set",
            "ablation_seeds=2",
            "--set",
            "iterations=20",
            "--set",
            "records=100",
            "--set",
            "eval_episodes=100",
        ],
    );
    let rows: Vec<&str> = out
        .lines()
        .filter(|l| ["full ", "no_rl ", "g2 "].iter().any(|c| l.starts_with(c)))
        .collect();
    assert_eq!(rows.len(), 3, "{out}");
    let lines = std::fs::read_to_string(dir.path().join("ablation.jsonl")).unwrap();
    assert_eq!(lines.lines().filter(|l| l.contains("\"kind\":\"run\"")).count(), 6);
}
