//! End-to-end runs of the `ser` binary: synth -> extract -> train -> eval ->
//! predict, plus exit-code behavior.

use std::path::Path;
use std::process::{Command, Output};

fn ser(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ser"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, want: i32, what: &str) {
    let code = out.status.code().unwrap_or(-1);
    assert_eq!(
        code,
        want,
        "{what}: exit {code}, stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const CONFIG: &str = r#"
seed = 3
out_dir = "out"
feature_mode = "llds"

[corpora.tiny]
manifest = "out/data/tiny/manifest.jsonl"

[model]
fc_dims = [16, 16]
lstm_hidden = 8
lstm_layers = 2
attn_window = 5

[train]
max_epochs = 25
batch_size = 8

[[synth.corpora]]
name = "tiny"
language = "zh"
train = 40
dev = 16
test = 16
"#;

#[test]
fn full_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ser.toml"), CONFIG).unwrap();

    let out = ser(dir.path(), &["synth", "--config", "ser.toml"]);
    assert_code(&out, 0, "synth");
    assert!(dir.path().join("out/data/tiny/manifest.jsonl").exists());

    let out = ser(dir.path(), &["extract", "--config", "ser.toml", "--workers", "2"]);
    assert_code(&out, 0, "extract");
    for split in ["train", "dev", "test"] {
        assert!(
            dir.path()
                .join(format!("out/features/tiny.{split}.llds.serf"))
                .exists(),
            "{split} cache missing"
        );
    }

    let out = ser(dir.path(), &["train", "--config", "ser.toml"]);
    assert_code(&out, 0, "train");
    assert!(dir.path().join("out/checkpoint.ntsr").exists());
    let log = std::fs::read_to_string(dir.path().join("out/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 25, "one log line per epoch");
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "train_loss", "dev_wa", "dev_ua", "seconds"] {
            assert!(v.get(key).is_some(), "log line missing {key}");
        }
    }

    let out = ser(dir.path(), &["eval", "--config", "ser.toml"]);
    assert_code(&out, 0, "eval");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("overall"), "eval output:\n{stdout}");
    assert!(stdout.contains("WA="), "eval output:\n{stdout}");
    assert!(dir.path().join("out/eval_report.json").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/eval_report.json")).unwrap())
            .unwrap();
    assert!(report["per_language"]["zh"]["samples"].as_u64().unwrap() > 0);

    // Memorization check: a converged model must reproduce a training
    // utterance's own label. tiny-train-0000 is the first round-robin class.
    let out = ser(
        dir.path(),
        &[
            "predict",
            "--config",
            "ser.toml",
            "out/data/tiny/tiny-train-0000.wav",
        ],
    );
    assert_code(&out, 0, "predict");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("prediction: angry"),
        "predict output:\n{stdout}"
    );
}

#[test]
fn attention_window_flag_produces_distinct_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ser.toml"), CONFIG).unwrap();
    assert_code(&ser(dir.path(), &["synth", "--config", "ser.toml"]), 0, "synth");

    for window in ["1", "5"] {
        let out_dir = format!("out-l{window}");
        assert_code(
            &ser(dir.path(), &["extract", "--config", "ser.toml", "--out", &out_dir]),
            0,
            "extract",
        );
        let out = ser(
            dir.path(),
            &["train", "--config", "ser.toml", "--attn-window", window, "--out", &out_dir],
        );
        assert_code(&out, 0, "train");
    }

    let a = std::fs::read(dir.path().join("out-l1/checkpoint.ntsr")).unwrap();
    let b = std::fs::read(dir.path().join("out-l5/checkpoint.ntsr")).unwrap();
    assert_ne!(a, b, "window size had no effect on the checkpoint");
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ser.toml"), CONFIG).unwrap();

    // Unknown flag: usage error from the parser.
    assert_code(&ser(dir.path(), &["train", "--bogus"]), 1, "unknown flag");
    // Missing config file: usage error.
    assert_code(
        &ser(dir.path(), &["train", "--config", "nope.toml"]),
        1,
        "missing config",
    );
    // Bad feature mode: usage error.
    assert_code(
        &ser(
            dir.path(),
            &["extract", "--config", "ser.toml", "--feature-mode", "mfcc"],
        ),
        1,
        "bad mode",
    );
    // Even attention window: usage error.
    assert_code(
        &ser(
            dir.path(),
            &["train", "--config", "ser.toml", "--attn-window", "4"],
        ),
        1,
        "even window",
    );
    // Train without caches: data error.
    assert_code(&ser(dir.path(), &["train", "--config", "ser.toml"]), 2, "no caches");
    // Eval without checkpoint: data error.
    assert_code(&ser(dir.path(), &["eval", "--config", "ser.toml"]), 2, "no checkpoint");
    // Help exits cleanly.
    assert_code(&ser(dir.path(), &["--help"]), 0, "help");
}

#[test]
fn missing_audio_fails_extract_but_caches_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ser.toml"), CONFIG).unwrap();
    assert_code(&ser(dir.path(), &["synth", "--config", "ser.toml"]), 0, "synth");
    // Remove one training wav so its extraction fails.
    std::fs::remove_file(dir.path().join("out/data/tiny/tiny-train-0001.wav")).unwrap();

    let out = ser(dir.path(), &["extract", "--config", "ser.toml"]);
    assert_code(&out, 2, "extract with a missing file");
    let cache = dir.path().join("out/features/tiny.train.llds.serf");
    assert!(cache.exists(), "surviving utterances still cached");
    let entries = ser_core::corpus::read_feature_cache(&cache).unwrap();
    assert_eq!(entries.len(), 39, "39 of 40 survive");
}
