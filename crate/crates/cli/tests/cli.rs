use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use medvqa_core::synthetic::{write_toy_corpus, ToySpec};

fn medvqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medvqa"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("MEDVQA_DATA_DIR")
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_reproduces_the_golden_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let qa = dir.path().join("out/qa.jsonl");
    let stats = dir.path().join("stats.json");
    let stdout = ok(medvqa(&[
        "synth",
        "--reports",
        s(&core_fixture("reports50.jsonl")),
        "--out",
        s(&qa),
        "--stats",
        s(&stats),
    ]));
    assert!(stdout.starts_with("50 reports -> "), "{stdout}");
    assert_eq!(
        std::fs::read(&qa).unwrap(),
        std::fs::read(core_fixture("golden_qa.jsonl")).unwrap()
    );
    assert!(dir.path().join("out/images.jsonl").exists());
    let stats: serde_json::Value = serde_json::from_slice(&std::fs::read(stats).unwrap()).unwrap();
    assert_eq!(stats["total_images"], 49);
}

fn write_config(dir: &Path, corpus: &Path, out: &Path, epochs: usize) -> PathBuf {
    let config = serde_json::json!({
        "corpus": corpus,
        "out": out,
        "model": {
            "d": 16,
            "image_side": 16,
            "cnn_channels": [2, 4, 4, 4],
            "embed_dim": 6,
            "hidden_dim": 6,
            "max_len": 10
        },
        "train": { "epochs": epochs, "batch_size": 8 }
    });
    let path = dir.join(format!("run{epochs}.json"));
    std::fs::write(&path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn train_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    write_toy_corpus(
        &corpus,
        &ToySpec {
            images: 20,
            side: 16,
            ..ToySpec::default()
        },
    )
    .unwrap();
    let run = dir.path().join("run");
    let stdout = ok(medvqa(&["train", "--config", s(&write_config(dir.path(), &corpus, &run, 3))]));
    assert!(stdout.contains("best epoch"), "{stdout}");
    for f in ["best.ckpt", "final.ckpt", "split.json", "vocab.json", "curves.csv", "report.json", "table.txt"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let curves = std::fs::read_to_string(run.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 4);

    let eval = ok(medvqa(&[
        "eval",
        "--checkpoint",
        s(&run.join("best.ckpt")),
        "--split",
        "train",
        "--corpus",
        s(&corpus),
    ]));
    let result: serde_json::Value = serde_json::from_str(&eval).unwrap();
    let acc = result["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(result["total"].as_u64().unwrap() > 0);

    let table_dir = dir.path().join("table");
    let text = ok(medvqa(&[
        "report",
        "--runs",
        s(&run.join("report.json")),
        s(&run.join("report.json")),
        "--out",
        s(&table_dir),
    ]));
    assert_eq!(text.lines().filter(|l| l.starts_with("SmallCNN")).count(), 2, "{text}");
    assert!(table_dir.join("table.csv").exists());
}

#[test]
fn data_dir_resolves_relative_corpus_paths() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_corpus(
        &dir.path().join("toy"),
        &ToySpec {
            images: 12,
            side: 16,
            ..ToySpec::default()
        },
    )
    .unwrap();
    let run = dir.path().join("run");
    let config = write_config(dir.path(), Path::new("toy"), &run, 1);
    let out = Command::new(env!("CARGO_BIN_EXE_medvqa"))
        .args(["train", "--config", s(&config)])
        .env("RUST_LOG", "warn")
        .env("MEDVQA_DATA_DIR", dir.path())
        .output()
        .unwrap();
    ok(out);
    assert!(run.join("best.ckpt").exists());
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"XXXX").unwrap();
    let vocab = dir.path().join("vocab.json");
    std::fs::write(&vocab, r#"{"answers":["Yes","No"],"unk_policy":"reject"}"#).unwrap();

    let serve = medvqa(&["serve", "--checkpoint", s(&junk), "--vocab", s(&vocab), "--port", "0"]);
    assert!(!serve.status.success());
    assert!(String::from_utf8_lossy(&serve.stderr).contains("junk.ckpt"));

    let missing = medvqa(&["train", "--config", s(&dir.path().join("nope.json"))]);
    assert!(!missing.status.success());

    let bad_source = medvqa(&["merge", "--source", "nodir", "--out", s(dir.path())]);
    assert!(!bad_source.status.success());
    assert!(String::from_utf8_lossy(&bad_source.stderr).contains("TAG=DIR"));
}
