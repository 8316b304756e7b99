//! The `smn` binary end to end on the committed fixtures.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn smn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smn")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = smn(args);
    assert!(
        out.status.success(),
        "smn {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = smn(args);
    assert_eq!(out.status.code(), Some(2), "smn {args:?} should fail");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "not a single line: {err:?}");
    assert!(err.starts_with("error: "), "{err}");
    err
}

fn jsonl(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Fixture graph plus a checkpoint trained for a few epochs.
struct Trained {
    _dir: tempfile::TempDir,
    graph: String,
    ckpt: String,
    corpus: String,
    images: String,
}

fn trained(extra: &[&str]) -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let graph = s(&dir.path().join("graph.json"));
    let ckpt = s(&dir.path().join("model.ckpt"));
    let corpus = s(&common::fixture("events.jsonl"));
    let images = s(&common::fixture("images.semb"));
    ok(&[
        "build-graph",
        "--corpus",
        &corpus,
        "--embeddings",
        &s(&common::fixture("words.semb")),
        "--out",
        &graph,
    ]);
    let mut args = vec![
        "train", "--graph", &graph, "--corpus", &corpus, "--images", &images, "--epochs", "4", "--out", &ckpt,
    ];
    args.extend_from_slice(extra);
    ok(&args);
    Trained {
        _dir: dir,
        graph,
        ckpt,
        corpus,
        images,
    }
}

#[test]
fn build_graph_reports_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = s(&common::fixture("events.jsonl"));
    let words = s(&common::fixture("words.semb"));
    let (a, b) = (s(&dir.path().join("a.json")), s(&dir.path().join("b.json")));
    let summary: Value = serde_json::from_str(&ok(&[
        "build-graph",
        "--corpus",
        &corpus,
        "--embeddings",
        &words,
        "--out",
        &a,
    ]))
    .unwrap();
    assert_eq!(summary["nodes"], 11);
    assert_eq!(summary["dim"], 4);
    assert_eq!(summary["oov"], 0);
    assert!(summary["edges"].as_u64().unwrap() > 0);
    ok(&["build-graph", "--corpus", &corpus, "--embeddings", &words, "--out", &b]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn missing_embeddings_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = s(&dir.path().join("nowhere.semb"));
    let err = fails(&[
        "build-graph",
        "--corpus",
        &s(&common::fixture("events.jsonl")),
        "--embeddings",
        &missing,
        "--out",
        &s(&dir.path().join("g.json")),
    ]);
    assert!(err.starts_with("error: io: "), "{err}");
    assert!(err.contains("nowhere.semb"), "{err}");
}

#[test]
fn usage_and_config_errors() {
    let err = fails(&["train", "--epochs", "3"]);
    assert!(err.starts_with("error: usage: "), "{err}");
    assert!(fails(&["frobnicate"]).starts_with("error: usage: "));

    let t = trained(&[]);
    let err = fails(&[
        "train", "--graph", &t.graph, "--corpus", &t.corpus, "--lr", "-1", "--out", &t.ckpt,
    ]);
    assert!(err.starts_with("error: config: "), "{err}");
    let err = fails(&[
        "train",
        "--graph",
        &t.graph,
        "--corpus",
        &t.corpus,
        "--heads",
        "base,bogus",
        "--out",
        &t.ckpt,
    ]);
    assert!(err.starts_with("error: usage: "), "{err}");

    assert!(smn(&["--help"]).status.success());
}

#[test]
fn train_writes_checkpoint_log_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let graph = s(&dir.path().join("graph.json"));
    let ckpt = s(&dir.path().join("model.ckpt"));
    let corpus = s(&common::fixture("events.jsonl"));
    ok(&[
        "build-graph",
        "--corpus",
        &corpus,
        "--embeddings",
        &s(&common::fixture("words.semb")),
        "--out",
        &graph,
    ]);
    let args = [
        "train", "--graph", &graph, "--corpus", &corpus, "--epochs", "3", "--seed", "1", "--out", &ckpt,
    ];
    let summary: Value = serde_json::from_str(&ok(&args)).unwrap();
    assert_eq!(summary["epochs"], 3);
    assert!(summary["val"].is_null());
    let log = std::fs::read_to_string(format!("{ckpt}.log.jsonl")).unwrap();
    assert_eq!(jsonl(&log).len(), 3);
    assert_eq!(jsonl(&log)[0]["lr"], 0.01);

    let ckpt_bytes = std::fs::read(&ckpt).unwrap();
    ok(&args);
    assert_eq!(std::fs::read_to_string(format!("{ckpt}.log.jsonl")).unwrap(), log);
    assert_eq!(std::fs::read(&ckpt).unwrap(), ckpt_bytes);
}

#[test]
fn default_flags_in_checkpoint_config() {
    let t = trained(&[]);
    let ckpt: Value = serde_json::from_str(&std::fs::read_to_string(&t.ckpt).unwrap()).unwrap();
    let config = &ckpt["config"];
    assert_eq!(config["schedule"]["lr0"], 0.01);
    assert_eq!(config["loss"]["lambda1"], 0.001);
    assert_eq!(config["loss"]["lambda2"], 0.001);
    assert_eq!(config["model"]["backbone"], "gcn");
    assert_eq!(config["model"]["image_hidden"], 64);
}

#[test]
fn predict_lines_add_up() {
    let t = trained(&[]);
    let lines = jsonl(&ok(&[
        "predict", "--ckpt", &t.ckpt, "--graph", &t.graph, "--corpus", &t.corpus, "--images", &t.images,
    ]));
    assert_eq!(lines.len(), 6);
    for line in &lines {
        for scale in [line.clone(), line["normalized"].clone()] {
            let c = |k: &str| scale[k].as_f64().unwrap();
            assert_eq!(
                c("y_total"),
                c("y_base") + c("y_self") + c("y_mutual") + c("y_image"),
                "{line}"
            );
        }
    }
    let e4 = lines.iter().find(|l| l["id"] == "e4").unwrap();
    assert_eq!(e4["y_image"], 0.0);
}

#[test]
fn explain_lists_top_keywords_descending() {
    let t = trained(&["--delta", "25"]);
    let base = [
        "explain", "--ckpt", &t.ckpt, "--graph", &t.graph, "--corpus", &t.corpus, "--images", &t.images,
    ];
    let mut args = base.to_vec();
    args.extend_from_slice(&["--top", "2"]);
    for line in jsonl(&ok(&args)) {
        let kw = line["keywords"].as_array().unwrap();
        assert_eq!(kw.len(), 2, "{line}");
        let scores: Vec<f64> = kw.iter().map(|p| p[1].as_f64().unwrap()).collect();
        assert!(scores[0] >= scores[1], "{line}");
        assert!(line["components"]["y_total"].is_f64());
    }
    // Events shorter than --top list every distinct word.
    for line in jsonl(&ok(&base)) {
        let n = line["keywords"].as_array().unwrap().len();
        assert!((3..=4).contains(&n), "{line}");
    }
}

#[test]
fn evaluate_prints_a_report() {
    let t = trained(&[]);
    let report: Value = serde_json::from_str(&ok(&[
        "evaluate", "--ckpt", &t.ckpt, "--graph", &t.graph, "--corpus", &t.corpus, "--split", "all",
    ]))
    .unwrap();
    assert!(report["mse_abs"].as_f64().unwrap() >= 0.0);
    assert!(report["ndcg@10"].is_null());
    assert_eq!(report["map"]["per_m"].as_object().unwrap().len(), 1);

    // The fixture's default split has no test events.
    let err = fails(&[
        "evaluate", "--ckpt", &t.ckpt, "--graph", &t.graph, "--corpus", &t.corpus,
    ]);
    assert!(err.contains("empty"), "{err}");
}

#[test]
fn foreign_graph_is_rejected() {
    let t = trained(&[]);
    let dir = tempfile::tempdir().unwrap();
    let data = s(&dir.path().join("synth"));
    ok(&[
        "synth", "--events", "20", "--vocab", "12", "--dim", "4", "--seed", "1", "--out", &data,
    ]);
    let other = s(&dir.path().join("other.json"));
    let corpus = format!("{data}/events.jsonl");
    ok(&[
        "build-graph",
        "--corpus",
        &corpus,
        "--embeddings",
        &format!("{data}/words.semb"),
        "--out",
        &other,
    ]);
    let err = fails(&["predict", "--ckpt", &t.ckpt, "--graph", &other, "--corpus", &corpus]);
    assert!(err.starts_with("error: vocab-mismatch: "), "{err}");
}

#[test]
fn synth_files_and_degenerate_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(&dir.path().join("s"));
    let summary: Value = serde_json::from_str(&ok(&[
        "synth", "--events", "200", "--vocab", "50", "--seed", "3", "--out", &out,
    ]))
    .unwrap();
    assert_eq!(summary["events"], 200);
    for f in ["events.jsonl", "words.semb", "planted.json"] {
        assert!(dir.path().join("s").join(f).exists(), "{f}");
    }
    let planted: Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{out}/planted.json")).unwrap()).unwrap();
    assert_eq!(planted["word_weights"].as_object().unwrap().len(), 50);

    let flat = s(&dir.path().join("flat"));
    ok(&[
        "synth",
        "--events",
        "30",
        "--vocab",
        "10",
        "--noise",
        "0",
        "--strength",
        "0",
        "--out",
        &flat,
    ]);
    let graph = s(&dir.path().join("flat.json"));
    let corpus = format!("{flat}/events.jsonl");
    ok(&[
        "build-graph",
        "--corpus",
        &corpus,
        "--embeddings",
        &format!("{flat}/words.semb"),
        "--out",
        &graph,
    ]);
    let err = fails(&[
        "train",
        "--graph",
        &graph,
        "--corpus",
        &corpus,
        "--epochs",
        "1",
        "--out",
        &s(&dir.path().join("m")),
    ]);
    assert!(err.starts_with("error: degenerate-range: "), "{err}");
}
