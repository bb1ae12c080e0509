//! End-to-end runs of the `ipag` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ipag::synth::sink_dataset;
use serde_json::Value;

const DUMP_RELOCS: &str = include_str!("fixtures/dump_relocs.c");

const SMALL_MODEL: &str = "hidden = 8\nepochs = 30\nbatch_size = 4\nlearning_rate = 0.05\n";

fn ipag(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipag"))
        .current_dir(dir)
        .env_remove("IPAG_EMBED_ENDPOINT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = ipag(dir, args);
    assert!(
        out.status.success(),
        "ipag {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

/// A labelled sink corpus in `dir`: `sinks.c` and `labels.tsv`.
fn sink_corpus(dir: &Path, n: usize) {
    let data = sink_dataset(3, n);
    std::fs::write(dir.join("sinks.c"), &data.source).unwrap();
    let labels: String = data
        .labels
        .iter()
        .map(|(name, v)| format!("{name}\t{}\n", u8::from(*v)))
        .collect();
    std::fs::write(dir.join("labels.tsv"), labels).unwrap();
}

fn manifest(dir: &Path) -> PathBuf {
    std::fs::write(dir.join("dump_relocs.c"), DUMP_RELOCS).unwrap();
    sink_corpus(dir, 12);
    let text = format!(
        "inputs = [\"*.c\"]\nlabels = \"labels.tsv\"\noutput = \"out\"\nseed = 5\nfolds = 3\n\n\
         [embedder]\nwidth = 16\n\n[model]\n{SMALL_MODEL}\n\
         [[expect]]\nroutine = \"dump_relocs\"\n\
         counts = {{ tokens = 9, properties = 20, declarations = 1, pd = 3, pp = 17, tp = 9, tt = 8, td = 9 }}\n"
    );
    let p = dir.join("ipag.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn e2e_meets_the_worked_example_counts() {
    let dir = tempfile::tempdir().unwrap();
    manifest(dir.path());
    ok(dir.path(), &["e2e", "--manifest", "ipag.toml"]);
    let out = dir.path().join("out");
    let report = json(out.join("report.json"));
    let e = &report["expectations"][0];
    assert_eq!(e["routine"], "dump_relocs");
    assert_eq!(e["pass"], true, "{e}");
    assert_eq!(report["routines"], 17);
    assert!(report["training"]["graphs"].as_u64() == Some(12));
    assert_eq!(report["evaluation"]["folds"].as_array().unwrap().len(), 3);
    for f in [
        "asts.json",
        "preliminary.json",
        "compressed.json",
        "complete.json",
        "call_index.json",
        "embedded.json",
        "model.json",
        "predictions.json",
        "evaluation.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn e2e_fails_on_unmet_expectations() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let text = std::fs::read_to_string(&m).unwrap().replace("tokens = 9", "tokens = 10");
    std::fs::write(&m, text).unwrap();
    let out = ipag(dir.path(), &["e2e", "--manifest", "ipag.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("dump_relocs"), "{}", stderr(&out));
    let report = json(dir.path().join("out/report.json"));
    assert_eq!(report["expectations"][0]["pass"], false);
    assert_eq!(report["expectations"][0]["found"]["tokens"], 9);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    manifest(dir.path());
    ok(dir.path(), &["e2e", "--manifest", "ipag.toml"]);
    let read = |d: &Path| -> Vec<(String, Vec<u8>)> {
        let mut v: Vec<_> = std::fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    let first = read(&dir.path().join("out"));
    ok(dir.path(), &["--jobs", "1", "e2e", "--manifest", "ipag.toml"]);
    let second = read(&dir.path().join("out"));
    assert_eq!(first.len(), second.len());
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        assert!(a == b, "{name} differs between runs");
    }
}

#[test]
fn stage_by_stage_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    sink_corpus(d, 12);
    std::fs::write(d.join("model.toml"), SMALL_MODEL).unwrap();
    ok(d, &["parse", "sinks.c", "--out", "asts.json"]);
    ok(d, &["build-ipag", "--ast-in", "asts.json", "--out", "pre.json"]);
    ok(d, &["compress", "--in", "pre.json", "--out", "cmp.json"]);
    ok(d, &["link", "--in", "cmp.json", "--out", "all.json", "--index", "index.json"]);
    ok(d, &["--seed", "2", "embed", "--in", "all.json", "--labels", "labels.tsv", "--embed-width", "16", "--embed-cache", "cache.json", "--out", "emb.json"]);
    assert!(d.join("cache.json").is_file());
    ok(d, &["--seed", "2", "train", "--in", "emb.json", "--config", "model.toml", "--model", "model.json", "--history", "history.json"]);
    let out = ok(d, &["eval", "--in", "emb.json", "--model", "model.json"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["metrics"]["accuracy"].as_f64().is_some(), "{report}");
    let out = ok(d, &["eval", "--in", "emb.json", "--config", "model.toml", "--folds", "3"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["folds"].as_array().unwrap().len(), 3);
    ok(d, &["predict", "--in", "all.json", "--model", "model.json", "--out", "pred.json"]);
    let pred = json(d.join("pred.json"));
    let rows = pred.as_array().unwrap();
    assert_eq!(rows.len(), 14);
    for r in rows {
        let s = r["score"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&s));
        assert_eq!(r["vulnerable"].as_bool().unwrap(), s > 0.5);
    }
    ok(d, &["build-ipag", "sinks.c", "--stage", "preliminary", "--out", "pre2.json"]);
    assert_eq!(std::fs::read(d.join("pre.json")).unwrap(), std::fs::read(d.join("pre2.json")).unwrap());
    let out = ok(d, &["build-ipag", "sinks.c", "--stage", "complete", "--out", "all2.json"]);
    assert!(stderr(&out).contains("caller sample ratio"), "{}", stderr(&out));
    assert_eq!(std::fs::read(d.join("all.json")).unwrap(), std::fs::read(d.join("all2.json")).unwrap());
}

#[test]
fn stats_without_baseline_reports_no_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("dump_relocs.c"), DUMP_RELOCS).unwrap();
    ok(d, &["build-ipag", "dump_relocs.c", "--out", "pre.json"]);
    let table = ok(d, &["stats", "--in", "pre.json"]);
    assert!(String::from_utf8_lossy(&table.stdout).contains("0.0%"));
    let out = ok(d, &["stats", "--in", "pre.json", "--json"]);
    let s: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["routines"], 3);
    assert_eq!(s["reduction"]["node_ratio"], 0.0);
    assert_eq!(s["reduction"]["edge_ratio"], 0.0);
    ok(d, &["compress", "--in", "pre.json", "--out", "cmp.json"]);
    ok(d, &["stats", "--in", "cmp.json", "--before", "pre.json", "--out", "stats.json"]);
    let s = json(d.join("stats.json"));
    assert!(s["reduction"]["node_ratio"].as_f64().unwrap() > 0.0, "{s}");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ipag(dir.path(), &["predict", "--in", "x.json"]).status.code(), Some(2));
    assert_eq!(ipag(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(ipag(dir.path(), &["--jobs", "0", "stats", "--in", "x.json"]).status.code(), Some(2));
}

#[test]
fn stages_are_gated() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("dump_relocs.c"), DUMP_RELOCS).unwrap();
    ok(d, &["build-ipag", "dump_relocs.c", "--out", "pre.json"]);
    let out = ipag(d, &["predict", "--in", "pre.json", "--model", "nope.json"]);
    assert_eq!(out.status.code(), Some(1));
    let out = ipag(d, &["embed", "--in", "pre.json", "--out", "emb.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("run link first"), "{}", stderr(&out));
    let out = ipag(d, &["train", "--in", "pre.json", "--model", "m.json"]);
    assert!(stderr(&out).contains("run embed first"), "{}", stderr(&out));
    assert!(!d.join("m.json").exists());
}

#[test]
fn conflicting_labels_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("dump_relocs.c"), DUMP_RELOCS).unwrap();
    std::fs::write(d.join("labels.tsv"), "dump_relocs\t1\ndump_relocs\t0\n").unwrap();
    ok(d, &["build-ipag", "dump_relocs.c", "--out", "pre.json"]);
    ok(d, &["compress", "--in", "pre.json", "--out", "cmp.json"]);
    ok(d, &["link", "--in", "cmp.json", "--out", "all.json"]);
    let out = ipag(d, &["embed", "--in", "all.json", "--labels", "labels.tsv", "--embed-width", "8", "--out", "emb.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("lines 1 and 2"), "{}", stderr(&out));
    assert!(!d.join("emb.json").exists());
}

#[test]
fn service_mode_needs_an_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("dump_relocs.c"), DUMP_RELOCS).unwrap();
    ok(d, &["build-ipag", "dump_relocs.c", "--out", "pre.json"]);
    ok(d, &["compress", "--in", "pre.json", "--out", "cmp.json"]);
    ok(d, &["link", "--in", "cmp.json", "--out", "all.json"]);
    let out = ipag(d, &["embed", "--in", "all.json", "--embed-mode", "service", "--out", "emb.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("IPAG_EMBED_ENDPOINT"), "{}", stderr(&out));
}
