use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cosem::model::{Model, Variant};
use cosem::numerics::ParamSet;

fn cosem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cosem"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn ok(out: Output) -> String {
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    stdout(&out)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes and prepares a small corpus; returns the bundle path.
fn small_corpus(dir: &Path, coupling: &str, users: &str, events: &str) -> PathBuf {
    let log = dir.join(format!("{coupling}.jsonl"));
    let bundle = dir.join(format!("{coupling}.json"));
    ok(cosem(&[
        "synth",
        "--seed",
        "3",
        "--users",
        users,
        "--apps",
        "12",
        "--chunks",
        "8",
        "--events-per-user",
        events,
        "--coupling",
        coupling,
        "--out",
        s(&log),
    ]));
    ok(cosem(&["prepare", "--input", s(&log), "--out", s(&bundle)]));
    bundle
}

fn train_small(bundle: &Path, variant: &str, out: &Path) -> String {
    ok(cosem(&[
        "train",
        "--corpus",
        s(bundle),
        "--variant",
        variant,
        "--out",
        s(out),
        "--embed-dim",
        "8",
        "--hidden-width",
        "8",
        "--learning-rate",
        "0.01",
        "--max-epochs",
        "4",
        "--patience",
        "2",
    ]))
}

fn mrr(table: &str, model: &str) -> f64 {
    let row = table
        .lines()
        .find(|l| l.split_whitespace().next() == Some(model))
        .unwrap();
    row.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn prepare_prints_counts_and_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("e.jsonl");
    ok(cosem(&[
        "synth",
        "--seed",
        "1",
        "--users",
        "5",
        "--apps",
        "12",
        "--chunks",
        "6",
        "--events-per-user",
        "100",
        "--out",
        s(&log),
    ]));
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let out_a = ok(cosem(&["prepare", "--input", s(&log), "--out", s(&a)]));
    ok(cosem(&["prepare", "--input", s(&log), "--out", s(&b)]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(out_a.contains("users=5 "));
    assert!(out_a.lines().any(|l| l.starts_with("train=")));
    assert!(out_a.lines().any(|l| l.starts_with("apps=12 ")));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let p = dir.path().join(name);
        ok(cosem(&[
            "synth",
            "--seed",
            "9",
            "--users",
            "3",
            "--events-per-user",
            "50",
            "--out",
            s(&p),
        ]));
        std::fs::read(p).unwrap()
    };
    assert_eq!(run("a.jsonl"), run("b.jsonl"));
}

#[test]
fn zero_users_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cosem(&["synth", "--users", "0", "--out", s(&dir.path().join("x.jsonl"))]);
    assert_eq!(code(&out), 1);
    assert!(out.stdout.is_empty());
}

#[test]
fn unknown_flag_is_a_usage_error_and_help_succeeds() {
    assert_eq!(code(&cosem(&["train", "--bogus"])), 1);
    assert_eq!(code(&cosem(&["--help"])), 0);
}

#[test]
fn filter_cascade_to_empty_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("nine.jsonl");
    let mut lines = String::new();
    for app in ["a", "b", "c"] {
        for i in 0..9 {
            lines.push_str(&format!("{{\"user\":\"u{i}\",\"ts\":{i},\"app\":\"{app}\"}}\n"));
        }
    }
    std::fs::write(&log, lines).unwrap();
    let out = cosem(&[
        "prepare",
        "--input",
        s(&log),
        "--out",
        s(&dir.path().join("o.json")),
        "--min-app-count",
        "10",
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn malformed_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.jsonl");
    std::fs::write(&log, "{\"user\":\"u\",\"ts\":1,\"app\":\"a\"}\nnot json\n").unwrap();
    let out = cosem(&["prepare", "--input", s(&log), "--out", s(&dir.path().join("o.json"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_corpus_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = cosem(&[
        "train",
        "--corpus",
        s(&dir.path().join("nope.json")),
        "--out",
        s(&dir.path().join("m.ckpt")),
    ]);
    assert_eq!(code(&out), 4);
    assert!(out.stdout.is_empty());
}

#[test]
fn train_prints_epoch_lines_and_best_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = small_corpus(dir.path(), "joint", "4", "120");
    let ckpt = dir.path().join("m.ckpt");
    let out = train_small(&bundle, "cosem", &ckpt);
    assert!(ckpt.exists());
    let lines: Vec<&str> = out.lines().collect();
    for (i, l) in lines[..lines.len() - 1].iter().enumerate() {
        let f: Vec<&str> = l.split(' ').collect();
        assert_eq!(f[0], format!("epoch={}", i + 1));
        assert!(f[1].strip_prefix("loss=").unwrap().parse::<f64>().is_ok());
        assert!(f[2].strip_prefix("val_mrr=").unwrap().parse::<f64>().is_ok());
    }
    assert!(lines.last().unwrap().starts_with("best_epoch="));
}

#[test]
fn dnn_s_leaves_app_branch_at_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = small_corpus(dir.path(), "joint", "4", "120");
    let ckpt_path = dir.path().join("s.ckpt");
    train_small(&bundle, "dnn-s", &ckpt_path);
    let ckpt = cosem::training::load(&ckpt_path).unwrap();
    assert_eq!(ckpt.model.config.variant, Variant::DnnS);
    let init = Model::new(ckpt.model.config).unwrap();
    assert_eq!(ckpt.model.params.app_embedding, init.params.app_embedding);
    assert_eq!(ckpt.model.params.history_layers, init.params.history_layers);
    assert_ne!(ckpt.model.params.semantic_embedding, init.params.semantic_embedding);
    assert!(ckpt.model.params.params().iter().all(|p| p.value.is_finite()));
}

#[test]
fn eval_table_report_and_k_monotonicity() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = small_corpus(dir.path(), "joint", "4", "120");
    let ckpt = dir.path().join("m.ckpt");
    train_small(&bundle, "cosem", &ckpt);
    let report = dir.path().join("r.json");
    let table = ok(cosem(&[
        "eval",
        "--corpus",
        s(&bundle),
        "--checkpoint",
        s(&ckpt),
        "--baseline",
        "mru",
        "--k",
        "5",
        "--report",
        s(&report),
    ]));
    assert!(table.starts_with("Model/Metric"));
    assert!(table.contains("M@5") && table.contains("H@5"));
    assert!(table.lines().any(|l| l.starts_with("CoSEM ")));
    assert!(table.lines().any(|l| l.starts_with("MRU ")));
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(doc["rows"].as_array().unwrap().len(), 2);

    let hr = |k: &str| -> f64 {
        let r = dir.path().join(format!("k{k}.json"));
        ok(cosem(&[
            "eval",
            "--corpus",
            s(&bundle),
            "--checkpoint",
            s(&ckpt),
            "--k",
            k,
            "--report",
            s(&r),
        ]));
        let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&r).unwrap()).unwrap();
        doc["rows"][0]["report"]["hr_at_k"].as_f64().unwrap()
    };
    assert!(hr("1") <= hr("5"));
}

#[test]
fn mru_beats_random_on_history_only_data() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = small_corpus(dir.path(), "history_only", "6", "300");
    let table = ok(cosem(&[
        "eval",
        "--corpus",
        s(&bundle),
        "--baseline",
        "mru",
        "--baseline",
        "random",
        "--seed",
        "4",
    ]));
    let (m, r) = (mrr(&table, "MRU"), mrr(&table, "Random"));
    assert!(m > r + 0.15, "MRU {m} vs random {r}");
}

#[test]
fn eval_without_rankers_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = small_corpus(dir.path(), "joint", "3", "60");
    assert_eq!(code(&cosem(&["eval", "--corpus", s(&bundle)])), 1);
}

#[test]
fn end_to_end_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = small_corpus(dir.path(), "joint", "3", "80");
    let run = |tag: &str| {
        let ckpt = dir.path().join(format!("{tag}.ckpt"));
        let report = dir.path().join(format!("{tag}.json"));
        let train_out = train_small(&bundle, "cosem", &ckpt);
        let table = ok(cosem(&[
            "eval",
            "--corpus",
            s(&bundle),
            "--checkpoint",
            s(&ckpt),
            "--report",
            s(&report),
        ]));
        (
            train_out,
            table,
            std::fs::read(ckpt).unwrap(),
            std::fs::read(report).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn config_file_is_overridden_by_flags_and_echoed_into_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = small_corpus(dir.path(), "joint", "3", "80");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"model":{"embed_dim":6,"hidden_width":6,"variant":"dnn_a"},"train":{"max_epochs":2}}"#,
    )
    .unwrap();
    let ckpt_path = dir.path().join("m.ckpt");
    ok(cosem(&[
        "train",
        "--corpus",
        s(&bundle),
        "--config",
        s(&cfg),
        "--variant",
        "cosem",
        "--out",
        s(&ckpt_path),
    ]));
    let ckpt = cosem::training::load(&ckpt_path).unwrap();
    assert_eq!(ckpt.model.config.variant, Variant::Cosem);
    assert_eq!(ckpt.model.config.embed_dim, 6);
    assert!(ckpt.history.len() <= 2);
    assert!(ckpt.provenance.contains("\"embed_dim\":6"));
}
