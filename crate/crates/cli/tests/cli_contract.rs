use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn fashionrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fashionrec")).args(args).output().unwrap()
}

fn summary(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth-fixture", "--out", s(dir)];
    args.extend(extra);
    assert!(fashionrec(&args).status.success());
}

fn write_lines(path: &Path, rows: &[Value]) {
    let body: String = rows.iter().map(|r| r.to_string() + "\n").collect();
    std::fs::write(path, body).unwrap();
}

#[test]
fn unknown_flag_prints_usage_and_exits_2() {
    let out = fashionrec(&["build-dataset", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage:"), "{err}");
    assert!(out.stdout.is_empty());
    assert_eq!(fashionrec(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("nowhere");
    assert_eq!(fashionrec(&["build-dataset", "--out", s(&nowhere)]).status.code(), Some(2));
    assert_eq!(fashionrec(&["build-dataset", "--catalog", s(&nowhere), "--out", s(&nowhere)]).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "[1, 2").unwrap();
    assert_eq!(fashionrec(&["--config", s(&bad), "retrieve"]).status.code(), Some(2));
    assert_eq!(fashionrec(&["build-dataset", "--catalog", s(&nowhere), "--out", s(&nowhere), "--ratios", "0.5,0.5"]).status.code(), Some(2));
}

#[test]
fn integrity_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_lines(&d.join("items.jsonl"), &[json!({"id": "a", "category": "top", "description": "a top", "image_ref": "a.png"})]);
    write_lines(&d.join("outfits.jsonl"), &[json!({"id": "o", "items": ["a", "ghost"]})]);
    write_lines(&d.join("users.jsonl"), &[]);
    let out = fashionrec(&[
        "ingest",
        "--items",
        s(&d.join("items.jsonl")),
        "--outfits",
        s(&d.join("outfits.jsonl")),
        "--users",
        s(&d.join("users.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ghost"));
}

#[test]
fn config_file_mirrors_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cat = dir.path().join("catalog");
    synth(&cat, &["--outfits", "60", "--users", "8"]);
    let config = dir.path().join("fashionrec.json");
    std::fs::write(
        &config,
        json!({
            "catalog": cat,
            "dim": 16,
            "retrieve": {"query-text": "red silk top", "k": 2, "category": "top"},
        })
        .to_string(),
    )
    .unwrap();
    let from_config = fashionrec(&["--config", s(&config), "retrieve"]);
    assert!(from_config.status.success(), "{}", String::from_utf8_lossy(&from_config.stderr));
    let v = summary(&from_config);
    assert_eq!(v["k"], 2);
    assert_eq!(v["query"], "red silk top");
    assert!(v["results"].as_array().unwrap().iter().all(|r| r["category"] == "top"));

    let overridden = summary(&fashionrec(&["--config", s(&config), "retrieve", "--k", "4", "--category", "shoes"]));
    assert_eq!(overridden["k"], 4);
    assert_eq!(overridden["results"].as_array().unwrap().len(), 4);
    assert!(overridden["results"].as_array().unwrap().iter().all(|r| r["category"] == "shoes"));
}

#[test]
fn alternative_without_pairs_warns_but_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cat = dir.path().join("catalog");
    std::fs::create_dir_all(&cat).unwrap();
    let items: Vec<Value> = (0..6)
        .map(|n| json!({"id": format!("i{n}"), "category": (["top", "jeans", "shoes"][n % 3]), "description": format!("piece {n}"), "image_ref": format!("images/i{n}.png")}))
        .collect();
    write_lines(&cat.join("items.jsonl"), &items);
    write_lines(
        &cat.join("outfits.jsonl"),
        &[json!({"id": "o1", "items": ["i0", "i1", "i2"]}), json!({"id": "o2", "items": ["i3", "i4", "i5"]})],
    );
    write_lines(&cat.join("users.jsonl"), &[json!({"id": "u", "outfits": ["o1", "o2"]})]);
    let out = fashionrec(&[
        "build-dataset",
        "--catalog",
        s(&cat),
        "--out",
        s(&dir.path().join("ds")),
        "--task",
        "alternative",
        "--dim",
        "8",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = summary(&out);
    assert_eq!(v["samples"]["alternative"], 0);
    assert_eq!(v["warnings"].as_array().unwrap().len(), 1);
}

#[test]
fn rerunning_the_pipeline_overwrites_in_place() {
    let dir = tempfile::tempdir().unwrap();
    let cat = dir.path().join("catalog");
    let ds = dir.path().join("ds");
    synth(&cat, &["--outfits", "80", "--users", "12"]);
    let build = || {
        assert!(fashionrec(&["build-dataset", "--catalog", s(&cat), "--out", s(&ds), "--dim", "16"]).status.success());
        assert!(fashionrec(&["gen-dialogues", "--catalog", s(&cat), "--dataset", s(&ds)]).status.success());
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&ds)
            .unwrap()
            .map(|e| e.unwrap().path())
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
            .collect();
        files.sort();
        files
    };
    assert_eq!(build(), build());
}

#[test]
fn validate_dialogues_reports_rule_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cat = dir.path().join("catalog");
    let ds = dir.path().join("ds");
    synth(&cat, &["--outfits", "80", "--users", "12"]);
    assert!(fashionrec(&["build-dataset", "--catalog", s(&cat), "--out", s(&ds), "--task", "basic", "--dim", "16"]).status.success());
    assert!(fashionrec(&["gen-dialogues", "--catalog", s(&cat), "--dataset", s(&ds)]).status.success());
    let clean = fashionrec(&["validate-dialogues", "--catalog", s(&cat), "--dataset", s(&ds)]);
    assert_eq!(clean.status.code(), Some(0));
    assert_eq!(summary(&clean)["violating"], 0);

    // blank out one answer
    let file = ds.join("dialogues.jsonl");
    let text = std::fs::read_to_string(&file).unwrap();
    let mut lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let first = lines[0].to_string();
    let blanked = first.replacen("\"a\":\"", "\"a\":\" \",\"_\":\"", 1);
    assert_ne!(first, blanked, "unexpected dialogue layout: {first}");
    lines[0] = serde_json::from_str(&blanked).unwrap();
    write_lines(&file, &lines);
    let dirty = fashionrec(&["validate-dialogues", "--catalog", s(&cat), "--dataset", s(&ds)]);
    assert_eq!(dirty.status.code(), Some(1));
    let v = summary(&dirty);
    assert_eq!(v["violating"], 1);
    assert_eq!(v["by_rule"]["R5"], 1);
}

#[test]
fn unreachable_dialogue_backend_records_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cat = dir.path().join("catalog");
    let ds = dir.path().join("ds");
    synth(&cat, &["--outfits", "20", "--users", "4"]);
    assert!(fashionrec(&["build-dataset", "--catalog", s(&cat), "--out", s(&ds), "--task", "basic", "--dim", "8"]).status.success());
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let endpoint = format!("http://127.0.0.1:{port}/v1/chat/completions");
    let out = fashionrec(&["gen-dialogues", "--catalog", s(&cat), "--dataset", s(&ds), "--backend", "remote", "--endpoint", &endpoint]);
    assert_eq!(out.status.code(), Some(1));
    let v = summary(&out);
    assert_eq!(v["failed"], 20);
    assert_eq!(std::fs::read_to_string(ds.join("dialogues.failed.jsonl")).unwrap().lines().count(), 20);
}

#[test]
fn evaluate_writes_report_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("preds.jsonl");
    write_lines(
        &preds,
        &[
            json!({"id": "a", "gen_text": "black boots", "gt_text": "black boots", "gen_image": "g.png", "gt_image": "g.png"}),
            json!({"id": "b", "gen_text": "a hat", "gt_text": "white trainers", "history_images": ["h.png"], "gen_image": "x.png"}),
        ],
    );
    let report = dir.path().join("report.json");
    let out = fashionrec(&["evaluate", "--predictions", s(&preds), "--report", s(&report), "--dim", "16"]);
    assert!(out.status.success());
    let v = summary(&out);
    assert_eq!(v["n"], 2);
    assert_eq!(v["cis"]["mean"], 100.0);
    let saved: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(saved, v);
    assert!(std::fs::read_to_string(dir.path().join("report.txt")).unwrap().contains("S-BERT"));
}
