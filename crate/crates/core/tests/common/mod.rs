//! Shared helpers for the binary-level tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const WORDS: &[&str] = &[
    "river", "granite", "quarry", "harbor", "lantern", "orchard", "glacier", "meadow", "copper", "furnace", "signal",
    "bridge", "canyon", "pepper", "violin", "compass", "tunnel", "marble", "saddle", "thunder",
];

pub fn raw_corpus(n: usize) -> String {
    let mut out = String::new();
    for i in 0..n {
        let body: Vec<&str> = (0..40 + i % 7).map(|j| WORDS[(i * 7 + j * (i % 5 + 1)) % WORDS.len()]).collect();
        let rec = serde_json::json!({
            "id": format!("doc{i:03}"),
            "title": format!("{} {}", WORDS[i % WORDS.len()], WORDS[(i + 3) % WORDS.len()]),
            "text": body.join(" ") + ".",
            "anchors": [WORDS[(i + 5) % WORDS.len()]],
        });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    out
}

pub fn augr(args: &[&str], threads: usize) -> Output {
    Command::new(env!("CARGO_BIN_EXE_augr"))
        .args(args)
        .env("AUGTRIEVER_THREADS", threads.to_string())
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str], threads: usize) -> Output {
    let out = augr(args, threads);
    assert!(
        out.status.success(),
        "augr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs every stage into `dir` and returns the produced files.
pub fn pipeline(raw: &Path, dir: &Path, threads: usize) -> Vec<PathBuf> {
    let docs = dir.join("docs.jsonl");
    let index = dir.join("index.bin");
    let pairs = dir.join("pairs.jsonl");
    let model = dir.join("model.bin");
    let moco = dir.join("moco.bin");
    let fly = dir.join("fly.bin");
    let tuned = dir.join("tuned.bin");
    let adapted = dir.join("adapted.bin");
    let topic = dir.join("topic.jsonl");
    let report = dir.join("report.json");
    let bm25_report = dir.join("bm25.json");
    let queries = dir.join("queries.jsonl");
    let qrels = dir.join("qrels.txt");
    let hard = dir.join("hard.jsonl");
    let log = dir.join("log.jsonl");

    ok(&["ingest", "--input", s(raw), "--output", s(&docs), "--format", "generic"], threads);
    ok(&["index-bm25", "--corpus", s(&docs), "--output", s(&index)], threads);
    ok(
        &["augment", "--corpus", s(&docs), "--output", s(&pairs), "--strategy", "hybrid-all", "--gen-stub", "--seed", "3"],
        threads,
    );
    ok(
        &["train", "--pairs", s(&pairs), "--output", s(&model), "--steps", "12", "--batch-size", "4", "--dim", "8", "--log", s(&log)],
        threads,
    );
    ok(
        &["train", "--pairs", s(&pairs), "--output", s(&moco), "--arch", "moco", "--queue-size", "16", "--steps", "12", "--batch-size", "4", "--dim", "8"],
        threads,
    );
    ok(
        &["train", "--corpus", s(&docs), "--strategy", "mix50:qext-self", "--output", s(&fly), "--steps", "6", "--batch-size", "4", "--dim", "8"],
        threads,
    );

    let docs_text = fs::read_to_string(&docs).unwrap();
    let ids: Vec<String> = docs_text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["id"].as_str().unwrap().to_string())
        .collect();
    let mut hard_lines = String::new();
    for (i, id) in ids.iter().enumerate().take(8) {
        let neg = &ids[(i + 1) % ids.len()];
        let p = serde_json::json!({
            "qid": format!("{id}:ft"), "query": WORDS[i], "doc_id": id, "doc": WORDS[i],
            "strategy": "external", "neg_doc_id": neg, "neg_doc": WORDS[i + 1],
        });
        hard_lines.push_str(&format!("{p}\n"));
    }
    fs::write(&hard, hard_lines).unwrap();
    ok(
        &["finetune", "--model", s(&model), "--pairs", s(&hard), "--output", s(&tuned), "--steps", "5", "--batch-size", "4"],
        threads,
    );
    ok(
        &["adapt", "--model", s(&model), "--corpus", s(&docs), "--output", s(&adapted), "--gen-stub", "--steps", "5", "--batch-size", "4", "--pairs-output", s(&topic)],
        threads,
    );

    let mut q = String::new();
    let mut r = String::new();
    for (i, id) in ids.iter().enumerate().take(10) {
        q.push_str(&format!("{}\n", serde_json::json!({"_id": format!("q{i}"), "text": WORDS[i]})));
        r.push_str(&format!("q{i} 0 {id} 1\n"));
    }
    fs::write(&queries, q).unwrap();
    fs::write(&qrels, r).unwrap();
    ok(
        &["eval", "--corpus", s(&docs), "--queries", s(&queries), "--qrels", s(&qrels), "--model", s(&adapted), "--output", s(&report)],
        threads,
    );
    ok(
        &["eval", "--corpus", s(&docs), "--queries", s(&queries), "--qrels", s(&qrels), "--bm25", s(&index), "--metrics", "ndcg@10,recall@5", "--output", s(&bm25_report)],
        threads,
    );
    vec![docs, index, pairs, model, moco, fly, tuned, adapted, topic, report, bm25_report, log]
}

