mod common;

use std::fs;
use std::path::PathBuf;

use augr::encoder::Model;
use common::{augr, ok, pipeline, raw_corpus, s};

#[test]
fn every_stage_is_byte_identical_across_thread_counts() {
    let root = tempfile::tempdir().unwrap();
    let raw = root.path().join("raw.jsonl");
    fs::write(&raw, raw_corpus(40)).unwrap();
    let mut runs = Vec::new();
    // same paths every time: input paths are part of the echoed config
    let dir = root.path().join("work");
    for threads in [1, 4, 8, 4] {
        if dir.exists() {
            fs::remove_dir_all(&dir).unwrap();
        }
        fs::create_dir(&dir).unwrap();
        let files = pipeline(&raw, &dir, threads);
        let bytes: Vec<(String, Vec<u8>)> = files
            .iter()
            .flat_map(|f| {
                let meta = PathBuf::from(format!("{}.meta.json", f.display()));
                std::iter::once(f.clone()).chain(meta.exists().then_some(meta))
            })
            .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&f).unwrap()))
            .collect();
        runs.push(bytes);
    }
    for run in &runs[1..] {
        for ((name, a), (_, b)) in runs[0].iter().zip(run) {
            assert!(a == b, "{name} differs between runs");
        }
    }
}

#[test]
fn stub_topic_augmentation_repeats_exactly() {
    let root = tempfile::tempdir().unwrap();
    let raw = root.path().join("raw.jsonl");
    let docs = root.path().join("docs.jsonl");
    fs::write(&raw, raw_corpus(25)).unwrap();
    ok(&["ingest", "--input", s(&raw), "--output", s(&docs)], 2);
    let mut outs = Vec::new();
    for k in 0..2 {
        let p = root.path().join(format!("p{k}.jsonl"));
        ok(&["augment", "--corpus", s(&docs), "--output", s(&p), "--strategy", "tqgen-topic", "--gen-stub", "--seed", "7"], 2);
        outs.push(fs::read(&p).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(String::from_utf8_lossy(&outs[0]).lines().count(), 25);
}

#[test]
fn queue_size_is_recorded_in_model_metadata() {
    let root = tempfile::tempdir().unwrap();
    let raw = root.path().join("raw.jsonl");
    let docs = root.path().join("docs.jsonl");
    let pairs = root.path().join("pairs.jsonl");
    let model = root.path().join("m.bin");
    fs::write(&raw, raw_corpus(20)).unwrap();
    ok(&["ingest", "--input", s(&raw), "--output", s(&docs)], 1);
    ok(&["augment", "--corpus", s(&docs), "--output", s(&pairs), "--strategy", "doc-title"], 1);
    ok(
        &["train", "--pairs", s(&pairs), "--output", s(&model), "--arch", "moco", "--queue-size", "16384", "--steps", "2", "--batch-size", "4", "--dim", "4"],
        1,
    );
    let m = Model::load(&model).unwrap();
    let meta: serde_json::Value = serde_json::from_str(&m.metadata).unwrap();
    assert_eq!(meta["config"]["queue_size"], 16384);
    assert_eq!(meta["config"]["arch"], "moco");
    assert_eq!(meta["run"]["args"]["train"]["queue_size"], 16384);
}

#[test]
fn config_file_sets_defaults_and_flags_override() {
    let root = tempfile::tempdir().unwrap();
    let raw = root.path().join("raw.jsonl");
    let docs = root.path().join("docs.jsonl");
    let pairs = root.path().join("pairs.jsonl");
    let model = root.path().join("m.bin");
    let cfg = root.path().join("run.cfg");
    fs::write(&raw, raw_corpus(20)).unwrap();
    fs::write(&cfg, "# small run\nsteps = 3\nbatch_size = 4\ndim = 6\nlr = 0.001\n").unwrap();
    ok(&["ingest", "--input", s(&raw), "--output", s(&docs)], 1);
    ok(&["augment", "--corpus", s(&docs), "--output", s(&pairs), "--strategy", "doc-title"], 1);
    ok(&["train", "--config", s(&cfg), "--pairs", s(&pairs), "--output", s(&model), "--dim", "5"], 1);
    let m = Model::load(&model).unwrap();
    let meta: serde_json::Value = serde_json::from_str(&m.metadata).unwrap();
    assert_eq!(meta["config"]["steps"], 3);
    assert_eq!(meta["config"]["lr"], 0.001);
    assert_eq!(meta["config"]["dim"], 5);
    assert_eq!(m.params.dim, 5);
}

#[test]
fn exit_codes() {
    let out = augr(&["train", "--bogus-flag"], 1);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = augr(&["frobnicate"], 1);
    assert_eq!(out.status.code(), Some(1));

    let root = tempfile::tempdir().unwrap();
    let missing = root.path().join("absent.jsonl");
    let out = augr(&["index-bm25", "--corpus", s(&missing), "--output", s(&root.path().join("x.bin"))], 1);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let bad = root.path().join("bad.jsonl");
    fs::write(&bad, "{not json}\n").unwrap();
    let out = augr(&["ingest", "--input", s(&bad), "--output", s(&root.path().join("d.jsonl"))], 1);
    assert_eq!(out.status.code(), Some(2));

    let out = augr(&["augment", "--corpus", s(&bad), "--output", "x", "--strategy", "no-such-strategy"], 1);
    assert_eq!(out.status.code(), Some(2));

    let out = augr(&["--help"], 1);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn eval_report_goes_to_stdout_without_output_path() {
    let root = tempfile::tempdir().unwrap();
    let docs = root.path().join("docs.jsonl");
    let queries = root.path().join("q.jsonl");
    let qrels = root.path().join("qrels.txt");
    let index = root.path().join("i.bin");
    fs::write(&docs, "{\"id\":\"a\",\"text\":\"red apple\"}\n{\"id\":\"b\",\"text\":\"green pear\"}\n").unwrap();
    fs::write(&queries, "{\"qid\":\"q\",\"text\":\"pear\"}\n").unwrap();
    fs::write(&qrels, "q 0 b 1\n").unwrap();
    ok(&["index-bm25", "--corpus", s(&docs), "--output", s(&index)], 1);
    let out = ok(&["eval", "--corpus", s(&docs), "--queries", s(&queries), "--qrels", s(&qrels), "--bm25", s(&index)], 1);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["metrics"]["ndcg@10"], 1.0);
    assert_eq!(report["metrics"]["recall@20"], 1.0);
}
