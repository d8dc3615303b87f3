mod common;

use std::path::Path;

use common::{fixture_dir, replay_outputs};
use inbedder::cli::run_cli;
use serde_json::json;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn replay_matches_committed_outputs() {
    let dir = fixture_dir();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = replay_outputs(a.path());
    let second = replay_outputs(b.path());
    assert_eq!(first, second);
    assert_eq!(first.0, std::fs::read(dir.join("expected_embeddings.bin")).unwrap());
    assert_eq!(first.1, std::fs::read(dir.join("expected_scores.json")).unwrap());
}

#[test]
fn replay_has_fifty_records() {
    let store = inbedder::backend::replay::ReplayStore::read(&fixture_dir().join("records.bin")).unwrap();
    let backend = inbedder::backend::replay::ReplayBackend::new(store);
    assert_eq!(backend.len(), 50);
}

#[test]
fn unknown_prompt_is_a_runtime_error() {
    let dir = fixture_dir();
    let out = tempfile::tempdir().unwrap();
    let code = run_cli([
        "inbedder", "--backend", &format!("replay:{}", s(&dir.join("records.bin"))), "embed",
        "--corpus", s(&dir.join("corpus.jsonl")),
        "--instruction", "A question nobody recorded",
        "--out", s(&out.path().join("e.bin")),
    ]);
    assert_eq!(code, 2);
}

/// Rebuilds the fixture from the synthetic backend:
/// `cargo test -p inbedder-core --test replay -- --ignored regenerate`
#[test]
#[ignore]
fn regenerate() {
    let dir = fixture_dir();
    std::fs::create_dir_all(&dir).unwrap();
    let docs: Vec<_> = common::two_view_corpus().into_iter().take(50).collect();
    std::fs::write(dir.join("corpus.jsonl"), common::corpus_jsonl(&docs)).unwrap();
    let manifest = json!({"views": {"intent": {"instruction": common::INTENT_INSTRUCTION, "k": 4}}});
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap() + "\n").unwrap();
    let cfg = dir.join("synthetic.json");
    std::fs::write(&cfg, serde_json::to_string_pretty(&common::responsive_config(&docs)).unwrap()).unwrap();
    let code = run_cli([
        "inbedder", "--backend", &format!("synthetic:{}", s(&cfg)),
        "--record", s(&dir.join("records.bin")),
        "eval", "cluster",
        "--corpus", s(&dir.join("corpus.jsonl")),
        "--manifest", s(&dir.join("manifest.json")),
    ]);
    assert_eq!(code, 0);
    std::fs::remove_file(&cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let (emb, scores) = replay_outputs(tmp.path());
    std::fs::write(dir.join("expected_embeddings.bin"), emb).unwrap();
    std::fs::write(dir.join("expected_scores.json"), scores).unwrap();
}
