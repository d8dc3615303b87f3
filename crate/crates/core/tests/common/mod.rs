//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use inbedder::cli::run_cli;
use inbedder::backend::synthetic::{SyntheticConfig, WILDCARD};
use inbedder::backend::{ArchitectureMode, GenerationRecord, GenerationSample, HiddenStates};
use inbedder::benchmarks::{ClusteringTask, ClusteringView, CorpusDocument, InstructionSet, RobustnessSuite, TripletExample, EMOTION, INTENT};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EMOTION_INSTRUCTION: &str = "What emotion does the customer express?";
pub const INTENT_INSTRUCTION: &str = "What does the customer want the bank to do?";

pub const INTENTS: [(&str, &str); 4] = [
    ("card declined", "my card was declined at the shop"),
    ("close account", "I want to close my savings account"),
    ("change address", "I need to update my home address"),
    ("transfer abroad", "how do I send money to another country"),
];
pub const EMOTIONS: [(&str, &str); 3] = [
    ("happy", "thanks a lot, you are great"),
    ("angry", "this is absolutely unacceptable"),
    ("worried", "I am really anxious about this"),
];
const OPENERS: [&str; 5] = ["Hello.", "Hi there.", "Good morning.", "Quick question.", "Excuse me."];

/// 60 messages: every intent x emotion x opener, labelled under both views.
pub fn two_view_corpus() -> Vec<CorpusDocument> {
    let mut docs = Vec::new();
    for (ii, (intent, ip)) in INTENTS.iter().enumerate() {
        for (ei, (emotion, ep)) in EMOTIONS.iter().enumerate() {
            for (oi, opener) in OPENERS.iter().enumerate() {
                docs.push(CorpusDocument {
                    id: format!("m{ii}{ei}{oi}"),
                    text: format!("{opener} {ip}, {ep}."),
                    labels: BTreeMap::from([
                        (INTENT.to_string(), intent.to_string()),
                        (EMOTION.to_string(), emotion.to_string()),
                    ]),
                });
            }
        }
    }
    docs
}

pub fn corpus_jsonl(docs: &[CorpusDocument]) -> String {
    docs.iter().map(|d| serde_json::to_string(d).unwrap() + "\n").collect()
}

pub fn robustness_instructions() -> BTreeMap<InstructionSet, Vec<String>> {
    let correct = [
        "What does the customer want the bank to do?",
        "What is the customer asking the bank for?",
        "Which service does the customer request?",
        "What action does the customer need from the bank?",
        "What is the purpose of this message?",
        "What does the customer need help with?",
        "Which banking task is being requested?",
        "What request does the customer make?",
        "What is the customer trying to get done?",
        "What does this person want from customer support?",
    ];
    let implicit = [
        "Which department should handle this message?",
        "Where should this ticket be routed?",
        "Which team would answer this?",
        "What part of the bank is this about?",
        "Who should read this message?",
        "Which queue does this belong in?",
        "What product area is involved?",
        "Which desk should pick this up?",
        "What category would support file this under?",
        "Which specialist is needed here?",
    ];
    let incorrect = [
        "What time of day was this written?",
        "How long is this message?",
        "What language is this message in?",
        "Is there a typo in this message?",
        "What is the weather like?",
        "How old is the customer?",
        "What colour is the card?",
        "Which city does the customer live in?",
        "Does the message mention a pet?",
        "What is the customer's name?",
    ];
    let own = |xs: [&str; 10]| xs.iter().map(|s| s.to_string()).collect();
    BTreeMap::from([
        (InstructionSet::Correct, own(correct)),
        (InstructionSet::Implicit, own(implicit)),
        (InstructionSet::Incorrect, own(incorrect)),
    ])
}

/// Answers the question that was asked: emotion, intent, routing desk, or a shrug.
pub fn responsive_config(docs: &[CorpusDocument]) -> SyntheticConfig {
    let mut cfg = SyntheticConfig::default();
    let sets = robustness_instructions();
    for d in docs {
        let intent = &d.labels[INTENT];
        cfg = cfg.with_answer(&d.text, EMOTION_INSTRUCTION, &d.labels[EMOTION]);
        for ins in &sets[&InstructionSet::Correct] {
            cfg = cfg.with_answer(&d.text, ins, intent);
        }
        // routing only separates cards from accounts
        let desk = if intent == "card declined" || intent == "transfer abroad" { "payments desk" } else { "accounts desk" };
        for ins in &sets[&InstructionSet::Implicit] {
            cfg = cfg.with_answer(&d.text, ins, desk);
        }
    }
    for ins in &sets[&InstructionSet::Incorrect] {
        cfg = cfg.with_answer(WILDCARD, ins, "not stated");
    }
    cfg.with_answer("I love cats", "Do they love animals?", "yes")
        .with_answer("I love dogs", "Do they love animals?", "yes")
        .with_answer("I love cats", "What animal do they love?", "cats")
        .with_answer("I love dogs", "What animal do they love?", "dogs")
}

/// Answers with a paraphrase of the message whatever the instruction.
pub fn blind_config(docs: &[CorpusDocument]) -> SyntheticConfig {
    let mut cfg = SyntheticConfig::default();
    for d in docs {
        let answer = format!("{} {}", d.labels[INTENT], d.labels[EMOTION]);
        cfg = cfg.with_answer(&d.text, WILDCARD, &answer);
    }
    cfg
}

pub fn clustering_task(docs: &[CorpusDocument]) -> ClusteringTask {
    let view = |name: &str, instruction: &str, k| ClusteringView {
        labels: docs.iter().map(|d| d.labels[name].clone()).collect(),
        instruction: instruction.to_string(),
        k,
    };
    ClusteringTask {
        ids: docs.iter().map(|d| d.id.clone()).collect(),
        documents: docs.iter().map(|d| d.text.clone()).collect(),
        views: BTreeMap::from([
            (EMOTION.to_string(), view(EMOTION, EMOTION_INSTRUCTION, EMOTIONS.len())),
            (INTENT.to_string(), view(INTENT, INTENT_INSTRUCTION, INTENTS.len())),
        ]),
    }
}

pub fn robustness_suite(docs: &[CorpusDocument]) -> RobustnessSuite {
    let mut task = clustering_task(docs);
    task.views.remove(EMOTION);
    RobustnessSuite {
        task,
        instruction_sets: robustness_instructions(),
    }
}

/// `quads` anchor groups, each yielding one emotion and one intent triplet with
/// hard negatives: the emotion negative shares the intent and vice versa.
pub fn triplets(docs: &[CorpusDocument], quads: usize, seed: u64) -> Vec<TripletExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * quads);
    for _ in 0..quads {
        let a = docs.choose(&mut rng).unwrap();
        let same_intent: Vec<_> = docs
            .iter()
            .filter(|d| d.labels[INTENT] == a.labels[INTENT] && d.labels[EMOTION] != a.labels[EMOTION])
            .collect();
        let same_emotion: Vec<_> = docs
            .iter()
            .filter(|d| d.labels[EMOTION] == a.labels[EMOTION] && d.labels[INTENT] != a.labels[INTENT])
            .collect();
        let b = same_intent.choose(&mut rng).unwrap();
        let c = same_emotion.choose(&mut rng).unwrap();
        out.push(TripletExample {
            anchor: a.text.clone(),
            positive: c.text.clone(),
            negative: b.text.clone(),
            criterion: EMOTION.to_string(),
            instruction: EMOTION_INSTRUCTION.to_string(),
        });
        out.push(TripletExample {
            anchor: a.text.clone(),
            positive: b.text.clone(),
            negative: c.text.clone(),
            criterion: INTENT.to_string(),
            instruction: INTENT_INSTRUCTION.to_string(),
        });
    }
    out
}

pub struct RandomRecord {
    pub record: GenerationRecord,
    pub layer: usize,
    pub rows: Vec<Vec<f32>>,
    pub special: BTreeSet<usize>,
}

/// A causal record with N in [2,64], G in [1,16], D in [4,64] and
/// `special_rate` of rows flagged special.
pub fn random_record(rng: &mut ChaCha8Rng, special_rate: f64) -> RandomRecord {
    let n = rng.gen_range(2..=64);
    let g = rng.gen_range(1..=16);
    let dim = rng.gen_range(4..=64);
    let num_layers = rng.gen_range(1..=8);
    let layer = rng.gen_range(0..=num_layers);
    let rows: Vec<Vec<f32>> = (0..n + g)
        .map(|_| (0..dim).map(|_| rng.gen_range(-4.0f32..4.0)).collect())
        .collect();
    let special: BTreeSet<usize> = (0..n + g).filter(|_| rng.gen_bool(special_rate)).collect();
    let tokens: Vec<String> = (0..g).map(|i| format!("w{i}")).collect();
    let record = GenerationRecord {
        prompt_len: n,
        num_layers,
        dim,
        architecture_mode: ArchitectureMode::Causal,
        samples: vec![GenerationSample {
            token_ids: (0..g as u32).map(|i| i * 7 + 3).collect(),
            text: tokens.join(" "),
            tokens,
            finished_with_eos: rng.gen_bool(0.5),
        }],
        hidden: vec![BTreeMap::from([(layer, HiddenStates::from_rows(&rows).unwrap())])],
        special_token_positions: vec![special.clone()],
    };
    RandomRecord {
        record,
        layer,
        rows,
        special,
    }
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/replay")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs `embed` and `eval cluster` against the committed replay file.
pub fn replay_outputs(out: &Path) -> (Vec<u8>, Vec<u8>) {
    let dir = fixture_dir();
    let backend = format!("replay:{}", s(&dir.join("records.bin")));
    let emb = out.join("embeddings.bin");
    let scores = out.join("scores.json");
    let code = run_cli([
        "inbedder", "--backend", &backend, "embed",
        "--corpus", s(&dir.join("corpus.jsonl")),
        "--instruction", INTENT_INSTRUCTION,
        "--out", s(&emb),
    ]);
    assert_eq!(code, 0);
    let code = run_cli([
        "inbedder", "--backend", &backend, "eval", "cluster",
        "--corpus", s(&dir.join("corpus.jsonl")),
        "--manifest", s(&dir.join("manifest.json")),
        "--out", s(&scores),
    ]);
    assert_eq!(code, 0);
    (std::fs::read(emb).unwrap(), std::fs::read(scores).unwrap())
}
