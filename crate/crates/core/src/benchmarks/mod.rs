//! Instruction-awareness and robustness benchmarks: datasets, loaders and runners.

mod run;
pub mod synthesis;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::check_no_separators;

pub use run::*;

pub const INTENT: &str = "intent";
pub const EMOTION: &str = "emotion";
pub const INTENT_EMOTION_TRIPLETS: usize = 12_320;
pub const INSTRUCT_STSB_PAIRS: usize = 2_758;
pub const ROBUSTNESS_SET_SIZE: usize = 10;

/// Shipped criterion instructions. These are not the original wording, which
/// was never published; override them for faithful comparisons.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionInstructions {
    pub emotion: String,
    pub intent: String,
}

impl Default for CriterionInstructions {
    fn default() -> Self {
        Self {
            emotion: "What emotion does the customer express?".into(),
            intent: "What does the customer want the bank to do?".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletExample {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
    pub criterion: String,
    pub instruction: String,
}

impl TripletExample {
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("anchor", &self.anchor),
            ("positive", &self.positive),
            ("negative", &self.negative),
            ("criterion", &self.criterion),
            ("instruction", &self.instruction),
        ] {
            if v.trim().is_empty() {
                return Err(format!("{name} is empty"));
            }
            check_no_separators(v).map_err(|e| format!("{name}: {e}"))?;
        }
        if self.anchor == self.positive || self.anchor == self.negative || self.positive == self.negative {
            return Err("anchor, positive and negative must be pairwise distinct".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub sentence1: String,
    pub sentence2: String,
    pub instruction: String,
    pub rating: u8,
}

impl PairExample {
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("sentence1", &self.sentence1),
            ("sentence2", &self.sentence2),
            ("instruction", &self.instruction),
        ] {
            if v.trim().is_empty() {
                return Err(format!("{name} is empty"));
            }
            check_no_separators(v).map_err(|e| format!("{name}: {e}"))?;
        }
        if self.rating > 1 {
            return Err(format!("rating must be 0 or 1, got {}", self.rating));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusteringView {
    pub labels: Vec<String>,
    pub instruction: String,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusteringTask {
    pub ids: Vec<String>,
    pub documents: Vec<String>,
    pub views: BTreeMap<String, ClusteringView>,
}

impl ClusteringTask {
    pub fn validate(&self) -> Result<()> {
        let n = self.documents.len();
        if n == 0 {
            return Err(Error::EmptyList);
        }
        if self.ids.len() != n {
            return Err(Error::LengthMismatch { left: n, right: self.ids.len() });
        }
        if self.views.is_empty() {
            return Err(Error::InvalidRequest("clustering task declares no views".into()));
        }
        for (name, v) in &self.views {
            if v.labels.len() != n {
                return Err(Error::LengthMismatch { left: n, right: v.labels.len() });
            }
            if v.k == 0 {
                return Err(Error::InvalidK(format!("view {name}: k must be positive")));
            }
            if v.k > n {
                return Err(Error::KTooLarge { k: v.k, n });
            }
            if v.instruction.trim().is_empty() {
                return Err(Error::EmptyField("instruction"));
            }
        }
        Ok(())
    }

    pub fn single_view(&self, view: &str) -> Result<ClusteringTask> {
        let v = self
            .views
            .get(view)
            .ok_or_else(|| Error::MissingCriterion(view.to_string()))?;
        Ok(ClusteringTask {
            ids: self.ids.clone(),
            documents: self.documents.clone(),
            views: BTreeMap::from([(view.to_string(), v.clone())]),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionSet {
    Correct,
    Implicit,
    Incorrect,
}

impl InstructionSet {
    pub const ALL: [InstructionSet; 3] = [Self::Correct, Self::Implicit, Self::Incorrect];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobustnessSuite {
    pub task: ClusteringTask,
    pub instruction_sets: BTreeMap<InstructionSet, Vec<String>>,
}

impl RobustnessSuite {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.task.views.len() != 1 {
            return Err(Error::InvalidRequest("robustness task must have exactly one view".into()));
        }
        for set in InstructionSet::ALL {
            let list = self
                .instruction_sets
                .get(&set)
                .ok_or_else(|| Error::MissingCriterion(format!("{set:?}").to_lowercase()))?;
            if list.len() != ROBUSTNESS_SET_SIZE {
                return Err(Error::InvalidRequest(format!(
                    "{set:?} set has {} instructions, expected {ROBUSTNESS_SET_SIZE}",
                    list.len()
                )));
            }
            if list.iter().any(|i| i.trim().is_empty()) {
                return Err(Error::EmptyField("instruction"));
            }
        }
        Ok(())
    }
}

/// The four triplets built from two emotions crossed with two intents.
///
/// Subscript 1 is the original intent, 2 the modified one. Emotion triplets
/// pair same-emotion texts; intent triplets pair same-intent texts.
pub fn group_triplets(
    u_opt1: &str,
    u_fru1: &str,
    u_opt2: &str,
    u_fru2: &str,
    instructions: &CriterionInstructions,
) -> Result<[TripletExample; 4]> {
    let all = [u_opt1, u_fru1, u_opt2, u_fru2];
    let mut seen = BTreeSet::new();
    for u in all {
        if !seen.insert(u) {
            return Err(Error::DuplicateUtterance(u.to_string()));
        }
    }
    let t = |a: &str, p: &str, n: &str, criterion: &str, instruction: &str| TripletExample {
        anchor: a.into(),
        positive: p.into(),
        negative: n.into(),
        criterion: criterion.into(),
        instruction: instruction.into(),
    };
    Ok([
        t(u_opt1, u_opt2, u_fru1, EMOTION, &instructions.emotion),
        t(u_fru1, u_fru2, u_opt1, EMOTION, &instructions.emotion),
        t(u_opt1, u_fru1, u_opt2, INTENT, &instructions.intent),
        t(u_fru1, u_opt1, u_fru2, INTENT, &instructions.intent),
    ])
}

fn dataset_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Parses each non-blank line as `T`, then applies `check`.
fn read_jsonl<T, F>(path: &Path, check: F) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    F: Fn(&T) -> std::result::Result<(), String>,
{
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&line).map_err(|e| dataset_err(path, i + 1, e.to_string()))?;
        check(&item).map_err(|m| dataset_err(path, i + 1, m))?;
        out.push(item);
    }
    Ok(out)
}

pub fn load_triplets(path: &Path) -> Result<Vec<TripletExample>> {
    read_jsonl(path, TripletExample::validate)
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairExample>> {
    read_jsonl(path, PairExample::validate)
}

pub fn check_intent_emotion_counts(examples: &[TripletExample], path: &Path) -> Result<()> {
    if examples.len() != INTENT_EMOTION_TRIPLETS {
        return Err(dataset_err(
            path,
            0,
            format!("expected {INTENT_EMOTION_TRIPLETS} triplets, found {}", examples.len()),
        ));
    }
    for c in [INTENT, EMOTION] {
        let n = examples.iter().filter(|e| e.criterion == c).count();
        if n != INTENT_EMOTION_TRIPLETS / 2 {
            return Err(dataset_err(
                path,
                0,
                format!("expected {} {c} triplets, found {n}", INTENT_EMOTION_TRIPLETS / 2),
            ));
        }
    }
    Ok(())
}

pub fn check_instruct_stsb_counts(pairs: &[PairExample], path: &Path) -> Result<()> {
    if pairs.len() != INSTRUCT_STSB_PAIRS {
        return Err(dataset_err(
            path,
            0,
            format!("expected {INSTRUCT_STSB_PAIRS} pairs, found {}", pairs.len()),
        ));
    }
    Ok(())
}

/// Loads the official triplet file and checks its published size.
pub fn load_intent_emotion(path: &Path) -> Result<Vec<TripletExample>> {
    let t = load_triplets(path)?;
    check_intent_emotion_counts(&t, path)?;
    Ok(t)
}

pub fn load_instruct_stsb(path: &Path) -> Result<Vec<PairExample>> {
    let p = load_pairs(path)?;
    check_instruct_stsb_counts(&p, path)?;
    Ok(p)
}

#[derive(Clone, Debug, Deserialize)]
struct CorpusLine {
    id: serde_json::Value,
    text: String,
    #[serde(default)]
    labels: BTreeMap<String, serde_json::Value>,
}

/// One document of a clustering corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub id: String,
    pub text: String,
    pub labels: BTreeMap<String, String>,
}

fn scalar_to_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Reads `{"id","text","labels":{view: label}}` lines; ids must be unique.
pub fn parse_corpus<R: BufRead>(reader: R, path: &Path) -> Result<Vec<CorpusDocument>> {
    let mut docs = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| dataset_err(path, i + 1, m);
        let raw: CorpusLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let id = scalar_to_string(&raw.id).ok_or_else(|| err("id must be a string or number".into()))?;
        if raw.text.trim().is_empty() {
            return Err(err("text is empty".into()));
        }
        check_no_separators(&raw.text).map_err(err)?;
        if !ids.insert(id.clone()) {
            return Err(err(format!("duplicate id {id:?}")));
        }
        let mut labels = BTreeMap::new();
        for (view, v) in &raw.labels {
            let l = scalar_to_string(v).ok_or_else(|| err(format!("label for view {view} must be a scalar")))?;
            labels.insert(view.clone(), l);
        }
        docs.push(CorpusDocument { id, text: raw.text, labels });
    }
    if docs.is_empty() {
        return Err(dataset_err(path, 0, "corpus is empty"));
    }
    Ok(docs)
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusDocument>> {
    parse_corpus(BufReader::new(File::open(path)?), path)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub instruction: String,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusteringManifest {
    pub views: BTreeMap<String, ViewSpec>,
}

fn gold_labels(docs: &[CorpusDocument], view: &str, path: &Path) -> Result<Vec<String>> {
    docs.iter()
        .map(|d| {
            d.labels
                .get(view)
                .cloned()
                .ok_or_else(|| dataset_err(path, 0, format!("document {} has no label for view {view}", d.id)))
        })
        .collect()
}

pub fn build_clustering_task(docs: &[CorpusDocument], manifest: &ClusteringManifest, path: &Path) -> Result<ClusteringTask> {
    let mut views = BTreeMap::new();
    for (name, spec) in &manifest.views {
        views.insert(
            name.clone(),
            ClusteringView {
                labels: gold_labels(docs, name, path)?,
                instruction: spec.instruction.clone(),
                k: spec.k,
            },
        );
    }
    let task = ClusteringTask {
        ids: docs.iter().map(|d| d.id.clone()).collect(),
        documents: docs.iter().map(|d| d.text.clone()).collect(),
        views,
    };
    task.validate()?;
    Ok(task)
}

pub fn load_clustering_task(corpus: &Path, manifest: &Path) -> Result<ClusteringTask> {
    let docs = load_corpus(corpus)?;
    let m: ClusteringManifest = serde_json::from_str(&std::fs::read_to_string(manifest)?)
        .map_err(|e| dataset_err(manifest, 0, e.to_string()))?;
    build_clustering_task(&docs, &m, corpus)
}

/// `{corpus, view, k?, instructions: {correct, implicit, incorrect}}`.
/// `corpus` is resolved relative to the manifest; `k` defaults to the number of gold labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobustnessManifest {
    pub corpus: PathBuf,
    pub view: String,
    #[serde(default)]
    pub k: Option<usize>,
    pub instructions: BTreeMap<InstructionSet, Vec<String>>,
}

pub fn load_robustness_suite(manifest_path: &Path) -> Result<RobustnessSuite> {
    let m: RobustnessManifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)
        .map_err(|e| dataset_err(manifest_path, 0, e.to_string()))?;
    let corpus = match manifest_path.parent() {
        Some(dir) if m.corpus.is_relative() => dir.join(&m.corpus),
        _ => m.corpus.clone(),
    };
    let docs = load_corpus(&corpus)?;
    let labels = gold_labels(&docs, &m.view, &corpus)?;
    let k = m
        .k
        .unwrap_or_else(|| labels.iter().collect::<BTreeSet<_>>().len());
    let first = m
        .instructions
        .get(&InstructionSet::Correct)
        .and_then(|l| l.first())
        .cloned()
        .unwrap_or_default();
    let task = ClusteringTask {
        ids: docs.iter().map(|d| d.id.clone()).collect(),
        documents: docs.into_iter().map(|d| d.text).collect(),
        views: BTreeMap::from([(m.view, ClusteringView { labels, instruction: first, k })]),
    };
    let suite = RobustnessSuite {
        task,
        instruction_sets: m.instructions,
    };
    suite.validate()?;
    Ok(suite)
}
