use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ClusteringTask, InstructionSet, PairExample, RobustnessSuite, TripletExample, EMOTION, INTENT};
use crate::clustering::{kmeans, v_measure};
use crate::encoding::Encoder;
use crate::error::{Error, Result};
use crate::math::{cosine_similarity, harmonic_mean, Embedding};
use crate::metrics::{spearman, triplet_success_rate, TripletJudgment};

/// Anything that embeds `(text, instruction)` pairs in bulk.
pub trait BatchEmbed: Sync {
    fn embed_batch(&self, items: &[(String, String)]) -> Result<Vec<Embedding>>;
}

impl BatchEmbed for Encoder<'_> {
    fn embed_batch(&self, items: &[(String, String)]) -> Result<Vec<Embedding>> {
        Ok(self.encode_all(items)?.into_iter().map(|e| e.embedding).collect())
    }
}

/// Adapts a per-pair closure; pairs are embedded in parallel.
pub struct FnEmbed<F>(pub F);

impl<F> BatchEmbed for FnEmbed<F>
where
    F: Fn(&str, &str) -> Result<Embedding> + Sync,
{
    fn embed_batch(&self, items: &[(String, String)]) -> Result<Vec<Embedding>> {
        items.par_iter().map(|(t, i)| (self.0)(t, i)).collect()
    }
}

/// Embeds each distinct pair once; returns a lookup from pair to embedding.
fn embed_unique<'a, I>(embedder: &dyn BatchEmbed, pairs: I) -> Result<HashMap<(String, String), Embedding>>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut order = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (t, i) in pairs {
        if seen.insert((t, i)) {
            order.push((t.to_string(), i.to_string()));
        }
    }
    let vectors = embedder.embed_batch(&order)?;
    if vectors.len() != order.len() {
        return Err(Error::Protocol(format!("{} inputs but {} embeddings", order.len(), vectors.len())));
    }
    Ok(order.into_iter().zip(vectors).collect())
}

fn lookup<'m>(m: &'m HashMap<(String, String), Embedding>, text: &str, instruction: &str) -> &'m Embedding {
    &m[&(text.to_string(), instruction.to_string())]
}

/// `n / sum(1/x)`; equals [`harmonic_mean`] for two values, 0 if any value is 0.
pub fn harmonic_mean_all(values: &[f64]) -> Result<f64> {
    match values {
        [] => Err(Error::EmptyList),
        [x] => Ok(*x),
        [a, b] => harmonic_mean(*a, *b),
        _ => {
            if let Some(&v) = values.iter().find(|v| **v < 0.0 || v.is_nan()) {
                return Err(Error::NegativeInput(v));
            }
            if values.contains(&0.0) {
                return Ok(0.0);
            }
            Ok(values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletScores {
    /// Success rate per criterion.
    #[serde(flatten)]
    pub rates: BTreeMap<String, f64>,
    pub harmonic_mean: f64,
    pub n_triplets: usize,
}

pub fn triplet_judgments(examples: &[TripletExample], embedder: &dyn BatchEmbed) -> Result<Vec<TripletJudgment>> {
    let m = embed_unique(
        embedder,
        examples.iter().flat_map(|e| {
            [&e.anchor, &e.positive, &e.negative].map(|t| (t.as_str(), e.instruction.as_str()))
        }),
    )?;
    examples
        .iter()
        .map(|e| {
            let a = lookup(&m, &e.anchor, &e.instruction);
            let p = lookup(&m, &e.positive, &e.instruction);
            let n = lookup(&m, &e.negative, &e.instruction);
            Ok(TripletJudgment::new(cosine_similarity(a, p)?, cosine_similarity(a, n)?))
        })
        .collect()
}

/// Per-criterion success rates over `criteria` and their harmonic mean.
pub fn run_triplet_benchmark_with(
    examples: &[TripletExample],
    embedder: &dyn BatchEmbed,
    criteria: &[&str],
) -> Result<TripletScores> {
    for c in criteria {
        if !examples.iter().any(|e| e.criterion == *c) {
            return Err(Error::MissingCriterion(c.to_string()));
        }
    }
    let judgments = triplet_judgments(examples, embedder)?;
    let mut rates = BTreeMap::new();
    for c in criteria {
        let j: Vec<TripletJudgment> = examples
            .iter()
            .zip(&judgments)
            .filter(|(e, _)| e.criterion == *c)
            .map(|(_, j)| *j)
            .collect();
        rates.insert(c.to_string(), triplet_success_rate(&j)?);
    }
    let ordered: Vec<f64> = criteria.iter().map(|c| rates[*c]).collect();
    Ok(TripletScores {
        harmonic_mean: harmonic_mean_all(&ordered)?,
        rates,
        n_triplets: examples.len(),
    })
}

/// The intent/emotion triplet benchmark.
pub fn run_triplet_benchmark(examples: &[TripletExample], embedder: &dyn BatchEmbed) -> Result<TripletScores> {
    run_triplet_benchmark_with(examples, embedder, &[INTENT, EMOTION])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StsScore {
    pub spearman: f64,
    pub n_pairs: usize,
}

pub fn pair_similarities(pairs: &[PairExample], embedder: &dyn BatchEmbed) -> Result<Vec<f64>> {
    let m = embed_unique(
        embedder,
        pairs.iter().flat_map(|p| {
            [(p.sentence1.as_str(), p.instruction.as_str()), (p.sentence2.as_str(), p.instruction.as_str())]
        }),
    )?;
    pairs
        .iter()
        .map(|p| cosine_similarity(lookup(&m, &p.sentence1, &p.instruction), lookup(&m, &p.sentence2, &p.instruction)))
        .collect()
}

pub fn run_sts_benchmark(pairs: &[PairExample], embedder: &dyn BatchEmbed) -> Result<StsScore> {
    for r in [0, 1] {
        if !pairs.iter().any(|p| p.rating == r) {
            return Err(Error::DegenerateInput(format!("no pairs rated {r}")));
        }
    }
    let sims = pair_similarities(pairs, embedder)?;
    let ratings: Vec<f64> = pairs.iter().map(|p| f64::from(p.rating)).collect();
    Ok(StsScore {
        spearman: spearman(&sims, &ratings)?,
        n_pairs: pairs.len(),
    })
}

/// L2-normalizes, runs k-means and scores against gold labels.
pub fn cluster_and_score(embeddings: &[Embedding], gold: &[String], k: usize, seed: u64) -> Result<f64> {
    let normalized: Vec<Embedding> = embeddings.iter().map(Embedding::normalized).collect::<Result<_>>()?;
    let assignment = kmeans(&normalized, k, seed)?;
    v_measure(gold, &assignment.labels, 1.0)
}

fn embed_documents(documents: &[String], instruction: &str, embedder: &dyn BatchEmbed) -> Result<Vec<Embedding>> {
    let items: Vec<(String, String)> = documents.iter().map(|d| (d.clone(), instruction.to_string())).collect();
    embedder.embed_batch(&items)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiviewScores {
    pub views: BTreeMap<String, f64>,
    pub harmonic_mean: f64,
}

pub fn run_multiview_clustering(task: &ClusteringTask, embedder: &dyn BatchEmbed, seed: u64) -> Result<MultiviewScores> {
    task.validate()?;
    let mut views = BTreeMap::new();
    for (name, view) in &task.views {
        let e = embed_documents(&task.documents, &view.instruction, embedder)?;
        views.insert(name.clone(), cluster_and_score(&e, &view.labels, view.k, seed)?);
    }
    let scores: Vec<f64> = views.values().copied().collect();
    Ok(MultiviewScores {
        harmonic_mean: harmonic_mean_all(&scores)?,
        views,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessScores {
    pub scores: BTreeMap<InstructionSet, Vec<f64>>,
    pub means: BTreeMap<InstructionSet, f64>,
    pub delta_ci: f64,
    pub delta_ii: f64,
}

/// Set means and the correct/implicit minus incorrect gaps.
pub fn robustness_from_scores(scores: BTreeMap<InstructionSet, Vec<f64>>) -> Result<RobustnessScores> {
    let mut means = BTreeMap::new();
    for set in InstructionSet::ALL {
        let s = scores
            .get(&set)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::MissingCriterion(format!("{set:?}").to_lowercase()))?;
        means.insert(set, s.iter().sum::<f64>() / s.len() as f64);
    }
    let m = |s| means[&s];
    Ok(RobustnessScores {
        delta_ci: m(InstructionSet::Correct) - m(InstructionSet::Incorrect),
        delta_ii: m(InstructionSet::Implicit) - m(InstructionSet::Incorrect),
        means,
        scores,
    })
}

pub fn run_robustness_suite(suite: &RobustnessSuite, embedder: &dyn BatchEmbed, seed: u64) -> Result<RobustnessScores> {
    suite.validate()?;
    let view = suite.task.views.values().next().expect("validated single view");
    let mut scores = BTreeMap::new();
    for (set, instructions) in &suite.instruction_sets {
        let mut s = Vec::with_capacity(instructions.len());
        for instruction in instructions {
            let e = embed_documents(&suite.task.documents, instruction, embedder)?;
            s.push(cluster_and_score(&e, &view.labels, view.k, seed)?);
        }
        scores.insert(*set, s);
    }
    robustness_from_scores(scores)
}
