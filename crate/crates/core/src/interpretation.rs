//! TF-IDF keywords per cluster and entropy ordering against gold labels.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::clustering::{cluster_entropy, ClusterAssignment};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: usize,
    pub size: usize,
    pub top_words: Vec<(String, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<BTreeMap<String, usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub clusters: Vec<ClusterSummary>,
}

/// Lowercase, split on non-alphanumerics, drop tokens shorter than 2 chars.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
}

/// Per-document `(term, tf * idf)` lists, best first, ties lexicographic.
///
/// `idf(t) = ln((1 + K) / (1 + df(t))) + 1`.
pub fn tfidf_rank(documents: &[String]) -> Vec<Vec<(String, f64)>> {
    let k = documents.len() as f64;
    let tfs: Vec<HashMap<String, usize>> = documents
        .iter()
        .map(|d| {
            let mut tf = HashMap::new();
            for t in tokenize(d) {
                *tf.entry(t).or_insert(0) += 1;
            }
            tf
        })
        .collect();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for tf in &tfs {
        for t in tf.keys() {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    tfs.iter()
        .map(|tf| {
            let mut scored: Vec<(String, f64)> = tf
                .iter()
                .map(|(t, &c)| {
                    let idf = ((1.0 + k) / (1.0 + df[t.as_str()] as f64)).ln() + 1.0;
                    (t.clone(), c as f64 * idf)
                })
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            scored
        })
        .collect()
}

/// Top `top_k` TF-IDF words per cluster over the concatenated member generations.
pub fn explain_clusters(generations: &[String], assignment: &ClusterAssignment, top_k: usize) -> Result<ClusterReport> {
    if generations.len() != assignment.labels.len() {
        return Err(Error::LengthMismatch {
            left: generations.len(),
            right: assignment.labels.len(),
        });
    }
    if top_k == 0 {
        return Err(Error::InvalidRequest("top_k must be positive".into()));
    }
    let mut docs = vec![String::new(); assignment.k];
    let sizes = assignment.sizes();
    for (text, &label) in generations.iter().zip(&assignment.labels) {
        let doc = &mut docs[label];
        if !doc.is_empty() {
            doc.push('\n');
        }
        doc.push_str(text);
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyCluster(empty));
    }
    let ranked = tfidf_rank(&docs);
    let clusters = ranked
        .into_iter()
        .enumerate()
        .map(|(id, mut words)| {
            words.truncate(top_k);
            ClusterSummary {
                id,
                size: sizes[id],
                top_words: words,
                histogram: None,
                entropy: None,
            }
        })
        .collect();
    Ok(ClusterReport { clusters })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyOrdering {
    pub order: Vec<usize>,
    pub histograms: Vec<BTreeMap<String, usize>>,
    pub entropies: Vec<f64>,
}

/// Clusters sorted by ascending gold-label entropy, ties by id. Empty clusters are skipped.
pub fn order_clusters_by_entropy(assignment: &ClusterAssignment, gold: &[String]) -> Result<EntropyOrdering> {
    if gold.len() != assignment.labels.len() {
        return Err(Error::LengthMismatch {
            left: assignment.labels.len(),
            right: gold.len(),
        });
    }
    let mut histograms = vec![BTreeMap::<String, usize>::new(); assignment.k];
    for (&c, label) in assignment.labels.iter().zip(gold) {
        *histograms[c].entry(label.clone()).or_insert(0) += 1;
    }
    let entropies: Vec<f64> = histograms
        .iter()
        .map(|h| cluster_entropy(h).unwrap_or(f64::NAN))
        .collect();
    let mut order: Vec<usize> = (0..assignment.k).filter(|&c| !histograms[c].is_empty()).collect();
    order.sort_by(|&a, &b| entropies[a].total_cmp(&entropies[b]).then(a.cmp(&b)));
    Ok(EntropyOrdering {
        order,
        histograms,
        entropies,
    })
}

impl ClusterReport {
    /// Fills histograms and entropies and reorders clusters by entropy.
    pub fn with_gold(mut self, assignment: &ClusterAssignment, gold: &[String]) -> Result<Self> {
        let ord = order_clusters_by_entropy(assignment, gold)?;
        for c in &mut self.clusters {
            c.histogram = Some(ord.histograms[c.id].clone());
            c.entropy = Some(ord.entropies[c.id]);
        }
        let mut by_id: BTreeMap<usize, ClusterSummary> = self.clusters.into_iter().map(|c| (c.id, c)).collect();
        self.clusters = ord.order.iter().filter_map(|id| by_id.remove(id)).collect();
        Ok(self)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>4}  {:>6}  {:>8}  top words", "id", "size", "entropy");
        for c in &self.clusters {
            let entropy = c.entropy.map_or("-".to_string(), |e| format!("{e:.4}"));
            let words: Vec<String> = c.top_words.iter().map(|(w, s)| format!("{w}({s:.2})")).collect();
            let _ = writeln!(out, "{:>4}  {:>6}  {:>8}  {}", c.id, c.size, entropy, words.join(" "));
            if let Some(h) = &c.histogram {
                let mut hist: Vec<_> = h.iter().collect();
                hist.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
                let labels: Vec<String> = hist.iter().map(|(l, n)| format!("{l}:{n}")).collect();
                let _ = writeln!(out, "{:>24}{}", "", labels.join(" "));
            }
        }
        out
    }
}
