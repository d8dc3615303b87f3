//! Backend selection and the corpus-level embed / cluster / explain workflow
//! shared by the CLI, the HTTP service and the C ABI.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::http::{HttpBackend, HttpEmbedder};
use crate::backend::replay::{load_replay, RecordingBackend};
use crate::backend::synthetic::{SyntheticBackend, SyntheticConfig, SyntheticEmbedder};
use crate::backend::{Embedder, GenerationBackend};
use crate::clustering::{kmeans, ClusterAssignment};
use crate::encoding::{EncodedText, Encoder, EncodingSpec};
use crate::error::{Error, Result};
use crate::interpretation::{explain_clusters, ClusterReport};
use crate::math::Embedding;
use crate::prompting::PromptTemplate;

/// Recorder over the pipeline's own shared backends.
pub type Recorder = RecordingBackend<Arc<dyn GenerationBackend>, Arc<dyn Embedder>>;

pub const BACKEND_URL_ENV: &str = "INBEDDER_BACKEND_URL";
pub const DEFAULT_TOP_K: usize = 8;
pub const DEFAULT_SEED: u64 = 42;

/// `synthetic:FILE`, `replay:FILE` or an `http(s)://` URL.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendSpec {
    Synthetic(PathBuf),
    Replay(PathBuf),
    Http(String),
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(p) = s.strip_prefix("synthetic:") {
            Ok(Self::Synthetic(p.into()))
        } else if let Some(p) = s.strip_prefix("replay:") {
            Ok(Self::Replay(p.into()))
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(Self::Http(s.to_string()))
        } else {
            Err(Error::Usage(format!(
                "backend {s:?} must be synthetic:FILE, replay:FILE or an http(s) URL"
            )))
        }
    }
}

/// A generator, an optional re-encoding embedder and the template the backend expects.
#[derive(Clone)]
pub struct Backends {
    pub generator: Arc<dyn GenerationBackend>,
    pub embedder: Option<Arc<dyn Embedder>>,
    pub template: Option<PromptTemplate>,
}

impl Backends {
    pub fn synthetic(config: SyntheticConfig) -> Self {
        let dim = config.dim;
        let template = config.template.clone();
        Self {
            generator: Arc::new(SyntheticBackend::new(config)),
            embedder: Some(Arc::new(SyntheticEmbedder::new(dim))),
            template: Some(template),
        }
    }

    pub fn open(spec: &BackendSpec, max_in_flight: usize) -> Result<Self> {
        match spec {
            BackendSpec::Synthetic(p) => Ok(Self::synthetic(SyntheticConfig::from_file(p)?)),
            BackendSpec::Replay(p) => {
                let r = Arc::new(load_replay(p)?);
                Ok(Self {
                    generator: r.clone(),
                    embedder: Some(r),
                    template: None,
                })
            }
            BackendSpec::Http(url) => Ok(Self {
                generator: Arc::new(HttpBackend::new(url, max_in_flight)?),
                embedder: Some(Arc::new(HttpEmbedder::new(url, max_in_flight)?)),
                template: None,
            }),
        }
    }

    /// Wraps both backends so every call is captured for a replay file.
    pub fn recording(self) -> (Self, Arc<Recorder>) {
        let rec = Arc::new(RecordingBackend::new(self.generator, self.embedder));
        (
            Self {
                generator: rec.clone(),
                embedder: Some(rec.clone()),
                template: self.template,
            },
            rec,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutcome {
    pub assignment: ClusterAssignment,
    pub report: ClusterReport,
    /// Generated answers per document, joined when several were sampled.
    pub generations: Vec<String>,
}

#[derive(Clone)]
pub struct Pipeline {
    pub backends: Backends,
    pub template: PromptTemplate,
}

impl Pipeline {
    /// Uses `template`, else the backend's own, else the default pattern.
    pub fn new(backends: Backends, template: Option<PromptTemplate>) -> Self {
        let template = template.or_else(|| backends.template.clone()).unwrap_or_default();
        Self { backends, template }
    }

    pub fn encoder(&self, spec: &EncodingSpec) -> Result<Encoder<'_>> {
        Encoder::new(
            spec.clone(),
            self.template.clone(),
            self.backends.generator.as_ref(),
            self.backends.embedder.as_deref(),
        )
    }

    pub fn embed_corpus(&self, documents: &[String], instruction: &str, spec: &EncodingSpec) -> Result<Vec<EncodedText>> {
        let items: Vec<(String, String)> = documents.iter().map(|d| (d.clone(), instruction.to_string())).collect();
        self.encoder(spec)?.encode_all(&items)
    }

    /// Embeds under `instruction`, normalizes, clusters and explains.
    pub fn cluster(
        &self,
        documents: &[String],
        instruction: &str,
        spec: &EncodingSpec,
        k: usize,
        seed: u64,
        top_k: usize,
    ) -> Result<ClusterOutcome> {
        if k == 0 {
            return Err(Error::InvalidK("k must be positive".into()));
        }
        if k > documents.len() {
            return Err(Error::KTooLarge { k, n: documents.len() });
        }
        let encoded = self.embed_corpus(documents, instruction, spec)?;
        let normalized: Vec<Embedding> = encoded.iter().map(|e| e.embedding.normalized()).collect::<Result<_>>()?;
        let assignment = kmeans(&normalized, k, seed)?;
        let generations: Vec<String> = encoded.into_iter().map(|e| e.answers.join("\n")).collect();
        let report = explain_clusters(&generations, &assignment, top_k)?;
        Ok(ClusterOutcome {
            assignment,
            report,
            generations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::Method;

    #[test]
    fn parses_backend_specs() {
        assert_eq!("synthetic:a.json".parse::<BackendSpec>().unwrap(), BackendSpec::Synthetic("a.json".into()));
        assert_eq!("replay:r.bin".parse::<BackendSpec>().unwrap(), BackendSpec::Replay("r.bin".into()));
        assert!(matches!("http://h:1".parse::<BackendSpec>().unwrap(), BackendSpec::Http(_)));
        assert!(matches!("ftp://x".parse::<BackendSpec>(), Err(Error::Usage(_))));
    }

    #[test]
    fn clusters_by_answer() {
        let mut cfg = SyntheticConfig::default();
        let docs: Vec<String> = (0..12).map(|i| format!("doc {i}")).collect();
        for (i, d) in docs.iter().enumerate() {
            let topic = ["football match", "stock market", "election vote"][i % 3];
            cfg = cfg.with_answer(d, "topic?", topic);
        }
        let p = Pipeline::new(Backends::synthetic(cfg), None);
        let out = p.cluster(&docs, "topic?", &EncodingSpec::new(Method::AvgGen), 3, 1, 2).unwrap();
        for c in 0..3 {
            let members = out.assignment.members(c);
            let first = &out.generations[members[0]];
            assert!(members.iter().all(|&m| &out.generations[m] == first));
        }
        let words: Vec<&str> = out.report.clusters.iter().map(|c| c.top_words[0].0.as_str()).collect();
        assert_eq!(words.len(), 3);
        assert!(matches!(
            p.cluster(&docs, "topic?", &EncodingSpec::new(Method::AvgGen), 13, 1, 2),
            Err(Error::KTooLarge { .. })
        ));
    }
}
