//! From generation records to embeddings.
//!
//! Direct methods pool the LM's own hidden states ([`aggregate`]), optionally
//! skipping uninformative answer tokens ([`filter`]). Re-encoding embeds the
//! sampled answers with a separate embedder and averages them. The
//! [`embed_instructed`] entry point runs the whole render, truncate,
//! generate and pool sequence.

use serde::{Deserialize, Serialize};

use crate::backend::{
    ArchitectureMode, EmbedRequest, Embedder, GenerationBackend, GenerationRecord, GenerationRequest,
    GenerationSample, DEFAULT_MASK_COUNT, SHORT_MAX_NEW_TOKENS,
};
use crate::error::{Error, Result};
use crate::math::{self, Embedding};
use crate::prompting::{render_prompt, try_truncate_input, PromptTemplate, DEFAULT_TOKEN_BUDGET};

pub mod aggregate;
pub mod filter;

pub use aggregate::{direct_aggregate, method_available};
pub use filter::{filtered_avg_gen, FilterConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "avg-gen")]
    AvgGen,
    #[serde(rename = "avg-ppt")]
    AvgPpt,
    #[serde(rename = "1st-gen")]
    FirstGen,
    #[serde(rename = "last-gen")]
    LastGen,
    #[serde(rename = "avg-all")]
    AvgAll,
    #[serde(rename = "re-enc")]
    ReEnc,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::AvgGen,
        Method::AvgPpt,
        Method::FirstGen,
        Method::LastGen,
        Method::AvgAll,
        Method::ReEnc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AvgGen => "avg-gen",
            Self::AvgPpt => "avg-ppt",
            Self::FirstGen => "1st-gen",
            Self::LastGen => "last-gen",
            Self::AvgAll => "avg-all",
            Self::ReEnc => "re-enc",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidRequest(format!("unknown method {s:?}")))
    }
}

fn default_layer() -> i64 {
    -1
}
fn one() -> usize {
    1
}
fn default_max_new_tokens() -> usize {
    SHORT_MAX_NEW_TOKENS
}
fn default_budget() -> usize {
    DEFAULT_TOKEN_BUDGET
}
fn default_mask_count() -> usize {
    DEFAULT_MASK_COUNT
}

/// How to turn one `(input, instruction)` pair into an embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub method: Method,
    /// Ignored by `re-enc`.
    #[serde(default = "default_layer")]
    pub layer: i64,
    /// Only valid with `avg-gen`.
    #[serde(default)]
    pub filter: Option<FilterConfig>,
    /// Samples per prompt; direct methods use the first sample only.
    #[serde(default = "one")]
    pub n_samples: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default = "default_budget")]
    pub token_budget: usize,
    /// Overrides the architecture reported by the backend.
    #[serde(default)]
    pub architecture_mode: Option<ArchitectureMode>,
    #[serde(default = "default_mask_count")]
    pub mask_count: usize,
    /// Normalize each re-encoded answer before averaging (off: raw mean).
    #[serde(default)]
    pub normalize_reencoded: bool,
}

impl EncodingSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            layer: -1,
            filter: None,
            n_samples: 1,
            temperature: 0.0,
            max_new_tokens: SHORT_MAX_NEW_TOKENS,
            token_budget: DEFAULT_TOKEN_BUDGET,
            architecture_mode: None,
            mask_count: DEFAULT_MASK_COUNT,
            normalize_reencoded: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidRequest(m.to_string()));
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be >= 0");
        }
        if self.temperature == 0.0 && self.n_samples > 1 && self.method == Method::ReEnc {
            return bad("sampling several answers needs temperature > 0");
        }
        if self.max_new_tokens == 0 || self.token_budget == 0 || self.mask_count == 0 {
            return bad("max_new_tokens, token_budget and mask_count must be positive");
        }
        if let Some(f) = &self.filter {
            if self.method != Method::AvgGen {
                return bad("token filtering applies to avg-gen only");
            }
            f.validate()?;
        }
        Ok(())
    }

    fn request(&self, prompt: String, mode: ArchitectureMode) -> GenerationRequest {
        let (n_samples, temperature) = match self.method {
            Method::ReEnc => (self.n_samples, self.temperature),
            _ => (1, self.temperature),
        };
        GenerationRequest {
            prompt,
            n_samples,
            temperature,
            max_new_tokens: self.max_new_tokens,
            layers: vec![if self.method == Method::ReEnc { -1 } else { self.layer }],
            architecture_mode: mode,
            mask_count: self.mask_count,
        }
    }
}

/// Mean of the embedder outputs for each sampled answer.
pub fn reencode(samples: &[GenerationSample], embedder: &dyn Embedder) -> Result<Embedding> {
    reencode_with(samples, embedder, false)
}

pub fn reencode_with(samples: &[GenerationSample], embedder: &dyn Embedder, normalize_each: bool) -> Result<Embedding> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if let Some(i) = samples.iter().position(|s| s.text.trim().is_empty()) {
        return Err(Error::DegenerateRecord(format!("sample {i} has an empty answer")));
    }
    let vectors = embedder.embed_texts(&EmbedRequest {
        texts: samples.iter().map(|s| s.text.clone()).collect(),
        normalize: normalize_each,
    })?;
    if vectors.len() != samples.len() {
        return Err(Error::Protocol(format!("{} answers but {} vectors", samples.len(), vectors.len())));
    }
    math::mean(&vectors)
}

/// Pools a record according to `spec` (the generation step already done).
pub fn encode_record(
    record: &GenerationRecord,
    spec: &EncodingSpec,
    instruction: &str,
    embedder: Option<&dyn Embedder>,
) -> Result<Embedding> {
    match (spec.method, &spec.filter) {
        (Method::ReEnc, _) => {
            let embedder = embedder.ok_or_else(|| Error::BackendUnreachable("re-enc needs an embedder".into()))?;
            reencode_with(&record.samples, embedder, spec.normalize_reencoded)
        }
        (Method::AvgGen, Some(f)) => filtered_avg_gen(record, spec.layer, f, instruction),
        (m, _) => direct_aggregate(record, m, spec.layer),
    }
}

/// Embedding plus the answers it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedText {
    pub embedding: Embedding,
    pub answers: Vec<String>,
}

/// Render, truncate, generate and pool one `(input, instruction)` pair.
pub struct Encoder<'a> {
    pub spec: EncodingSpec,
    pub template: PromptTemplate,
    pub generator: &'a dyn GenerationBackend,
    pub embedder: Option<&'a dyn Embedder>,
    mode: ArchitectureMode,
}

impl<'a> Encoder<'a> {
    pub fn new(
        spec: EncodingSpec,
        template: PromptTemplate,
        generator: &'a dyn GenerationBackend,
        embedder: Option<&'a dyn Embedder>,
    ) -> Result<Self> {
        spec.validate()?;
        if spec.method == Method::ReEnc && embedder.is_none() {
            return Err(Error::InvalidRequest("re-enc needs an embedder backend".into()));
        }
        let mode = match spec.architecture_mode {
            Some(m) => m,
            None => generator.info()?.architecture_mode,
        };
        if spec.method != Method::ReEnc {
            aggregate::check_available(spec.method, mode)?;
        }
        Ok(Self {
            spec,
            template,
            generator,
            embedder,
            mode,
        })
    }

    pub fn encode(&self, input: &str, instruction: &str) -> Result<EncodedText> {
        let prompt = render_prompt(input, instruction, &self.template)?.with_budget(self.spec.token_budget);
        let prompt = try_truncate_input(&prompt, |t| self.generator.token_len(t))?;
        let record = self.generator.generate(&self.spec.request(prompt.text, self.mode))?;
        let embedding = encode_record(&record, &self.spec, instruction, self.embedder)?;
        Ok(EncodedText {
            embedding,
            answers: record.samples.into_iter().map(|s| s.text).collect(),
        })
    }

    /// Encodes many pairs, in parallel up to the backend's in-flight bound.
    /// Output order follows input order.
    pub fn encode_all(&self, items: &[(String, String)]) -> Result<Vec<EncodedText>> {
        use rayon::prelude::*;
        let threads = self.generator.max_in_flight().max(1);
        if threads == 1 || items.len() < 2 {
            return items.iter().map(|(x, i)| self.encode(x, i)).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::BackendUnreachable(e.to_string()))?;
        pool.install(|| items.par_iter().map(|(x, i)| self.encode(x, i)).collect())
    }
}

/// One-call instruction-conditioned embedding.
pub fn embed_instructed(
    input: &str,
    instruction: &str,
    spec: &EncodingSpec,
    template: &PromptTemplate,
    generator: &dyn GenerationBackend,
    embedder: Option<&dyn Embedder>,
) -> Result<Embedding> {
    Encoder::new(spec.clone(), template.clone(), generator, embedder)?
        .encode(input, instruction)
        .map(|e| e.embedding)
}
