//! Language-model and embedder backends.
//!
//! A [`GenerationBackend`] turns a rendered prompt into sampled answers plus
//! the per-layer hidden states of every prompt and generation position. An
//! [`Embedder`] maps texts to vectors and serves as the re-encoder. Both sit
//! behind a small JSON wire protocol ([`wire`]) so real models can live in a
//! separate process; [`synthetic`] and [`replay`] implement them locally.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Embedding;

pub mod http;
pub mod replay;
pub mod synthetic;
pub mod wire;

/// Answer length budget for chat-tuned models.
pub const CHAT_MAX_NEW_TOKENS: usize = 40;
/// Answer length budget for models trained on short answers.
pub const SHORT_MAX_NEW_TOKENS: usize = 3;
/// Mask tokens appended for encoder-only models at inference.
pub const DEFAULT_MASK_COUNT: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchitectureMode {
    Causal,
    EncoderDecoder,
    EncoderOnly,
}

impl std::fmt::Display for ArchitectureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Causal => "causal",
            Self::EncoderDecoder => "encoder-decoder",
            Self::EncoderOnly => "encoder-only",
        })
    }
}

impl std::str::FromStr for ArchitectureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(Self::Causal),
            "encoder-decoder" => Ok(Self::EncoderDecoder),
            "encoder-only" => Ok(Self::EncoderOnly),
            other => Err(Error::UnsupportedMode(other.to_string())),
        }
    }
}

fn default_mask_count() -> usize {
    DEFAULT_MASK_COUNT
}

fn default_mode() -> ArchitectureMode {
    ArchitectureMode::Causal
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub n_samples: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    /// 0 is the input embedding layer, L the last layer; negative values count from the end.
    pub layers: Vec<i64>,
    #[serde(default = "default_mode")]
    pub architecture_mode: ArchitectureMode,
    #[serde(default = "default_mask_count")]
    pub mask_count: usize,
}

impl GenerationRequest {
    pub fn greedy(prompt: impl Into<String>, max_new_tokens: usize, layers: Vec<i64>) -> Self {
        Self {
            prompt: prompt.into(),
            n_samples: 1,
            temperature: 0.0,
            max_new_tokens,
            layers,
            architecture_mode: ArchitectureMode::Causal,
            mask_count: DEFAULT_MASK_COUNT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidRequest(m.to_string()));
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be a finite value >= 0");
        }
        if self.temperature == 0.0 && self.n_samples != 1 {
            return bad("greedy decoding (temperature 0) yields exactly one sample");
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be positive");
        }
        if self.mask_count == 0 {
            return bad("mask_count must be positive");
        }
        if self.layers.is_empty() {
            return bad("layers must be non-empty");
        }
        let unique: BTreeSet<_> = self.layers.iter().collect();
        if unique.len() != self.layers.len() {
            return bad("duplicate layer index");
        }
        Ok(())
    }
}

/// Resolves a possibly negative layer index against a model with `num_layers` layers.
pub fn resolve_layer(index: i64, num_layers: usize) -> Result<usize> {
    let l = num_layers as i64;
    let resolved = if index < 0 { l + 1 + index } else { index };
    if (0..=l).contains(&resolved) {
        Ok(resolved as usize)
    } else {
        Err(Error::LayerMissing(index))
    }
}

/// One sampled answer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSample {
    pub tokens: Vec<String>,
    pub token_ids: Vec<u32>,
    pub text: String,
    pub finished_with_eos: bool,
}

impl GenerationSample {
    pub fn n_gen(&self) -> usize {
        self.tokens.len()
    }
}

/// Row-major `rows x dim` matrix of 32-bit hidden states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenStates {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl HiddenStates {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Protocol(format!(
                "hidden payload has {} floats, expected {rows}x{dim}",
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Protocol("ragged hidden rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0` and comparing NaN payloads.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.dim == other.dim
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Everything a backend returns for one prompt.
///
/// Row `i` (0-based) of each hidden matrix is the state at position `i + 1`:
/// rows `0..prompt_len` are prompt positions and the following `n_gen` rows
/// are generation positions. Hidden states and special-token rows are kept
/// per sample because sampled answers differ in length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt_len: usize,
    pub num_layers: usize,
    pub dim: usize,
    pub architecture_mode: ArchitectureMode,
    pub samples: Vec<GenerationSample>,
    /// Per sample, resolved layer index to hidden matrix.
    pub hidden: Vec<BTreeMap<usize, HiddenStates>>,
    /// Per sample, rows holding tokenizer special tokens.
    pub special_token_positions: Vec<BTreeSet<usize>>,
}

impl GenerationRecord {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Protocol(m));
        if self.samples.is_empty() {
            return err("record has no samples".into());
        }
        if self.hidden.len() != self.samples.len() || self.special_token_positions.len() != self.samples.len() {
            return err("per-sample hidden/special arrays do not match sample count".into());
        }
        for (s, sample) in self.samples.iter().enumerate() {
            if sample.tokens.is_empty() || sample.tokens.len() != sample.token_ids.len() {
                return err(format!("sample {s}: tokens and token_ids must be equal-length and non-empty"));
            }
            let rows = self.prompt_len + sample.n_gen();
            for (layer, m) in &self.hidden[s] {
                if *layer > self.num_layers {
                    return err(format!("sample {s}: layer {layer} beyond num_layers {}", self.num_layers));
                }
                if m.rows() != rows || m.dim() != self.dim {
                    return err(format!(
                        "sample {s} layer {layer}: hidden is {}x{}, expected {rows}x{}",
                        m.rows(),
                        m.dim(),
                        self.dim
                    ));
                }
            }
            if let Some(&p) = self.special_token_positions[s].iter().next_back() {
                if p >= rows {
                    return err(format!("sample {s}: special position {p} outside {rows} rows"));
                }
            }
        }
        Ok(())
    }

    /// Bit-exact comparison including hidden float payloads.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.prompt_len == other.prompt_len
            && self.num_layers == other.num_layers
            && self.dim == other.dim
            && self.architecture_mode == other.architecture_mode
            && self.samples == other.samples
            && self.special_token_positions == other.special_token_positions
            && self.hidden.len() == other.hidden.len()
            && self.hidden.iter().zip(&other.hidden).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|((la, ma), (lb, mb))| la == lb && ma.bit_eq(mb))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub num_layers: usize,
    pub dim: usize,
    pub architecture_mode: ArchitectureMode,
    pub tokenizer_name: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
    #[serde(default)]
    pub normalize: bool,
}

impl EmbedRequest {
    pub fn validate(&self) -> Result<()> {
        if self.texts.is_empty() {
            return Err(Error::InvalidRequest("texts must be non-empty".into()));
        }
        if self.texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::InvalidRequest("texts must not be empty".into()));
        }
        Ok(())
    }
}

pub trait GenerationBackend: Send + Sync {
    fn info(&self) -> Result<BackendInfo>;

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationRecord>;

    /// Model-specific token count of `text`.
    fn token_len(&self, text: &str) -> Result<usize>;

    /// Upper bound on concurrent requests this backend accepts.
    fn max_in_flight(&self) -> usize {
        1
    }
}

pub trait Embedder: Send + Sync {
    fn embed_texts(&self, request: &EmbedRequest) -> Result<Vec<Embedding>>;
}

impl<T: GenerationBackend + ?Sized> GenerationBackend for Arc<T> {
    fn info(&self) -> Result<BackendInfo> {
        (**self).info()
    }
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationRecord> {
        (**self).generate(request)
    }
    fn token_len(&self, text: &str) -> Result<usize> {
        (**self).token_len(text)
    }
    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
}

impl<T: Embedder + ?Sized> Embedder for Arc<T> {
    fn embed_texts(&self, request: &EmbedRequest) -> Result<Vec<Embedding>> {
        (**self).embed_texts(request)
    }
}

/// Converts raw embedder output, applying normalization and checking uniform dimension.
pub(crate) fn finish_vectors(raw: Vec<Vec<f32>>, normalize: bool) -> Result<Vec<Embedding>> {
    let dim = raw.first().map_or(0, Vec::len);
    raw.into_iter()
        .map(|v| {
            if v.len() != dim {
                return Err(Error::Protocol("embedder returned ragged vectors".into()));
            }
            let e = Embedding::from_f32(&v)?;
            if normalize {
                e.normalized()
            } else {
                Ok(e)
            }
        })
        .collect()
}
