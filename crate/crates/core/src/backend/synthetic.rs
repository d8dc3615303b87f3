//! Deterministic, model-free backend and embedder.
//!
//! Answers come from a lookup table keyed by `(input, instruction)`. Every
//! hidden row is a pseudo-random unit vector derived from a SHA-256 hash of
//! a token string and the layer index, so results are stable across
//! processes and platforms.
//!
//! Row layout for a prompt of `N` tokens and an answer `t_1..t_G`:
//! rows `0..N-1` hash the prompt tokens, row `N-1 + (j-1)` hashes `t_j`
//! (the state that predicts `t_j`), and the terminal row `N+G-1` hashes
//! `t_G` under a separate salt.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    resolve_layer, ArchitectureMode, BackendInfo, EmbedRequest, Embedder, GenerationBackend, GenerationRecord,
    GenerationRequest, GenerationSample, HiddenStates,
};
use crate::error::{Error, Result};
use crate::math::Embedding;
use crate::prompting::PromptTemplate;

pub const WILDCARD: &str = "*";
pub const BOS_TOKEN: &str = "<s>";
pub const MASK_TOKEN: &str = "<mask>";

/// Stable unit vector for `(salt, token, layer)`.
pub fn hash_unit_vector(salt: &str, token: &str, layer: usize, dim: usize) -> Vec<f32> {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update([0u8]);
    h.update((layer as u64).to_le_bytes());
    h.update(token.as_bytes());
    let seed: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(seed);
    let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / norm) as f32).collect()
}

fn token_id(token: &str) -> u32 {
    let digest = Sha256::digest(token.as_bytes());
    u32::from_le_bytes([digest[0], digest[1], digest[2], digest[3]])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEntry {
    /// Input text, or `*` for any input.
    pub input: String,
    /// Instruction text, or `*` for any instruction.
    pub instruction: String,
    pub answer: String,
    /// Alternative answers drawn when sampling at temperature > 0.
    #[serde(default)]
    pub variants: Vec<String>,
}

fn default_dim() -> usize {
    32
}
fn default_layers() -> usize {
    4
}
fn default_in_flight() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default)]
    pub default_answer: Option<String>,
    #[serde(default)]
    pub entries: Vec<SyntheticEntry>,
    /// Prepend a BOS token flagged as special.
    #[serde(default)]
    pub bos: bool,
    #[serde(default)]
    pub template: PromptTemplate,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: default_dim(),
            num_layers: default_layers(),
            default_answer: None,
            entries: Vec::new(),
            bos: false,
            template: PromptTemplate::default(),
            max_in_flight: default_in_flight(),
        }
    }
}

impl SyntheticConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn with_answer(mut self, input: &str, instruction: &str, answer: &str) -> Self {
        self.entries.push(SyntheticEntry {
            input: input.to_string(),
            instruction: instruction.to_string(),
            answer: answer.to_string(),
            variants: Vec::new(),
        });
        self
    }

    pub fn with_default_answer(mut self, answer: &str) -> Self {
        self.default_answer = Some(answer.to_string());
        self
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticBackend {
    config: SyntheticConfig,
    table: BTreeMap<(String, String), (String, Vec<String>)>,
}

impl SyntheticBackend {
    pub fn new(config: SyntheticConfig) -> Self {
        let table = config
            .entries
            .iter()
            .map(|e| ((e.input.clone(), e.instruction.clone()), (e.answer.clone(), e.variants.clone())))
            .collect();
        Self { config, table }
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    /// Looks up the answer for a pair, falling back to wildcards and then the default.
    pub fn answers_for(&self, input: &str, instruction: &str) -> Result<(String, Vec<String>)> {
        let keys = [(input, instruction), (input, WILDCARD), (WILDCARD, instruction), (WILDCARD, WILDCARD)];
        for (i, ins) in keys {
            if let Some(found) = self.table.get(&(i.to_string(), ins.to_string())) {
                return Ok(found.clone());
            }
        }
        match &self.config.default_answer {
            Some(a) => Ok((a.clone(), Vec::new())),
            None => Err(Error::MissingConfigEntry {
                input: input.to_string(),
                instruction: instruction.to_string(),
            }),
        }
    }

    fn prompt_tokens<'a>(&self, prompt: &'a str) -> Vec<&'a str> {
        let mut tokens = Vec::new();
        if self.config.bos {
            tokens.push(BOS_TOKEN);
        }
        tokens.extend(prompt.split_whitespace());
        tokens
    }

    fn pick_answer(&self, request: &GenerationRequest, sample: usize, answer: &str, variants: &[String]) -> String {
        if request.temperature == 0.0 || variants.is_empty() {
            return answer.to_string();
        }
        let mut h = Sha256::new();
        h.update(request.prompt.as_bytes());
        h.update((sample as u64).to_le_bytes());
        h.update(request.temperature.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        let k = rng.gen_range(0..=variants.len());
        if k == 0 {
            answer.to_string()
        } else {
            variants[k - 1].clone()
        }
    }
}

impl GenerationBackend for SyntheticBackend {
    fn info(&self) -> Result<BackendInfo> {
        Ok(BackendInfo {
            num_layers: self.config.num_layers,
            dim: self.config.dim,
            architecture_mode: ArchitectureMode::Causal,
            tokenizer_name: "whitespace".into(),
        })
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationRecord> {
        request.validate()?;
        let dim = self.config.dim;
        let layers: Vec<usize> = request
            .layers
            .iter()
            .map(|&l| resolve_layer(l, self.config.num_layers))
            .collect::<Result<_>>()?;

        let (input, instruction) = self
            .config
            .template
            .parse(&request.prompt)
            .unwrap_or_else(|| (request.prompt.clone(), String::new()));
        let (answer, variants) = self.answers_for(&input, &instruction)?;

        let prompt_tokens = self.prompt_tokens(&request.prompt);
        let n = prompt_tokens.len();
        if n == 0 {
            return Err(Error::InvalidRequest("empty prompt".into()));
        }

        let mut samples = Vec::with_capacity(request.n_samples);
        let mut hidden = Vec::with_capacity(request.n_samples);
        let mut specials = Vec::with_capacity(request.n_samples);
        for s in 0..request.n_samples {
            let chosen = self.pick_answer(request, s, &answer, &variants);
            let words: Vec<String> = chosen.split_whitespace().map(str::to_string).collect();
            if words.is_empty() {
                return Err(Error::InvalidRequest("configured answer is empty".into()));
            }
            let mut special = BTreeSet::new();
            if self.config.bos {
                special.insert(0);
            }
            let (tokens, finished) = match request.architecture_mode {
                ArchitectureMode::EncoderOnly => {
                    let mut t: Vec<String> = words.into_iter().take(request.mask_count).collect();
                    while t.len() < request.mask_count {
                        special.insert(n - 1 + t.len());
                        t.push(MASK_TOKEN.to_string());
                    }
                    (t, true)
                }
                _ => {
                    let finished = words.len() <= request.max_new_tokens;
                    (words.into_iter().take(request.max_new_tokens).collect::<Vec<_>>(), finished)
                }
            };
            let g = tokens.len();
            if special.contains(&(n + g - 2)) {
                special.insert(n + g - 1);
            }

            let mut per_layer = BTreeMap::new();
            for &layer in &layers {
                let mut data = Vec::with_capacity((n + g) * dim);
                for tok in &prompt_tokens[..n - 1] {
                    data.extend(hash_unit_vector("prompt", tok, layer, dim));
                }
                for tok in &tokens {
                    data.extend(hash_unit_vector("gen", tok, layer, dim));
                }
                data.extend(hash_unit_vector("terminal", &tokens[g - 1], layer, dim));
                per_layer.insert(layer, HiddenStates::new(n + g, dim, data)?);
            }
            hidden.push(per_layer);
            specials.push(special);
            samples.push(GenerationSample {
                token_ids: tokens.iter().map(|t| token_id(t)).collect(),
                text: tokens.join(" "),
                tokens,
                finished_with_eos: finished,
            });
        }

        let record = GenerationRecord {
            prompt_len: n,
            num_layers: self.config.num_layers,
            dim,
            architecture_mode: request.architecture_mode,
            samples,
            hidden,
            special_token_positions: specials,
        };
        record.validate()?;
        Ok(record)
    }

    fn token_len(&self, text: &str) -> Result<usize> {
        Ok(self.prompt_tokens(text).len())
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight.max(1)
    }
}

/// Bag-of-words embedder: the sum of per-token hash vectors of the lowercased text.
#[derive(Clone, Debug)]
pub struct SyntheticEmbedder {
    dim: usize,
}

impl SyntheticEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0f64; self.dim];
        for tok in text.split_whitespace() {
            let v = hash_unit_vector("embed", &tok.to_lowercase(), 0, self.dim);
            for (a, x) in acc.iter_mut().zip(v) {
                *a += f64::from(x);
            }
        }
        acc.into_iter().map(|x| x as f32).collect()
    }
}

impl Default for SyntheticEmbedder {
    fn default() -> Self {
        Self::new(default_dim())
    }
}

impl Embedder for SyntheticEmbedder {
    fn embed_texts(&self, request: &EmbedRequest) -> Result<Vec<Embedding>> {
        request.validate()?;
        let raw = request.texts.iter().map(|t| self.embed_one(t)).collect();
        super::finish_vectors(raw, request.normalize)
    }
}
