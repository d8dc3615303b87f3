//! Record/replay container for generation records and embedder outputs.
//!
//! Layout: the 8-byte magic `INBDREC1`, a little-endian `u32` index length,
//! the JSON index, then raw little-endian `f32` blocks. Index entries point
//! into the float area by element offset.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    BackendInfo, EmbedRequest, Embedder, GenerationBackend, GenerationRecord, GenerationRequest,
    GenerationSample, HiddenStates,
};
use crate::error::{Error, Result};
use crate::math::Embedding;

pub const MAGIC: &[u8; 8] = b"INBDREC1";

/// Lookup key for a stored generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordKey {
    pub prompt: String,
    pub n_samples: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub layers: Vec<i64>,
}

impl RecordKey {
    pub fn of(request: &GenerationRequest) -> Self {
        Self {
            prompt: request.prompt.clone(),
            n_samples: request.n_samples,
            temperature: request.temperature,
            max_new_tokens: request.max_new_tokens,
            layers: request.layers.clone(),
        }
    }

    fn hash_key(&self) -> (String, usize, u64, usize, Vec<i64>) {
        (
            self.prompt.clone(),
            self.n_samples,
            self.temperature.to_bits(),
            self.max_new_tokens,
            self.layers.clone(),
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BlockRef {
    layer: usize,
    rows: usize,
    offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StoredSample {
    sample: GenerationSample,
    special_token_positions: Vec<usize>,
    hidden: Vec<BlockRef>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StoredRecord {
    key: RecordKey,
    prompt_len: usize,
    num_layers: usize,
    dim: usize,
    architecture_mode: super::ArchitectureMode,
    samples: Vec<StoredSample>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StoredEmbedding {
    text: String,
    normalize: bool,
    dim: usize,
    offset: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Index {
    info: Option<BackendInfo>,
    records: Vec<StoredRecord>,
    embeddings: Vec<StoredEmbedding>,
    token_lens: BTreeMap<String, usize>,
}

/// In-memory contents of a replay file.
#[derive(Clone, Debug, Default)]
pub struct ReplayStore {
    pub info: Option<BackendInfo>,
    pub records: Vec<(RecordKey, GenerationRecord)>,
    /// Raw (unnormalized) embedder outputs keyed by text.
    pub embeddings: Vec<(String, Vec<f32>)>,
    pub token_lens: BTreeMap<String, usize>,
}

impl ReplayStore {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut floats: Vec<f32> = Vec::new();
        let mut index = Index {
            info: self.info.clone(),
            token_lens: self.token_lens.clone(),
            ..Index::default()
        };
        for (key, r) in &self.records {
            let samples = r
                .samples
                .iter()
                .enumerate()
                .map(|(s, sample)| StoredSample {
                    sample: sample.clone(),
                    special_token_positions: r.special_token_positions[s].iter().copied().collect(),
                    hidden: r.hidden[s]
                        .iter()
                        .map(|(&layer, m)| {
                            let offset = floats.len() as u64;
                            floats.extend_from_slice(m.data());
                            BlockRef { layer, rows: m.rows(), offset }
                        })
                        .collect(),
                })
                .collect();
            index.records.push(StoredRecord {
                key: key.clone(),
                prompt_len: r.prompt_len,
                num_layers: r.num_layers,
                dim: r.dim,
                architecture_mode: r.architecture_mode,
                samples,
            });
        }
        for (text, v) in &self.embeddings {
            index.embeddings.push(StoredEmbedding {
                text: text.clone(),
                normalize: false,
                dim: v.len(),
                offset: floats.len() as u64,
            });
            floats.extend_from_slice(v);
        }
        let json = serde_json::to_vec(&index).expect("index serializes");
        let mut out = Vec::with_capacity(12 + json.len() + floats.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for f in floats {
            out.extend_from_slice(&f.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptFile(m.to_string());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + len).ok_or_else(|| corrupt("truncated index"))?;
        let index: Index = serde_json::from_slice(body).map_err(|e| Error::CorruptFile(format!("index: {e}")))?;
        let raw = &bytes[12 + len..];
        if !raw.len().is_multiple_of(4) {
            return Err(corrupt("float area is not a whole number of f32"));
        }
        let floats: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let block = |offset: u64, n: usize| -> Result<Vec<f32>> {
            let start = offset as usize;
            floats
                .get(start..start + n)
                .map(<[f32]>::to_vec)
                .ok_or_else(|| corrupt("block out of range"))
        };

        let mut store = ReplayStore {
            info: index.info,
            token_lens: index.token_lens,
            ..Self::default()
        };
        for r in index.records {
            let mut hidden = Vec::new();
            let mut specials = Vec::new();
            let mut samples = Vec::new();
            for s in r.samples {
                let mut layers = BTreeMap::new();
                for b in s.hidden {
                    let data = block(b.offset, b.rows * r.dim)?;
                    layers.insert(b.layer, HiddenStates::new(b.rows, r.dim, data)?);
                }
                hidden.push(layers);
                specials.push(s.special_token_positions.into_iter().collect::<BTreeSet<_>>());
                samples.push(s.sample);
            }
            let record = GenerationRecord {
                prompt_len: r.prompt_len,
                num_layers: r.num_layers,
                dim: r.dim,
                architecture_mode: r.architecture_mode,
                samples,
                hidden,
                special_token_positions: specials,
            };
            record.validate().map_err(|e| Error::CorruptFile(e.to_string()))?;
            store.records.push((r.key, record));
        }
        for e in index.embeddings {
            store.embeddings.push((e.text, block(e.offset, e.dim)?));
        }
        Ok(store)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Backend and embedder serving answers from a [`ReplayStore`].
#[derive(Debug)]
pub struct ReplayBackend {
    info: Option<BackendInfo>,
    records: HashMap<(String, usize, u64, usize, Vec<i64>), GenerationRecord>,
    embeddings: HashMap<String, Vec<f32>>,
    token_lens: BTreeMap<String, usize>,
}

impl ReplayBackend {
    pub fn new(store: ReplayStore) -> Self {
        Self {
            info: store.info,
            records: store.records.into_iter().map(|(k, r)| (k.hash_key(), r)).collect(),
            embeddings: store.embeddings.into_iter().collect(),
            token_lens: store.token_lens,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn load_replay(path: &Path) -> Result<ReplayBackend> {
    Ok(ReplayBackend::new(ReplayStore::read(path)?))
}

impl GenerationBackend for ReplayBackend {
    fn info(&self) -> Result<BackendInfo> {
        self.info.clone().ok_or_else(|| Error::MissingRecord("backend info".into()))
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationRecord> {
        request.validate()?;
        self.records
            .get(&RecordKey::of(request).hash_key())
            .cloned()
            .ok_or_else(|| Error::MissingRecord(format!("prompt {:?}", request.prompt)))
    }

    fn token_len(&self, text: &str) -> Result<usize> {
        self.token_lens
            .get(text)
            .copied()
            .ok_or_else(|| Error::MissingRecord(format!("token length of {text:?}")))
    }
}

impl Embedder for ReplayBackend {
    fn embed_texts(&self, request: &EmbedRequest) -> Result<Vec<Embedding>> {
        request.validate()?;
        let raw = request
            .texts
            .iter()
            .map(|t| {
                self.embeddings
                    .get(t)
                    .cloned()
                    .ok_or_else(|| Error::MissingRecord(format!("embedding of {t:?}")))
            })
            .collect::<Result<_>>()?;
        super::finish_vectors(raw, request.normalize)
    }
}

/// Wraps live backends and captures every call for later replay.
pub struct RecordingBackend<G, E> {
    generator: G,
    embedder: Option<E>,
    store: Mutex<ReplayStore>,
}

impl<G: GenerationBackend, E: Embedder> RecordingBackend<G, E> {
    pub fn new(generator: G, embedder: Option<E>) -> Self {
        Self {
            generator,
            embedder,
            store: Mutex::new(ReplayStore::default()),
        }
    }

    /// Snapshot of everything recorded so far, in a canonical order.
    pub fn store(&self) -> ReplayStore {
        let mut s = self.store.lock().unwrap().clone();
        s.records.sort_by(|a, b| {
            (&a.0.prompt, a.0.n_samples, a.0.max_new_tokens, &a.0.layers, a.0.temperature.to_bits()).cmp(&(
                &b.0.prompt,
                b.0.n_samples,
                b.0.max_new_tokens,
                &b.0.layers,
                b.0.temperature.to_bits(),
            ))
        });
        s.records.dedup_by(|a, b| a.0.hash_key() == b.0.hash_key());
        s.embeddings.sort_by(|a, b| a.0.cmp(&b.0));
        s.embeddings.dedup_by(|a, b| a.0 == b.0);
        s
    }
}

impl<G: GenerationBackend, E: Embedder> GenerationBackend for RecordingBackend<G, E> {
    fn info(&self) -> Result<BackendInfo> {
        let info = self.generator.info()?;
        self.store.lock().unwrap().info = Some(info.clone());
        Ok(info)
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationRecord> {
        let record = self.generator.generate(request)?;
        let mut s = self.store.lock().unwrap();
        if s.info.is_none() {
            s.info = self.generator.info().ok();
        }
        s.records.push((RecordKey::of(request), record.clone()));
        Ok(record)
    }

    fn token_len(&self, text: &str) -> Result<usize> {
        let n = self.generator.token_len(text)?;
        self.store.lock().unwrap().token_lens.insert(text.to_string(), n);
        Ok(n)
    }

    fn max_in_flight(&self) -> usize {
        self.generator.max_in_flight()
    }
}

impl<G: GenerationBackend, E: Embedder> Embedder for RecordingBackend<G, E> {
    fn embed_texts(&self, request: &EmbedRequest) -> Result<Vec<Embedding>> {
        let embedder = self
            .embedder
            .as_ref()
            .ok_or_else(|| Error::BackendUnreachable("no embedder configured".into()))?;
        let raw = embedder.embed_texts(&EmbedRequest {
            texts: request.texts.clone(),
            normalize: false,
        })?;
        {
            let mut s = self.store.lock().unwrap();
            for (t, v) in request.texts.iter().zip(&raw) {
                s.embeddings.push((t.clone(), v.to_f32()));
            }
        }
        super::finish_vectors(raw.iter().map(Embedding::to_f32).collect(), request.normalize)
    }
}
