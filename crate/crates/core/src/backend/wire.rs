//! JSON messages exchanged with remote backends.
//!
//! Float payloads travel as base64 of little-endian `f32`, row-major
//! (positions x dim), so records survive the round-trip bit-exactly.

use std::collections::{BTreeMap, BTreeSet};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{ArchitectureMode, GenerationRecord, GenerationSample, HiddenStates};
use crate::error::{Error, Result};

pub fn encode_f32(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f32(encoded: &str) -> Result<Vec<f32>> {
    let bytes = STANDARD
        .decode(encoded)
        .map_err(|e| Error::Protocol(format!("bad base64 payload: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Protocol(format!("payload of {} bytes is not a whole number of f32", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WireLayer {
    pub layer: usize,
    pub rows: usize,
    pub data: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WireSample {
    pub tokens: Vec<String>,
    pub token_ids: Vec<u32>,
    pub text: String,
    pub finished_with_eos: bool,
    #[serde(default)]
    pub special_token_positions: Vec<usize>,
    pub hidden: Vec<WireLayer>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WireRecord {
    pub prompt_len: usize,
    pub num_layers: usize,
    pub dim: usize,
    pub architecture_mode: ArchitectureMode,
    pub samples: Vec<WireSample>,
}

impl From<&GenerationRecord> for WireRecord {
    fn from(r: &GenerationRecord) -> Self {
        let samples = r
            .samples
            .iter()
            .enumerate()
            .map(|(s, sample)| WireSample {
                tokens: sample.tokens.clone(),
                token_ids: sample.token_ids.clone(),
                text: sample.text.clone(),
                finished_with_eos: sample.finished_with_eos,
                special_token_positions: r.special_token_positions[s].iter().copied().collect(),
                hidden: r.hidden[s]
                    .iter()
                    .map(|(&layer, m)| WireLayer {
                        layer,
                        rows: m.rows(),
                        data: encode_f32(m.data()),
                    })
                    .collect(),
            })
            .collect();
        Self {
            prompt_len: r.prompt_len,
            num_layers: r.num_layers,
            dim: r.dim,
            architecture_mode: r.architecture_mode,
            samples,
        }
    }
}

impl TryFrom<WireRecord> for GenerationRecord {
    type Error = Error;

    fn try_from(w: WireRecord) -> Result<Self> {
        let mut samples = Vec::with_capacity(w.samples.len());
        let mut hidden = Vec::with_capacity(w.samples.len());
        let mut specials = Vec::with_capacity(w.samples.len());
        for s in w.samples {
            let mut layers = BTreeMap::new();
            for l in s.hidden {
                let m = HiddenStates::new(l.rows, w.dim, decode_f32(&l.data)?)?;
                if layers.insert(l.layer, m).is_some() {
                    return Err(Error::Protocol(format!("duplicate layer {}", l.layer)));
                }
            }
            hidden.push(layers);
            specials.push(s.special_token_positions.into_iter().collect::<BTreeSet<_>>());
            samples.push(GenerationSample {
                tokens: s.tokens,
                token_ids: s.token_ids,
                text: s.text,
                finished_with_eos: s.finished_with_eos,
            });
        }
        let record = GenerationRecord {
            prompt_len: w.prompt_len,
            num_layers: w.num_layers,
            dim: w.dim,
            architecture_mode: w.architecture_mode,
            samples,
            hidden,
            special_token_positions: specials,
        };
        record.validate()?;
        Ok(record)
    }
}

pub fn record_to_json(record: &GenerationRecord) -> String {
    serde_json::to_string(&WireRecord::from(record)).expect("wire record serializes")
}

pub fn record_from_json(json: &str) -> Result<GenerationRecord> {
    let wire: WireRecord = serde_json::from_str(json).map_err(|e| Error::Protocol(format!("bad record: {e}")))?;
    wire.try_into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<String>,
    pub dim: usize,
}

impl EmbedResponse {
    pub fn from_vectors(vectors: &[Vec<f32>]) -> Self {
        Self {
            dim: vectors.first().map_or(0, Vec::len),
            vectors: vectors.iter().map(|v| encode_f32(v)).collect(),
        }
    }

    pub fn decode(&self) -> Result<Vec<Vec<f32>>> {
        self.vectors
            .iter()
            .map(|v| {
                let v = decode_f32(v)?;
                if v.len() != self.dim {
                    return Err(Error::Protocol(format!("vector of dim {} in response of dim {}", v.len(), self.dim)));
                }
                Ok(v)
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub text: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub count: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_payload_is_little_endian() {
        let encoded = encode_f32(&[1.0]);
        assert_eq!(STANDARD.decode(&encoded).unwrap(), vec![0x00, 0x00, 0x80, 0x3f]);
        let specials = [f32::MIN_POSITIVE, -0.0, f32::from_bits(0x7fc0_0001), 1e-45];
        let back = decode_f32(&encode_f32(&specials)).unwrap();
        for (a, b) in specials.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_bad_payloads() {
        assert!(decode_f32("!!!").is_err());
        assert!(decode_f32(&STANDARD.encode([1u8, 2, 3])).is_err());
        let json = r#"{"prompt_len":1,"num_layers":1,"dim":2,"architecture_mode":"causal",
            "samples":[{"tokens":["a"],"token_ids":[1],"text":"a","finished_with_eos":true,
            "hidden":[{"layer":1,"rows":2,"data":"AACAPw=="}]}]}"#;
        assert!(matches!(record_from_json(json), Err(Error::Protocol(_))));
    }
}
