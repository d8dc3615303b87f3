//! Vector arithmetic and scalar statistics shared by every other module.
//!
//! Embeddings are stored in 64-bit floats. Hidden states arrive as 32-bit
//! floats and are widened before any accumulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed-dimension, finite, real-valued vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyEmbedding);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Returns the vector scaled to unit L2 norm.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(Self(self.0.iter().map(|v| v / n).collect()))
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&v| v as f32).collect()
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { left: a, right: b });
    }
    Ok(())
}

pub fn dot(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum())
}

/// Cosine similarity clamped to `[-1, 1]`. Zero vectors are rejected.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    let d = dot(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

/// `2ab / (a + b)`, or 0 when both inputs are 0.
pub fn harmonic_mean(a: f64, b: f64) -> Result<f64> {
    for v in [a, b] {
        if v < 0.0 || v.is_nan() {
            return Err(Error::NegativeInput(v));
        }
    }
    if a + b == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * a * b / (a + b))
}

/// Running mean over rows of equal length.
///
/// Uses the incremental update `m += (x - m) / i`, so a mean of identical
/// rows reproduces the row exactly.
#[derive(Clone, Debug)]
pub struct MeanAccumulator {
    mean: Vec<f64>,
    count: usize,
}

impl MeanAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            count: 0,
        }
    }

    pub fn push_f32(&mut self, row: &[f32]) {
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for (m, &x) in self.mean.iter_mut().zip(row) {
            *m += (f64::from(x) - *m) * inv;
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for (m, &x) in self.mean.iter_mut().zip(row) {
            *m += (x - *m) * inv;
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(self) -> Option<Vec<f64>> {
        (self.count > 0).then_some(self.mean)
    }
}

/// Element-wise mean of equal-dimension embeddings.
pub fn mean(vectors: &[Embedding]) -> Result<Embedding> {
    let first = vectors.first().ok_or(Error::EmptyList)?;
    let mut acc = MeanAccumulator::new(first.dim());
    for v in vectors {
        check_dims(first.dim(), v.dim())?;
        acc.push(v.values());
    }
    Embedding::new(acc.finish().expect("non-empty"))
}
