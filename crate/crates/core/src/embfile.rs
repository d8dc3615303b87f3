//! Embedding files: `INBDEMB1`, u32 count, u32 dim, then count*dim f32, all little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Embedding;

pub const MAGIC: &[u8; 8] = b"INBDEMB1";
pub const HEADER_LEN: usize = 16;

pub fn write_embeddings<W: Write>(mut w: W, embeddings: &[Embedding]) -> Result<()> {
    let dim = embeddings.first().map_or(0, Embedding::dim);
    if let Some(e) = embeddings.iter().find(|e| e.dim() != dim) {
        return Err(Error::DimensionMismatch { left: dim, right: e.dim() });
    }
    let count = u32::try_from(embeddings.len()).map_err(|_| Error::InvalidRequest("too many embeddings".into()))?;
    let dim32 = u32::try_from(dim).map_err(|_| Error::InvalidRequest("dimension too large".into()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + embeddings.len() * dim * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&dim32.to_le_bytes());
    for e in embeddings {
        for v in e.to_f32() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_embeddings<R: Read>(mut r: R) -> Result<Vec<Embedding>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::CorruptFile("not an embedding file".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (count, dim) = (u32_at(8), u32_at(12));
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::CorruptFile("header overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::CorruptFile(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    bytes[HEADER_LEN..]
        .chunks_exact(dim.max(1) * 4)
        .take(count)
        .map(|row| {
            let v: Vec<f32> = row.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            Embedding::from_f32(&v)
        })
        .collect()
}

pub fn save(path: &Path, embeddings: &[Embedding]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_embeddings(&mut f, embeddings)?;
    f.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Embedding>> {
    read_embeddings(std::fs::File::open(path)?)
}
