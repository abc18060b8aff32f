//! `DTN1` tensors: the magic `DTN1`, three little-endian `u32` dims
//! (rows, cols, depth), then `rows * cols * depth` little-endian `f32`
//! values, row-major with depth fastest.

use std::fs;
use std::path::Path;

use carbseg_core::{FeatureMap, ProbabilityMap, TextEmbeddingSet};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"DTN1";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub depth: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, depth: usize, data: Vec<f32>) -> std::result::Result<Self, String> {
        if rows.checked_mul(cols).and_then(|n| n.checked_mul(depth)) != Some(data.len()) {
            return Err(format!("dims {rows}x{cols}x{depth} do not match {} values", data.len()));
        }
        Ok(Self { rows, cols, depth, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.depth)
    }

    pub fn from_features(f: &FeatureMap) -> Self {
        Self { rows: f.height(), cols: f.width(), depth: f.dim(), data: f.data().to_vec() }
    }

    /// Stored as `(C, 1, D)`.
    pub fn from_text(t: &TextEmbeddingSet) -> Self {
        Self { rows: t.class_count(), cols: 1, depth: t.dim(), data: t.data().to_vec() }
    }

    pub fn from_probabilities(p: &ProbabilityMap) -> Self {
        let data = p.data().iter().map(|&v| v as f32).collect();
        Self { rows: p.height(), cols: p.width(), depth: p.class_count(), data }
    }

    pub fn into_features(self) -> carbseg_core::Result<FeatureMap> {
        FeatureMap::new(self.rows, self.cols, self.depth, self.data)
    }

    /// Accepts `(C, 1, D)`.
    pub fn into_text(self) -> carbseg_core::Result<TextEmbeddingSet> {
        if self.cols != 1 {
            return Err(carbseg_core::Error::Shape(format!(
                "text embeddings must be stored as (C, 1, D), got ({}, {}, {})",
                self.rows, self.cols, self.depth
            )));
        }
        TextEmbeddingSet::new(self.rows, self.depth, self.data)
    }

    pub fn into_probabilities(self) -> carbseg_core::Result<ProbabilityMap> {
        ProbabilityMap::new(self.rows, self.cols, self.depth, self.data.iter().map(|&v| v as f64).collect())
    }
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.data.len());
    out.extend_from_slice(MAGIC);
    for d in [t.rows, t.cols, t.depth] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err("bad magic, expected DTN1".into());
    }
    if bytes.len() < HEADER_LEN {
        return Err("truncated header".into());
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (rows, cols, depth) = (dim(0), dim(1), dim(2));
    let expected = rows as u128 * cols as u128 * depth as u128;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() % 4 != 0 || payload.len() as u128 / 4 != expected {
        return Err(format!(
            "length mismatch: header {rows}x{cols}x{depth} needs {expected} floats, payload has {} bytes",
            payload.len()
        ));
    }
    let data: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(format!("non-finite value at element {i}"));
    }
    Ok(Tensor { rows, cols, depth, data })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).at(path)?;
    decode(&bytes).map_err(|m| Error::format(path, m))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).at(path)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    read_tensor(path)?.into_features().map_err(|e| Error::invalid(path, e))
}

pub fn read_text(path: impl AsRef<Path>) -> Result<TextEmbeddingSet> {
    let path = path.as_ref();
    read_tensor(path)?.into_text().map_err(|e| Error::invalid(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_tensor() {
        let mut b = MAGIC.to_vec();
        for d in [1u32, 1, 2] {
            b.extend_from_slice(&d.to_le_bytes());
        }
        b.extend_from_slice(&0.5f32.to_le_bytes());
        b.extend_from_slice(&0.5f32.to_le_bytes());
        let t = decode(&b).unwrap();
        assert_eq!(t.dims(), (1, 1, 2));
        assert_eq!(t.data, vec![0.5, 0.5]);
        assert_eq!(encode(&t), b);
    }

    #[test]
    fn rejects_bad_input() {
        let t = Tensor::new(2, 2, 3, vec![0.0; 12]).unwrap();
        let b = encode(&t);
        assert!(decode(&b[..b.len() - 4]).unwrap_err().contains("length mismatch"));
        assert!(decode(b"DTN2aaaaaaaaaaaa").unwrap_err().contains("magic"));
        let mut nan = encode(&Tensor::new(1, 1, 1, vec![0.0]).unwrap());
        nan[16..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode(&nan).unwrap_err().contains("non-finite"));
    }
}
