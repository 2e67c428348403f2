use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{BackendError, Embedding, EmbeddingBackend, TokenUsage};
use crate::document::count_tokens;

pub const HASH_EMBEDDER_DIMENSION: usize = 256;

/// A unit-normalized embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values` to unit L2 norm. Fails on empty or all-zero input.
    pub fn new(values: Vec<f64>) -> Result<Self, BackendError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if values.is_empty() || !norm.is_finite() || norm == 0.0 {
            return Err(BackendError::InvalidResponse(
                "embedding has zero or non-finite norm".into(),
            ));
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }
}

/// Cosine similarity of two unit vectors, clamped to [-1, 1].
///
/// Panics when the dimensions differ.
pub fn cosine_sim(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    assert_eq!(
        a.dimension(),
        b.dimension(),
        "cosine_sim on vectors of different dimension"
    );
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0)
}

/// Deterministic lexical embedder for tests and offline runs.
///
/// Hashing rule: lowercase the text, split it into maximal runs of
/// alphanumeric characters, hash each run with 64-bit FNV-1a over its UTF-8
/// bytes and add 1.0 to bucket `hash % dimension`. Text with no alphanumeric
/// run is hashed whole (trimmed) as a single token. The count vector is then
/// L2-normalized, so cosine similarity is the overlap of token multisets.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
    model_id: String,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(HASH_EMBEDDER_DIMENSION)
    }
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0);
        Self {
            dimension,
            model_id: format!("hash-embedder-{dimension}"),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embed_sync(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let lower = trimmed.to_lowercase();
        let mut counts = vec![0.0; self.dimension];
        let mut any = false;
        for token in lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            counts[bucket(token, self.dimension)] += 1.0;
            any = true;
        }
        if !any {
            counts[bucket(&lower, self.dimension)] += 1.0;
        }
        EmbeddingVector::new(counts)
    }
}

fn bucket(token: &str, dimension: usize) -> usize {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in token.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (hash % dimension as u64) as usize
}

#[async_trait]
impl EmbeddingBackend for HashEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        Ok(Embedding {
            vector: self.embed_sync(text)?,
            usage: TokenUsage::new(self.model_id.clone(), count_tokens(text) as u64, 0),
        })
    }
}
