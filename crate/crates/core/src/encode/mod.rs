//! Frozen embedding functions: the synthetic text encoder, the synthetic
//! image encoder with a configurable modality gap, and the GDE1 store for
//! externally exported embeddings.

mod image;
mod store;
mod text;

pub use image::{GapConfig, GapReport, ImageEncoder};
pub use store::{load_embedding_store, load_embedding_store_with_dim, save_embedding_store, EmbeddingStore, MAGIC};
pub use text::{TextEncoder, TextEncoderConfig, SLOTS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::WorldError;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("bad magic {0:?}, expected \"GDE1\"")]
    BadMagic(Vec<u8>),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("truncated payload: need {needed} bytes, file has {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} unexpected bytes after the id index")]
    TrailingBytes(usize),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("id {0} is not valid UTF-8")]
    BadId(usize),
    #[error("token id {0} outside the encoder vocabulary")]
    TokenOutOfRange(usize),
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A length-`d` embedding vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f32>,
    pub normalized: bool,
}

impl Embedding {
    pub fn raw(values: Vec<f32>) -> Self {
        Embedding { values, normalized: false }
    }

    pub(crate) fn normalized_from_f64(v: &[f64]) -> Self {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        Embedding { values: v.iter().map(|&x| (x * inv) as f32).collect(), normalized: norm > 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn l2_norm(&self) -> f32 {
        self.values.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt() as f32
    }

    pub fn linf_distance(&self, other: &Embedding) -> f32 {
        self.values.iter().zip(&other.values).fold(0.0f32, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn l2_distance(&self, other: &Embedding) -> f32 {
        self.values.iter().zip(&other.values).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt() as f32
    }

    pub fn cosine(&self, other: &Embedding) -> f32 {
        let dot: f64 = self.values.iter().zip(&other.values).map(|(&a, &b)| a as f64 * b as f64).sum();
        let na = self.l2_norm() as f64;
        let nb = other.l2_norm() as f64;
        (dot / (na * nb).max(f64::MIN_POSITIVE)) as f32
    }

    pub fn add(&self, delta: &[f32]) -> Embedding {
        Embedding { values: self.values.iter().zip(delta).map(|(a, b)| a + b).collect(), normalized: false }
    }
}
