//! Modality-tagged embedding collections, their binary container format and
//! the HTTP client for the embedding provider.

mod format;
mod provider;

pub use format::{
    decode_embeddings, decode_embeddings_as, encode_embeddings, read_embeddings, read_embeddings_as,
    write_embeddings, FormatError,
    FORMAT_VERSION_FUSED, FORMAT_VERSION_STANDARD, HEADER_LEN, MAGIC,
};
pub use provider::{EmbedItem, EmbedPayload, ProviderClient, ProviderError};

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// Vectors with an L2 norm at or below this are treated as zero.
pub const NORM_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Modality {
    Text = 0,
    Audio = 1,
    Image = 2,
    /// Conditioning vectors produced by label/feature fusion.
    Fused = 3,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Image => "image",
            Modality::Fused => "fused",
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Modality::Text),
            1 => Some(Modality::Audio),
            2 => Some(Modality::Image),
            3 => Some(Modality::Fused),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" => Ok(Modality::Text),
            "audio" => Ok(Modality::Audio),
            "image" => Ok(Modality::Image),
            "fused" => Ok(Modality::Fused),
            other => Err(format!("unknown modality {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SetError {
    #[error("embedding dimension must be at least 1")]
    ZeroDim,
    #[error("vector for {id:?} has length {len}, expected {dim}")]
    Length { id: String, len: usize, dim: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("id {0:?} is longer than 65535 bytes")]
    IdTooLong(String),
}

/// An ordered, id-unique collection of equal-length f32 vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    modality: Modality,
    dim: usize,
    records: IndexMap<String, Vec<f32>>,
}

impl EmbeddingSet {
    pub fn new(modality: Modality, dim: usize) -> Result<Self, SetError> {
        if dim == 0 {
            return Err(SetError::ZeroDim);
        }
        Ok(Self {
            modality,
            dim,
            records: IndexMap::new(),
        })
    }

    pub fn from_records<I, S>(modality: Modality, dim: usize, records: I) -> Result<Self, SetError>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut set = Self::new(modality, dim)?;
        for (id, v) in records {
            set.push(id, v)?;
        }
        Ok(set)
    }

    /// Append a record, enforcing the length and id invariants.
    pub fn push(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<(), SetError> {
        let id = id.into();
        if id.len() > usize::from(u16::MAX) {
            return Err(SetError::IdTooLong(id));
        }
        if vector.len() != self.dim {
            return Err(SetError::Length {
                id,
                len: vector.len(),
                dim: self.dim,
            });
        }
        if self.records.contains_key(&id) {
            return Err(SetError::DuplicateId(id));
        }
        self.records.insert(id, vector);
        Ok(())
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.records.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.records.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.records.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Vectors widened to f64, in record order.
    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        self.records
            .values()
            .map(|v| v.iter().map(|&x| f64::from(x)).collect())
            .collect()
    }
}

/// Result of [`l2_normalize`]: the normalized set plus ids of zero vectors.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub set: EmbeddingSet,
    pub zero_vectors: Vec<String>,
}

/// Scale every vector to unit L2 norm. Vectors with norm at or below
/// [`NORM_EPSILON`] are left as they are and reported.
pub fn l2_normalize(set: &EmbeddingSet) -> Normalized {
    let mut out = set.clone();
    let mut zero_vectors = Vec::new();
    for (id, v) in out.records.iter_mut() {
        let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if norm > NORM_EPSILON {
            for x in v.iter_mut() {
                *x = (f64::from(*x) / norm) as f32;
            }
        } else {
            zero_vectors.push(id.clone());
        }
    }
    Normalized {
        set: out,
        zero_vectors,
    }
}

/// `{clip_id}#frame{frame_index}` reference to one video frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameRef {
    pub clip_id: String,
    pub frame_index: u32,
}

impl FrameRef {
    const SEPARATOR: &'static str = "#frame";

    pub fn new(clip_id: impl Into<String>, frame_index: u32) -> Self {
        Self {
            clip_id: clip_id.into(),
            frame_index,
        }
    }

    pub fn id(&self) -> String {
        format!("{}{}{}", self.clip_id, Self::SEPARATOR, self.frame_index)
    }

    /// Inverse of [`FrameRef::id`]; splits on the last `#frame`.
    pub fn parse(id: &str) -> Option<Self> {
        let pos = id.rfind(Self::SEPARATOR)?;
        let (clip, rest) = id.split_at(pos);
        let digits = &rest[Self::SEPARATOR.len()..];
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        // Reject non-canonical forms such as leading zeros.
        let index: u32 = digits.parse().ok()?;
        if index.to_string() != digits {
            return None;
        }
        Some(Self::new(clip, index))
    }
}

impl fmt::Display for FrameRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.clip_id, Self::SEPARATOR, self.frame_index)
    }
}
