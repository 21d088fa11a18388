//! Provider boundary: the two generative capabilities the pipeline needs —
//! text generation and text embedding — behind object-safe traits.
//!
//! Two families implement them: fully deterministic offline providers
//! ([`offline`]) used for tests, ablations, and hermetic runs, and a remote
//! JSON-over-HTTP pair ([`remote`]) for hosted models. The pipeline never
//! knows which one it is talking to.

pub mod cache;
pub mod offline;
pub mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CachedEmbedder, EmbeddingCache};
pub use offline::{HashEmbedder, OfflineGenerator};
pub use remote::{RemoteConfig, RemoteGenerator, RemoteEmbedder};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("invalid provider input: {0}")]
    InvalidInput(String),
    #[error("provider unavailable after {attempts} attempts: {reason}")]
    ProviderUnavailable { attempts: usize, reason: String },
    #[error("provider returned malformed payload: {0}")]
    MalformedResponse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a generation call is for. Carried on every request so providers can
/// specialize behavior and logs can attribute cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationRole {
    PseudoqueryGen,
    QueryExpand,
    QueryDecompose,
    Rerank,
}

impl GenerationRole {
    pub fn label(self) -> &'static str {
        match self {
            GenerationRole::PseudoqueryGen => "pseudoquery_gen",
            GenerationRole::QueryExpand => "query_expand",
            GenerationRole::QueryDecompose => "query_decompose",
            GenerationRole::Rerank => "rerank",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub role: GenerationRole,
    pub prompt: String,
    pub max_output_tokens: usize,
    pub temperature: f64,
}

impl GenerationRequest {
    pub fn new(role: GenerationRole, prompt: impl Into<String>) -> Self {
        Self {
            role,
            prompt: prompt.into(),
            max_output_tokens: 1024,
            temperature: 0.0,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), ProviderError> {
        if self.prompt.trim().is_empty() {
            return Err(ProviderError::InvalidInput("prompt is empty".into()));
        }
        if self.temperature < 0.0 {
            return Err(ProviderError::InvalidInput("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// A fixed-length embedding. Construction rejects non-finite components, so
/// anything stored in an index is guaranteed finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ProviderError> {
        if values.is_empty() {
            return Err(ProviderError::InvalidInput("embedding has zero dimension".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::InvalidInput(
                "embedding contains non-finite values".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Round every component to f32 precision. Embeddings pass through this
    /// at the cache boundary so a build that reads the cache is bit-identical
    /// to the build that wrote it.
    pub fn quantized(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| *v as f32 as f64).collect(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; zero-norm inputs yield 0.
    pub fn cosine(&self, other: &Self) -> f64 {
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        let denom = self.l2_norm() * other.l2_norm();
        if denom == 0.0 {
            0.0
        } else {
            dot / denom
        }
    }
}

/// Text generation boundary. Implementations must tolerate concurrent calls.
pub trait TextGenerator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError>;

    /// Stable identifier used in logs and cache keys.
    fn id(&self) -> &str;
}

/// Text embedding boundary. One vector per input, order preserved, constant
/// dimension for the provider's lifetime.
pub trait TextEmbedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;

    fn dimension(&self) -> usize;

    /// Stable identifier used in logs and cache keys.
    fn id(&self) -> &str;
}

pub(crate) fn validate_embed_input(texts: &[String]) -> Result<(), ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::InvalidInput("no texts to embed".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(ProviderError::InvalidInput(format!("text at position {i} is empty")));
    }
    Ok(())
}
