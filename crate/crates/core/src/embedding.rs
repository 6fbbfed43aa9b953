//! Token embeddings and average pooling.
//!
//! Backends map text to one vector per token. Pooling averages those vectors
//! into the fixed-dimension representation of an ADU or a turn.

use std::collections::HashMap;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus_model::{Adu, Turn};

pub const DEFAULT_DIMENSION: usize = 768;
pub const DEFAULT_MODEL: &str = "bert-base-uncased";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("text has no tokens")]
    EmptyText,
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding contains a non-finite component")]
    NonFinite,
}

/// A finite real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(EmbeddingError::NonFinite)
        }
    }

    pub fn zeros(dimension: usize) -> Self {
        Self(vec![0.0; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Maps text to per-token vectors. Implementations must be deterministic
/// within a run and safe to call concurrently.
pub trait EmbeddingBackend: Send + Sync {
    fn name(&self) -> &str;

    fn dimension(&self) -> usize;

    fn embed_tokens(&self, text: &str) -> Result<Vec<EmbeddingVector>, EmbeddingError>;

    fn embed_tokens_batch(
        &self,
        texts: &[&str],
    ) -> Result<Vec<Vec<EmbeddingVector>>, EmbeddingError> {
        texts.iter().map(|t| self.embed_tokens(t)).collect()
    }
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `std` hashers.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |hash, b| {
        (hash ^ u64::from(*b)).wrapping_mul(PRIME)
    })
}

/// Hermetic backend: lowercased whitespace tokens, each mapped to a vector
/// drawn from ChaCha8 seeded with the token's FNV-1a hash, components in
/// `[-1, 1)`.
#[derive(Debug, Clone)]
pub struct DeterministicBackend {
    dimension: usize,
}

impl DeterministicBackend {
    pub const NAME: &'static str = "deterministic";

    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }

    pub fn token_vector(&self, token: &str) -> EmbeddingVector {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(token.as_bytes()));
        EmbeddingVector(
            (0..self.dimension)
                .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                .collect(),
        )
    }
}

impl Default for DeterministicBackend {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl EmbeddingBackend for DeterministicBackend {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_tokens(&self, text: &str) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let lowered = text.to_lowercase();
        let tokens: Vec<EmbeddingVector> = lowered
            .split_whitespace()
            .map(|t| self.token_vector(t))
            .collect();
        if tokens.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        Ok(tokens)
    }
}

#[derive(Debug, Serialize)]
struct ExternalRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct ExternalResponse {
    dimension: usize,
    embeddings: Vec<Vec<Vec<f64>>>,
}

/// Client for an HTTP inference service that returns per-token vectors of a
/// pretrained transformer. Uses a blocking client: call it from a blocking
/// context, never directly on an async executor thread.
#[derive(Debug, Clone)]
pub struct ExternalBackend {
    url: String,
    model: String,
    dimension: usize,
    name: String,
    client: reqwest::blocking::Client,
}

impl ExternalBackend {
    pub const MODEL_HEADER: &'static str = "x-embedding-model";

    pub fn new(url: impl Into<String>, model: impl Into<String>, dimension: usize) -> Self {
        let model = model.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("static client configuration is valid");
        Self {
            url: url.into(),
            name: format!("external:{model}"),
            model,
            dimension,
            client,
        }
    }

    pub fn model(&self) -> &str {
        &self.model
    }
}

impl EmbeddingBackend for ExternalBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_tokens(&self, text: &str) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let mut batch = self.embed_tokens_batch(&[text])?;
        Ok(batch.pop().unwrap_or_default())
    }

    fn embed_tokens_batch(
        &self,
        texts: &[&str],
    ) -> Result<Vec<Vec<EmbeddingVector>>, EmbeddingError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let unavailable = |e: reqwest::Error| EmbeddingError::BackendUnavailable(e.to_string());
        let response: ExternalResponse = self
            .client
            .post(&self.url)
            .header(Self::MODEL_HEADER, &self.model)
            .json(&ExternalRequest { texts })
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(unavailable)?
            .json()
            .map_err(unavailable)?;

        if response.dimension != self.dimension {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dimension,
                found: response.dimension,
            });
        }
        if response.embeddings.len() != texts.len() {
            return Err(EmbeddingError::BackendUnavailable(format!(
                "asked for {} texts, received {}",
                texts.len(),
                response.embeddings.len()
            )));
        }
        response
            .embeddings
            .into_iter()
            .map(|tokens| {
                if tokens.is_empty() {
                    return Err(EmbeddingError::EmptyText);
                }
                tokens
                    .into_iter()
                    .map(|v| {
                        if v.len() != self.dimension {
                            return Err(EmbeddingError::DimensionMismatch {
                                expected: self.dimension,
                                found: v.len(),
                            });
                        }
                        EmbeddingVector::new(v)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Per-token vectors for `text`, checked against the backend's dimension.
pub fn embed_tokens(
    backend: &dyn EmbeddingBackend,
    text: &str,
) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    if text.trim().is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    let tokens = backend.embed_tokens(text)?;
    check_tokens(backend, &tokens)?;
    Ok(tokens)
}

fn check_tokens(
    backend: &dyn EmbeddingBackend,
    tokens: &[EmbeddingVector],
) -> Result<(), EmbeddingError> {
    if tokens.is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    match tokens.iter().find(|t| t.dimension() != backend.dimension()) {
        Some(t) => Err(EmbeddingError::DimensionMismatch {
            expected: backend.dimension(),
            found: t.dimension(),
        }),
        None => Ok(()),
    }
}

/// Component-wise arithmetic mean.
pub fn pool_average(tokens: &[EmbeddingVector]) -> Result<EmbeddingVector, EmbeddingError> {
    let first = tokens.first().ok_or(EmbeddingError::EmptyText)?;
    let dimension = first.dimension();
    let mut sum = vec![0.0; dimension];
    for token in tokens {
        if token.dimension() != dimension {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dimension,
                found: token.dimension(),
            });
        }
        for (acc, v) in sum.iter_mut().zip(token.as_slice()) {
            *acc += v;
        }
    }
    let n = tokens.len() as f64;
    EmbeddingVector::new(sum.into_iter().map(|s| s / n).collect())
}

pub fn embed_text(
    backend: &dyn EmbeddingBackend,
    text: &str,
) -> Result<EmbeddingVector, EmbeddingError> {
    pool_average(&embed_tokens(backend, text)?)
}

pub fn embed_adu(backend: &dyn EmbeddingBackend, adu: &Adu) -> Result<EmbeddingVector, EmbeddingError> {
    embed_text(backend, &adu.text)
}

/// Pools over the tokens of the whole turn: ADU texts joined by one space.
pub fn embed_turn(
    backend: &dyn EmbeddingBackend,
    turn: &Turn,
) -> Result<EmbeddingVector, EmbeddingError> {
    embed_text(backend, &turn.text())
}

/// Pooled embeddings memoized by `(backend name, text)` for one job.
pub struct EmbeddingCache<'a> {
    backend: &'a dyn EmbeddingBackend,
    pooled: HashMap<(String, String), EmbeddingVector>,
}

impl<'a> EmbeddingCache<'a> {
    pub fn new(backend: &'a dyn EmbeddingBackend) -> Self {
        Self {
            backend,
            pooled: HashMap::new(),
        }
    }

    pub fn backend(&self) -> &'a dyn EmbeddingBackend {
        self.backend
    }

    pub fn len(&self) -> usize {
        self.pooled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pooled.is_empty()
    }

    fn key(&self, text: &str) -> (String, String) {
        (self.backend.name().to_string(), text.to_string())
    }

    /// Embeds every text not yet cached in one backend batch call.
    pub fn prefetch<'t>(&mut self, texts: impl IntoIterator<Item = &'t str>) -> Result<(), EmbeddingError> {
        let mut missing: Vec<&str> = Vec::new();
        for text in texts {
            if text.trim().is_empty() {
                return Err(EmbeddingError::EmptyText);
            }
            if !self.pooled.contains_key(&self.key(text)) && !missing.contains(&text) {
                missing.push(text);
            }
        }
        let batches = self.backend.embed_tokens_batch(&missing)?;
        if batches.len() != missing.len() {
            return Err(EmbeddingError::BackendUnavailable(
                "backend returned the wrong number of texts".into(),
            ));
        }
        for (text, tokens) in missing.into_iter().zip(batches) {
            check_tokens(self.backend, &tokens)?;
            let pooled = pool_average(&tokens)?;
            let key = self.key(text);
            self.pooled.insert(key, pooled);
        }
        Ok(())
    }

    pub fn pooled(&mut self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let key = self.key(text);
        if let Some(v) = self.pooled.get(&key) {
            return Ok(v.clone());
        }
        let v = embed_text(self.backend, text)?;
        self.pooled.insert(key, v.clone());
        Ok(v)
    }
}
