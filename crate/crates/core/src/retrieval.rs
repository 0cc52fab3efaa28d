//! Text embedding and exact top-k demonstration retrieval.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledExample, Session};
use crate::seed::fnv1a;

pub const DEFAULT_K: usize = 8;
pub const DEFAULT_DIM: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding provider unavailable (status {status:?}): {message}")]
    ProviderUnavailable { status: Option<u16>, message: String },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("retrieval index is empty")]
    EmptyIndex,
}

/// A fixed-length, finite embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, RetrievalError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        Ok(Embedding(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<Self, RetrievalError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(RetrievalError::ZeroVector);
        }
        Ok(Embedding(self.0.iter().map(|v| v / n).collect()))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// An embedding provider. Implementations must be deterministic.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Embedding, RetrievalError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, RetrievalError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Deterministic test provider: character trigram counts hashed into `dim`
/// buckets, then L2-normalised.
///
/// Text is lowercased, runs of whitespace collapse to one space and a single
/// space pads both ends, so every non-blank text yields at least one trigram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingEmbedder { dim }
    }

    /// The padded trigrams of `text`.
    pub fn trigrams(text: &str) -> Vec<String> {
        let norm = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let chars: Vec<char> = format!(" {norm} ").chars().collect();
        chars.windows(3).map(|w| w.iter().collect()).collect()
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, RetrievalError> {
        if text.trim().is_empty() {
            return Err(RetrievalError::EmptyText);
        }
        let mut v = vec![0.0; self.dim];
        for g in Self::trigrams(text) {
            v[(fnv1a(g.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        Embedding(v).normalized()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// HTTP embedding service: POST `{"texts": [...]}` to the endpoint, expect
/// `{"embeddings": [[...], ...]}` back.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    endpoint: String,
    api_key: Option<String>,
    dim: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, dim: usize) -> Result<Self, RetrievalError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| RetrievalError::ProviderUnavailable {
                status: None,
                message: e.to_string(),
            })?;
        Ok(RemoteEmbedder {
            endpoint: endpoint.into(),
            api_key,
            dim,
            client,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, RetrievalError> {
        let mut out = self.embed_batch(&[text])?;
        out.pop().ok_or(RetrievalError::ProviderUnavailable {
            status: None,
            message: "empty embedding response".into(),
        })
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, RetrievalError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(RetrievalError::EmptyText);
        }
        let unavailable = |status: Option<u16>, message: String| RetrievalError::ProviderUnavailable { status, message };
        let mut req = self.client.post(&self.endpoint).json(&EmbedRequest { texts });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| unavailable(e.status().map(|s| s.as_u16()), e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(unavailable(Some(status.as_u16()), body));
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| unavailable(Some(status.as_u16()), format!("malformed response: {e}")))?;
        if body.embeddings.len() != texts.len() {
            return Err(unavailable(
                Some(status.as_u16()),
                format!("expected {} embeddings, got {}", texts.len(), body.embeddings.len()),
            ));
        }
        body.embeddings
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(RetrievalError::DimensionMismatch(v.len(), self.dim));
                }
                Embedding::new(v)
            })
            .collect()
    }
}

pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64, RetrievalError> {
    if u.dim() != v.dim() {
        return Err(RetrievalError::DimensionMismatch(u.dim(), v.dim()));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    let dot: f64 = u.values().iter().zip(v.values()).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub example: LabeledExample,
    pub score: f64,
}

/// Exact-scan index over single-turn examples. Immutable once built.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    entries: Vec<(LabeledExample, Embedding)>,
    dim: usize,
}

impl RetrievalIndex {
    pub fn build(examples: &[LabeledExample], embedder: &dyn Embedder) -> Result<Self, RetrievalError> {
        let texts: Vec<&str> = examples.iter().map(|e| e.query.as_str()).collect();
        let vectors = embedder.embed_batch(&texts)?;
        let dim = embedder.dim();
        if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(RetrievalError::DimensionMismatch(v.dim(), dim));
        }
        Ok(RetrievalIndex {
            entries: examples.iter().cloned().zip(vectors).collect(),
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(LabeledExample, Embedding)] {
        &self.entries
    }

    /// Top-`k` entries by cosine with `query`; ties keep insertion order.
    pub fn search(&self, query: &Embedding, k: usize) -> Result<Vec<Demonstration>, RetrievalError> {
        if self.entries.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let mut scored = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, (_, v))| cosine(query, v).map(|s| (i, s)))
            .collect::<Result<Vec<_>, _>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(i, score)| Demonstration {
                example: self.entries[i].0.clone(),
                score,
            })
            .collect())
    }
}

/// The vector a session is matched with: the re-normalised mean of the
/// last-turn embedding and the whole-session embedding.
pub fn session_embedding(session: &Session, embedder: &dyn Embedder) -> Result<Embedding, RetrievalError> {
    let last = session.last_turn().ok_or(RetrievalError::EmptyText)?;
    let whole = session.turns.join(" ");
    let a = embedder.embed(last)?.normalized()?;
    let b = embedder.embed(&whole)?.normalized()?;
    let mean = a.values().iter().zip(b.values()).map(|(x, y)| 0.5 * (x + y)).collect();
    Embedding::new(mean)?.normalized()
}

pub fn retrieve(
    index: &RetrievalIndex,
    session: &Session,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<Demonstration>, RetrievalError> {
    assert!(k >= 1, "k must be at least 1");
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    index.search(&session_embedding(session, embedder)?, k)
}
