//! Cosine similarity over label vectors from a remote embedding service.

use std::collections::HashMap;
use std::sync::RwLock;

use hoi_core::reward::{SimilarityError, SimilarityProvider};
use hoi_core::EntityLabel;
use serde::{Deserialize, Serialize};

use crate::backend::http::HttpClient;
use crate::backend::BackendError;

const NORM_TOLERANCE: f64 = 1e-6;

pub trait EmbeddingClient: Send + Sync {
    /// One vector per label, in order.
    fn embed(&self, labels: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    labels: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// `POST /embed` with `{labels}` → `{vectors}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedding {
    client: HttpClient,
}

impl HttpEmbedding {
    pub fn new(client: HttpClient) -> Self {
        Self { client }
    }
}

impl EmbeddingClient for HttpEmbedding {
    fn embed(&self, labels: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let r: EmbedResponse = self.client.post("/embed", &EmbedRequest { labels })?;
        Ok(r.vectors)
    }
}

#[derive(Debug, Default)]
struct Cache {
    vectors: HashMap<String, Vec<f64>>,
    dim: Option<usize>,
}

/// Dot product of cached unit vectors. Service failures surface as
/// [`SimilarityError`]; they never turn into a zero score.
pub struct EmbeddingSimilarity<C> {
    client: C,
    cache: RwLock<Cache>,
}

pub fn embedding_provider<C: EmbeddingClient>(client: C) -> EmbeddingSimilarity<C> {
    EmbeddingSimilarity {
        client,
        cache: RwLock::new(Cache::default()),
    }
}

impl<C: EmbeddingClient> EmbeddingSimilarity<C> {
    /// Fetches any of `labels` not yet cached, in one request.
    pub fn prefetch<'a>(&self, labels: impl IntoIterator<Item = &'a EntityLabel>) -> Result<(), SimilarityError> {
        let missing: Vec<String> = {
            let cache = self.cache.read().expect("embedding cache poisoned");
            let mut m: Vec<String> = labels
                .into_iter()
                .map(|l| l.as_str().to_owned())
                .filter(|l| !cache.vectors.contains_key(l))
                .collect();
            m.sort();
            m.dedup();
            m
        };
        if missing.is_empty() {
            return Ok(());
        }
        let vectors = self
            .client
            .embed(&missing)
            .map_err(|e| SimilarityError(format!("embedding service: {e}")))?;
        if vectors.len() != missing.len() {
            return Err(SimilarityError(format!(
                "embedding service returned {} vectors for {} labels",
                vectors.len(),
                missing.len()
            )));
        }
        let mut cache = self.cache.write().expect("embedding cache poisoned");
        for (label, v) in missing.into_iter().zip(vectors) {
            let dim = *cache.dim.get_or_insert(v.len());
            if v.is_empty() || v.len() != dim {
                return Err(SimilarityError(format!(
                    "vector for `{label}` has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(SimilarityError(format!("vector for `{label}` is not unit-norm ({norm})")));
            }
            cache.vectors.insert(label, v);
        }
        Ok(())
    }
}

impl<C: EmbeddingClient> SimilarityProvider for EmbeddingSimilarity<C> {
    fn similarity(&self, a: &EntityLabel, b: &EntityLabel) -> Result<f64, SimilarityError> {
        self.prefetch([a, b])?;
        let cache = self.cache.read().expect("embedding cache poisoned");
        let u = &cache.vectors[a.as_str()];
        let v = &cache.vectors[b.as_str()];
        Ok(u.iter().zip(v).map(|(x, y)| x * y).sum())
    }
}
