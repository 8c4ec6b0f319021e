//! Embedding providers: a deterministic hash-based stub with controllable
//! drift, and an HTTP client for a remote model server.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Corpus, Document, EmbeddingVector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMode {
    Document,
    Query,
}

pub trait EmbeddingProvider<T: Scalar>: Send + Sync {
    fn dimension(&self) -> usize;

    /// Document-mode embeddings, one per input, in order.
    fn embed_documents(&self, docs: &[&Document]) -> Result<Vec<EmbeddingVector<T>>>;

    fn embed_queries(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector<T>>>;

    /// Number of document embeddings produced so far.
    fn documents_embedded(&self) -> u64;
}

/// Standard-normal vector seeded from `(seed, salt, key)`, normalized.
pub fn hashed_unit(seed: u64, salt: &str, key: &str, dim: usize) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(salt.as_bytes());
    h.update([0u8]);
    h.update(key.as_bytes());
    let digest = h.finalize();
    let mut rng = ChaCha8Rng::from_seed(digest.into());
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Deterministic provider. A document's base vector is its anchor if one was
/// supplied, otherwise a hash of its text. A drift `δ` for a doc id yields
/// `normalize((1 - δ) * base + δ * noise)` with a fixed per-doc noise vector.
pub struct DeterministicTestProvider<T> {
    seed: u64,
    dim: usize,
    drift: HashMap<String, f64>,
    anchors: HashMap<String, EmbeddingVector<T>>,
    calls: AtomicU64,
}

impl<T: Scalar> DeterministicTestProvider<T> {
    pub fn new(seed: u64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        Ok(Self {
            seed,
            dim,
            drift: HashMap::new(),
            anchors: HashMap::new(),
            calls: AtomicU64::new(0),
        })
    }

    /// Uses fixed vectors for the given doc ids; they are normalized on entry.
    pub fn with_anchors(mut self, anchors: HashMap<String, EmbeddingVector<T>>) -> Result<Self> {
        for (id, v) in anchors {
            v.expect_dim(self.dim)?;
            self.anchors
                .insert(id, v.cast::<f64>().normalized_f64()?.cast());
        }
        Ok(self)
    }

    pub fn with_drift(mut self, drift: HashMap<String, f64>) -> Result<Self> {
        for (id, &d) in &drift {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::InvalidArgument(format!(
                    "drift for `{id}` must lie in [0, 1], got {d}"
                )));
            }
        }
        self.drift = drift;
        Ok(self)
    }

    /// Same seed and anchors with a new drift map and a fresh call counter.
    pub fn generation(&self, drift: HashMap<String, f64>) -> Result<Self> {
        Self {
            seed: self.seed,
            dim: self.dim,
            drift: HashMap::new(),
            anchors: self.anchors.clone(),
            calls: AtomicU64::new(0),
        }
        .with_drift(drift)
    }

    pub fn drift(&self) -> &HashMap<String, f64> {
        &self.drift
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn base(&self, doc: &Document) -> Vec<f64> {
        match self.anchors.get(&doc.doc_id) {
            Some(a) => a.as_slice().iter().map(|x| x.as_f64()).collect(),
            None => hashed_unit(self.seed, "doc", &doc.text, self.dim),
        }
    }

    fn embed_one(&self, doc: &Document) -> Result<EmbeddingVector<T>> {
        let d = self.drift.get(&doc.doc_id).copied().unwrap_or(0.0);
        if d == 0.0 {
            if let Some(a) = self.anchors.get(&doc.doc_id) {
                return Ok(a.clone());
            }
            return EmbeddingVector::from_f64(&self.base(doc));
        }
        let noise = hashed_unit(self.seed, "drift", &doc.doc_id, self.dim);
        let mixed: Vec<f64> = self
            .base(doc)
            .iter()
            .zip(&noise)
            .map(|(b, n)| (1.0 - d) * b + d * n)
            .collect();
        EmbeddingVector::<f64>::normalized(mixed)?
            .cast::<T>()
            .normalized_f64()
    }
}

impl<T: Scalar> EmbeddingVector<T> {
    /// Normalizes in f64 and rounds once to `T`.
    fn normalized_f64(&self) -> Result<Self> {
        let v: Vec<f64> = self.as_slice().iter().map(|x| x.as_f64()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Self::new(v.iter().map(|x| T::of(x / n)).collect())
    }
}

impl<T: Scalar> EmbeddingProvider<T> for DeterministicTestProvider<T> {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_documents(&self, docs: &[&Document]) -> Result<Vec<EmbeddingVector<T>>> {
        self.calls.fetch_add(docs.len() as u64, Ordering::Relaxed);
        docs.iter().map(|d| self.embed_one(d)).collect()
    }

    fn embed_queries(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector<T>>> {
        texts
            .iter()
            .map(|t| EmbeddingVector::from_f64(&hashed_unit(self.seed, "query", t, self.dim)))
            .collect()
    }

    fn documents_embedded(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Drift map assigning `magnitude` to a seeded `fraction` of the corpus.
pub fn drift_fraction(
    corpus: &Corpus,
    fraction: f64,
    magnitude: f64,
    seed: u64,
) -> HashMap<String, f64> {
    use rand::seq::SliceRandom;
    let mut ids: Vec<&str> = corpus
        .documents()
        .iter()
        .map(|d| d.doc_id.as_str())
        .collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let count = (fraction * ids.len() as f64).round() as usize;
    ids.into_iter()
        .take(count)
        .map(|id| (id.to_owned(), magnitude))
        .collect()
}

/// Embeds every document in batches.
pub fn embed_corpus<T: Scalar>(
    provider: &dyn EmbeddingProvider<T>,
    docs: &[&Document],
    batch_size: usize,
) -> Result<HashMap<String, EmbeddingVector<T>>> {
    let mut out = HashMap::with_capacity(docs.len());
    for chunk in docs.chunks(batch_size.max(1)) {
        let embs = provider.embed_documents(chunk)?;
        if embs.len() != chunk.len() {
            return Err(Error::Provider(format!(
                "provider returned {} embeddings for {} documents",
                embs.len(),
                chunk.len()
            )));
        }
        for (d, e) in chunk.iter().zip(embs) {
            e.expect_dim(provider.dimension())?;
            out.insert(d.doc_id.clone(), e);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
    pub mode: EmbedMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embeddings: Vec<Vec<f64>>,
    pub dimension: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub dimension: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_batch() -> usize {
    64
}

fn default_retries() -> u32 {
    2
}

/// Client for a model server exposing `POST {endpoint}/embed`.
pub struct RemoteProvider {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    calls: AtomicU64,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        if config.dimension == 0 || config.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "dimension and batch_size must be >= 1".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::Provider(e.to_string()))?;
        Ok(Self {
            config,
            client,
            calls: AtomicU64::new(0),
        })
    }

    fn post(&self, texts: &[&str], mode: EmbedMode) -> Result<Vec<Vec<f64>>> {
        let url = format!("{}/embed", self.config.endpoint.trim_end_matches('/'));
        let body = EmbedRequest {
            texts: texts.iter().map(|s| s.to_string()).collect(),
            mode,
        };
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 << attempt));
            }
            let resp = match self.client.post(&url).json(&body).send() {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            if status.is_server_error() {
                last = format!("server returned {status}");
                continue;
            }
            if !status.is_success() {
                return Err(Error::Provider(format!("server returned {status}")));
            }
            let parsed: EmbedResponse = resp
                .json()
                .map_err(|e| Error::Provider(format!("malformed response: {e}")))?;
            if parsed.embeddings.len() != texts.len() {
                return Err(Error::Provider(format!(
                    "expected {} embeddings, got {}",
                    texts.len(),
                    parsed.embeddings.len()
                )));
            }
            if parsed.dimension != self.config.dimension
                || parsed
                    .embeddings
                    .iter()
                    .any(|e| e.len() != self.config.dimension)
            {
                return Err(Error::Provider(format!(
                    "expected dimension {}, got {}",
                    self.config.dimension, parsed.dimension
                )));
            }
            return Ok(parsed.embeddings);
        }
        Err(Error::Provider(last))
    }

    fn embed<T: Scalar>(&self, texts: &[&str], mode: EmbedMode) -> Result<Vec<EmbeddingVector<T>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.batch_size) {
            for v in self.post(chunk, mode)? {
                out.push(
                    EmbeddingVector::from_f64(&v).map_err(|e| Error::Provider(e.to_string()))?,
                );
            }
        }
        Ok(out)
    }
}

impl<T: Scalar> EmbeddingProvider<T> for RemoteProvider {
    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed_documents(&self, docs: &[&Document]) -> Result<Vec<EmbeddingVector<T>>> {
        let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
        let out = self.embed(&texts, EmbedMode::Document)?;
        self.calls.fetch_add(docs.len() as u64, Ordering::Relaxed);
        Ok(out)
    }

    fn embed_queries(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector<T>>> {
        self.embed(texts, EmbedMode::Query)
    }

    fn documents_embedded(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}
