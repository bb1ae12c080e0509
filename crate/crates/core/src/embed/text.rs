//! Text embedders for token and declaration labels.
//!
//! [`HashEmbedder`] derives a pseudorandom unit vector from a digest of the
//! label and needs nothing external. [`ServiceEmbedder`] asks an HTTP
//! embedding service (`POST /embed`, `GET /healthz`) and can fall back to
//! hashing when the service is unreachable.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EmbedError;

pub const DEFAULT_TEXT_WIDTH: usize = 768;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMode {
    Hash,
    Service,
}

impl std::fmt::Display for EmbedMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbedMode::Hash => "hash",
            EmbedMode::Service => "service",
        })
    }
}

pub trait TextEmbedder: Send + Sync {
    fn width(&self) -> usize;
    fn mode(&self) -> EmbedMode;
    /// One vector of length `width()` per input text, in order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

/// Deterministic unit vectors seeded by `sha256(seed || label)`.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub width: usize,
    pub seed: u64,
}

impl HashEmbedder {
    pub fn new(width: usize, seed: u64) -> Self {
        HashEmbedder { width, seed }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(text.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&h.finalize());
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut v: Vec<f64> = (0..self.width).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl TextEmbedder for HashEmbedder {
    fn width(&self) -> usize {
        self.width
    }

    fn mode(&self) -> EmbedMode {
        EmbedMode::Hash
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
    width: usize,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    model_id: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_id: String,
    pub width: usize,
}

/// Client for an external embedding service.
pub struct ServiceEmbedder {
    endpoint: String,
    width: usize,
    strict: bool,
    retries: u32,
    backoff: Duration,
    agent: ureq::Agent,
    fallback: HashEmbedder,
    model_id: Mutex<Option<String>>,
}

impl ServiceEmbedder {
    /// `endpoint` is the service base URL, e.g. `http://127.0.0.1:8000`.
    /// Without `strict`, failed requests fall back to hashing with `seed`.
    pub fn new(endpoint: &str, width: usize, strict: bool, seed: u64) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        ServiceEmbedder {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            width,
            strict,
            retries: 3,
            backoff: Duration::from_millis(200),
            agent,
            fallback: HashEmbedder::new(width, seed),
            model_id: Mutex::new(None),
        }
    }

    pub fn with_retries(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    /// Model id reported by the last successful request.
    pub fn model_id(&self) -> Option<String> {
        self.model_id.lock().expect("model id lock").clone()
    }

    pub fn health(&self) -> Result<Health, EmbedError> {
        let mut resp = self
            .agent
            .get(&format!("{}/healthz", self.endpoint))
            .call()
            .map_err(|e| EmbedError::Service(e.to_string()))?;
        resp.body_mut()
            .read_json::<Health>()
            .map_err(|e| EmbedError::Service(e.to_string()))
    }

    fn request(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut resp = self
            .agent
            .post(&format!("{}/embed", self.endpoint))
            .send_json(EmbedRequest {
                texts,
                width: self.width,
            })
            .map_err(|e| EmbedError::Service(e.to_string()))?;
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Service(format!("bad response body: {e}")))?;
        if body.vectors.len() != texts.len() || body.vectors.iter().any(|v| v.len() != self.width) {
            return Err(EmbedError::Shape {
                got: body.vectors.len(),
                width: body.vectors.first().map_or(0, Vec::len),
                expected: texts.len(),
                expected_width: self.width,
            });
        }
        *self.model_id.lock().expect("model id lock") = Some(body.model_id);
        Ok(body.vectors)
    }
}

impl TextEmbedder for ServiceEmbedder {
    fn width(&self) -> usize {
        self.width
    }

    fn mode(&self) -> EmbedMode {
        EmbedMode::Service
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let mut delay = self.backoff;
        let mut last = None;
        for attempt in 0..=self.retries {
            match self.request(texts) {
                Ok(v) => return Ok(v),
                // A malformed answer will not improve with retries.
                Err(e @ EmbedError::Shape { .. }) => {
                    last = Some(e);
                    break;
                }
                Err(e) => {
                    log::debug!("embedding request attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                    if attempt < self.retries {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        let err = last.expect("at least one attempt");
        if self.strict {
            return Err(err);
        }
        log::warn!("embedding service at {} failed ({err}); falling back to hash embeddings", self.endpoint);
        self.fallback.embed_batch(texts)
    }
}

/// Label vectors keyed by `(mode, width, label digest)`.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct EmbedCache {
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbedCache {
    pub fn key(mode: EmbedMode, width: usize, label: &str) -> String {
        let digest: String = Sha256::digest(label.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        format!("{mode}:{width}:{digest}")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path).map_err(|e| EmbedError::Cache(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| EmbedError::Cache(e.to_string()))
    }

    /// Write through a temporary file in the same directory.
    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let tmp = path.with_extension("tmp");
        let text = serde_json::to_string(self).map_err(|e| EmbedError::Cache(e.to_string()))?;
        std::fs::write(&tmp, text).map_err(|e| EmbedError::Cache(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| EmbedError::Cache(e.to_string()))
    }
}

/// Wraps an embedder with a shared cache.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: Mutex<EmbedCache>,
}

impl<E: TextEmbedder> CachedEmbedder<E> {
    pub fn new(inner: E, cache: EmbedCache) -> Self {
        CachedEmbedder {
            inner,
            cache: Mutex::new(cache),
        }
    }

    pub fn into_cache(self) -> EmbedCache {
        self.cache.into_inner().expect("cache lock")
    }
}

impl<E: TextEmbedder> TextEmbedder for CachedEmbedder<E> {
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn mode(&self) -> EmbedMode {
        self.inner.mode()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let (mode, width) = (self.mode(), self.width());
        let keys: Vec<String> = texts.iter().map(|t| EmbedCache::key(mode, width, t)).collect();
        let missing: Vec<String> = {
            let cache = self.cache.lock().expect("cache lock");
            texts
                .iter()
                .zip(&keys)
                .filter(|(_, k)| !cache.entries.contains_key(*k))
                .map(|(t, _)| t.clone())
                .collect()
        };
        if !missing.is_empty() {
            let fresh = self.inner.embed_batch(&missing)?;
            let mut cache = self.cache.lock().expect("cache lock");
            for (t, v) in missing.iter().zip(fresh) {
                cache.entries.insert(EmbedCache::key(mode, width, t), v);
            }
        }
        let cache = self.cache.lock().expect("cache lock");
        Ok(keys.iter().map(|k| cache.entries[k].clone()).collect())
    }
}
