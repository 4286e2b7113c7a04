//! Embedding providers and the vector math shared by the pipeline and metrics.
//!
//! Two backends implement [`Embedder`]: [`MockEmbedder`], a pure hash-based
//! function for offline runs, and [`RemoteEmbedder`], which calls an HTTP
//! `/embed` endpoint. [`CachedEmbedder`] wraps either one with a JSONL cache.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Item;

pub const DEFAULT_DIM: usize = 512;

/// Values below this L2 norm are treated as the zero vector.
const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("input error: {0}")]
    Input(String),
    #[error("remote embedder unreachable at {endpoint}: {message}")]
    Unreachable { endpoint: String, message: String },
    #[error("remote embedder returned an invalid response: {0}")]
    BadResponse(String),
    #[error("invalid embedder config: {0}")]
    Config(String),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

pub type Result<T, E = EmbeddingError> = std::result::Result<T, E>;

/// A dense real-valued feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Builds a vector, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn scaled(&self, factor: f64) -> Embedding {
        Embedding(self.0.iter().map(|v| v * factor).collect())
    }

    /// Elementwise mean of a non-empty set of equal-dimension vectors.
    pub fn mean<'a, I>(vectors: I) -> Result<Embedding>
    where
        I: IntoIterator<Item = &'a Embedding>,
    {
        let mut iter = vectors.into_iter();
        let first = iter.next().ok_or(EmbeddingError::EmptyInput)?;
        let mut acc = first.0.clone();
        let mut n = 1usize;
        for v in iter {
            check_dims(acc.len(), v.dim())?;
            for (a, b) in acc.iter_mut().zip(&v.0) {
                *a += b;
            }
            n += 1;
        }
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(Embedding(acc))
    }

    /// `sum_i weights[i] * vectors[i]`, accumulated in the given order.
    pub fn weighted_sum(terms: &[(f64, &Embedding)]) -> Result<Embedding> {
        let (_, first) = terms.first().ok_or(EmbeddingError::EmptyInput)?;
        let mut acc = vec![0.0; first.dim()];
        for (w, v) in terms {
            check_dims(acc.len(), v.dim())?;
            for (a, b) in acc.iter_mut().zip(&v.0) {
                *a += w * b;
            }
        }
        Ok(Embedding(acc))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(EmbeddingError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    if na <= ZERO_NORM || nb <= ZERO_NORM {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok((dot(&a.0, &b.0) / (na * nb)).clamp(-1.0, 1.0))
}

/// Item feature: plain mean of the image and text embeddings, not re-normalized.
pub fn average_feature(image: &Embedding, text: &Embedding) -> Result<Embedding> {
    check_dims(image.dim(), text.dim())?;
    Ok(Embedding(
        image.0.iter().zip(&text.0).map(|(v, t)| (v + t) / 2.0).collect(),
    ))
}

/// Fetches both embeddings of an item and averages them.
pub fn item_feature(embedder: &dyn Embedder, item: &Item) -> Result<Embedding> {
    let image = embedder.embed_image(&item.image_ref)?;
    let text = embedder.embed_text(&item.description)?;
    average_feature(&image, &text)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// One step of the splitmix64 generator; advances `state` and returns the output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic unit vector for a seed string.
///
/// FNV-1a 64 of the UTF-8 bytes seeds splitmix64; each output's top 53 bits
/// map to a uniform value in `[-1, 1)`; the result is L2-normalized.
pub fn mock_embed(seed: &str, dim: usize) -> Embedding {
    assert!(dim >= 2, "mock embedding dim must be at least 2");
    let mut state = fnv1a64(seed.as_bytes());
    let mut values: Vec<f64> = (0..dim)
        .map(|_| {
            let u = (splitmix64(&mut state) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            2.0 * u - 1.0
        })
        .collect();
    let norm = dot(&values, &values).sqrt();
    values.iter_mut().for_each(|v| *v /= norm);
    Embedding(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Text,
    Image,
}

impl EmbedKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbedKind::Text => "text",
            EmbedKind::Image => "image",
        }
    }
}

/// A source of text and image embeddings. Implementations must be callable
/// from several threads at once.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Stable identifier, used to key cache entries.
    fn backend_id(&self) -> String;

    fn embed(&self, kind: EmbedKind, payload: &str) -> Result<Embedding>;

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        self.embed(EmbedKind::Text, text)
    }

    fn embed_image(&self, image_ref: &str) -> Result<Embedding> {
        if image_ref.trim().is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        self.embed(EmbedKind::Image, image_ref)
    }
}

/// Offline backend. Text and image locators share one seed space, so a text
/// equal to an image locator embeds identically.
#[derive(Debug, Clone, Copy)]
pub struct MockEmbedder {
    dim: usize,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(EmbeddingError::Config(format!("mock dim must be >= 2, got {dim}")));
        }
        Ok(Self { dim })
    }
}

impl Embedder for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn backend_id(&self) -> String {
        format!("mock-{}", self.dim)
    }

    fn embed(&self, _kind: EmbedKind, payload: &str) -> Result<Embedding> {
        Ok(mock_embed(payload, self.dim))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    kind: EmbedKind,
    payload: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    values: Vec<f64>,
}

/// HTTP backend: `POST {endpoint}/embed` with `{"kind","payload"}`.
///
/// Text is sent as-is. Image locators with an `http(s)://` scheme are sent as
/// the URL; anything else is read from disk (relative to `image_root`) and
/// sent base64-encoded.
pub struct RemoteEmbedder {
    url: String,
    dim: usize,
    image_root: Option<PathBuf>,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(endpoint: &str, dim: usize) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/embed") {
            base.to_string()
        } else {
            format!("{base}/embed")
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            url,
            dim,
            image_root: None,
            agent,
        }
    }

    pub fn with_image_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.image_root = Some(root.into());
        self
    }

    fn image_payload(&self, locator: &str) -> Result<String> {
        if locator.starts_with("http://") || locator.starts_with("https://") {
            return Ok(locator.to_string());
        }
        let path = match &self.image_root {
            Some(root) if Path::new(locator).is_relative() => root.join(locator),
            _ => PathBuf::from(locator),
        };
        let bytes = fs::read(&path)
            .map_err(|e| EmbeddingError::Input(format!("{}: {e}", path.display())))?;
        Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn backend_id(&self) -> String {
        format!("remote-{}-{}", self.url, self.dim)
    }

    fn embed(&self, kind: EmbedKind, payload: &str) -> Result<Embedding> {
        let body = match kind {
            EmbedKind::Text => payload.to_string(),
            EmbedKind::Image => self.image_payload(payload)?,
        };
        let unreachable = |e: ureq::Error| EmbeddingError::Unreachable {
            endpoint: self.url.clone(),
            message: e.to_string(),
        };
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(EmbedRequest {
                kind,
                payload: &body,
            })
            .map_err(unreachable)?;
        if !resp.status().is_success() {
            return Err(EmbeddingError::BadResponse(format!("HTTP {}", resp.status())));
        }
        let parsed: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbeddingError::BadResponse(e.to_string()))?;
        if parsed.dim != self.dim || parsed.values.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dim,
                actual: if parsed.dim != self.dim { parsed.dim } else { parsed.values.len() },
            });
        }
        Embedding::new(parsed.values)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    dim: usize,
    values: Vec<f64>,
}

/// Memoizing wrapper with an optional append-only JSONL file.
///
/// Keys are `backend-id|kind|payload`. When the file holds several lines for
/// one key the last one wins.
pub struct CachedEmbedder<E> {
    inner: E,
    entries: RwLock<HashMap<String, Embedding>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn in_memory(inner: E) -> Self {
        Self {
            inner,
            entries: RwLock::new(HashMap::new()),
            file: None,
            path: None,
        }
    }

    /// Loads any existing entries from `path` and appends new ones to it.
    pub fn with_file(inner: E, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: CacheLine = serde_json::from_str(&line).map_err(|e| {
                    EmbeddingError::Input(format!("{}:{}: {e}", path.display(), idx + 1))
                })?;
                if parsed.dim != parsed.values.len() {
                    return Err(EmbeddingError::Input(format!(
                        "{}:{}: dim {} but {} values",
                        path.display(),
                        idx + 1,
                        parsed.dim,
                        parsed.values.len()
                    )));
                }
                entries.insert(parsed.key, Embedding::new(parsed.values)?);
            }
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            inner,
            entries: RwLock::new(entries),
            file: Some(Mutex::new(file)),
            path: Some(path),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    fn key(&self, kind: EmbedKind, payload: &str) -> String {
        format!("{}|{}|{}", self.inner.backend_id(), kind.as_str(), payload)
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn backend_id(&self) -> String {
        self.inner.backend_id()
    }

    fn embed(&self, kind: EmbedKind, payload: &str) -> Result<Embedding> {
        let key = self.key(kind, payload);
        if let Some(hit) = self.entries.read().expect("cache lock poisoned").get(&key) {
            if hit.dim() != self.inner.dim() {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: self.inner.dim(),
                    actual: hit.dim(),
                });
            }
            return Ok(hit.clone());
        }
        let value = self.inner.embed(kind, payload)?;
        if let Some(file) = &self.file {
            let line = serde_json::to_string(&CacheLine {
                key: key.clone(),
                dim: value.dim(),
                values: value.values().to_vec(),
            })
            .expect("cache line serializes");
            let mut f = file.lock().expect("cache file lock poisoned");
            writeln!(f, "{line}")?;
        }
        self.entries
            .write()
            .expect("cache lock poisoned")
            .insert(key, value.clone());
        Ok(value)
    }
}

impl Embedder for Box<dyn Embedder> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn backend_id(&self) -> String {
        (**self).backend_id()
    }

    fn embed(&self, kind: EmbedKind, payload: &str) -> Result<Embedding> {
        (**self).embed(kind, payload)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub dim: usize,
    pub backend: Backend,
    pub endpoint: Option<String>,
    pub cache_path: Option<PathBuf>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            backend: Backend::Mock,
            endpoint: None,
            cache_path: None,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(EmbeddingError::Config("dim must be positive".into()));
        }
        if self.backend == Backend::Remote && self.endpoint.is_none() {
            return Err(EmbeddingError::Config("remote backend requires an endpoint".into()));
        }
        Ok(())
    }

    /// Builds the configured backend. Image locators for the remote backend
    /// resolve against `image_root`.
    pub fn build(&self, image_root: Option<&Path>) -> Result<Box<dyn Embedder>> {
        self.validate()?;
        let inner: Box<dyn Embedder> = match self.backend {
            Backend::Mock => Box::new(MockEmbedder::new(self.dim)?),
            Backend::Remote => {
                let mut remote =
                    RemoteEmbedder::new(self.endpoint.as_deref().unwrap_or_default(), self.dim);
                if let Some(root) = image_root {
                    remote = remote.with_image_root(root);
                }
                Box::new(remote)
            }
        };
        Ok(match &self.cache_path {
            Some(path) => Box::new(CachedEmbedder::with_file(inner, path)?),
            None => Box::new(CachedEmbedder::in_memory(inner)),
        })
    }
}
