//! Text and image embedding providers.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use base64::Engine as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Embedding;
use crate::kfe::{KfeError, KfeFile};
use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("invalid dimension {0}: must be at least 2")]
    InvalidDimension(usize),
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("embedding backend unavailable: {0}")]
    Unavailable(String),
}

impl From<KfeError> for EmbeddingError {
    fn from(e: KfeError) -> Self {
        EmbeddingError::Format(e.to_string())
    }
}

/// Maps text or images to unit-length vectors of a fixed dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Embedding, EmbeddingError>;
    fn embed_image(&self, image: &[u8]) -> Result<Embedding, EmbeddingError>;
}

fn hashed_unit_vector(seed: u64, domain: &[u8], token: &[u8], d: usize) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(domain);
    h.update((token.len() as u64).to_le_bytes());
    h.update(token);
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}

fn to_embedding(acc: Vec<f64>) -> Embedding {
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    let values = if norm > 0.0 {
        acc.iter().map(|x| (x / norm) as f32).collect()
    } else {
        // Tokens cancelled exactly; fall back to the first axis.
        let mut v = vec![0.0f32; acc.len()];
        v[0] = 1.0;
        v
    };
    Embedding::new(values).expect("finite by construction")
}

/// Hashed bag-of-words embedding of `text`.
///
/// Each lowercase token maps to a seeded pseudo-random unit vector; the token
/// vectors are summed and the sum is L2-normalized. Text without any token
/// embeds as the vector of the empty token.
pub fn stub_embed_text(text: &str, d: usize, seed: u64) -> Result<Embedding, EmbeddingError> {
    if d < 2 {
        return Err(EmbeddingError::InvalidDimension(d));
    }
    let mut tokens = tokenize(text);
    if tokens.is_empty() {
        tokens.push(String::new());
    }
    let mut acc = vec![0.0f64; d];
    for t in &tokens {
        for (a, v) in acc.iter_mut().zip(hashed_unit_vector(seed, b"text", t.as_bytes(), d)) {
            *a += v;
        }
    }
    Ok(to_embedding(acc))
}

/// Deterministic offline embedder for tests and demos.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    dim: usize,
    seed: u64,
}

impl StubEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, EmbeddingError> {
        if dim < 2 {
            return Err(EmbeddingError::InvalidDimension(dim));
        }
        Ok(Self { dim, seed })
    }
}

impl EmbeddingProvider for StubEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        stub_embed_text(text, self.dim, self.seed)
    }

    /// Images embed as a single hashed token over their raw bytes.
    fn embed_image(&self, image: &[u8]) -> Result<Embedding, EmbeddingError> {
        Ok(to_embedding(hashed_unit_vector(self.seed, b"image", image, self.dim)))
    }
}

/// Key under which a precomputed provider stores an image embedding:
/// `img:` followed by the lowercase hex SHA-256 of the image bytes.
pub fn image_key(image: &[u8]) -> String {
    let digest = Sha256::digest(image);
    let mut key = String::with_capacity(4 + 64);
    key.push_str("img:");
    for b in digest {
        key.push_str(&format!("{b:02x}"));
    }
    key
}

/// Answers lookups from a KFE file of precomputed vectors. Text is looked up
/// by its exact string, images by [`image_key`].
#[derive(Debug, Clone)]
pub struct PrecomputedProvider {
    dim: usize,
    vectors: HashMap<String, Embedding>,
}

impl PrecomputedProvider {
    pub fn from_kfe(file: KfeFile) -> Result<Self, EmbeddingError> {
        if file.dim < 2 {
            return Err(EmbeddingError::InvalidDimension(file.dim));
        }
        let mut vectors = HashMap::with_capacity(file.records.len());
        for (key, v) in file.records {
            if v.len() != file.dim {
                return Err(EmbeddingError::Format(format!(
                    "vector for {key:?} has length {}, expected {}",
                    v.len(),
                    file.dim
                )));
            }
            let e = Embedding::normalized(v)
                .map_err(|e| EmbeddingError::Format(format!("vector for {key:?}: {e}")))?;
            vectors.insert(key, e);
        }
        Ok(Self {
            dim: file.dim,
            vectors,
        })
    }

    pub fn lookup(&self, key: &str) -> Result<Embedding, EmbeddingError> {
        self.vectors
            .get(key)
            .cloned()
            .ok_or_else(|| EmbeddingError::UnknownKey(key.to_string()))
    }
}

pub fn load_precomputed(path: impl AsRef<Path>) -> Result<PrecomputedProvider, EmbeddingError> {
    PrecomputedProvider::from_kfe(KfeFile::read(path)?)
}

impl EmbeddingProvider for PrecomputedProvider {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        self.lookup(text)
    }

    fn embed_image(&self, image: &[u8]) -> Result<Embedding, EmbeddingError> {
        self.lookup(&image_key(image))
    }
}

#[derive(Serialize)]
struct HttpEmbedRequest<'a> {
    kind: &'a str,
    payload: String,
}

#[derive(Deserialize)]
struct HttpEmbedResponse {
    embedding: Vec<f32>,
}

/// Bridges to any embedding server speaking
/// `POST {"kind":"text"|"image","payload":<base64>} -> {"embedding":[..]}`.
pub struct HttpEmbedder {
    url: String,
    dim: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, dim: usize, timeout: Duration) -> Result<Self, EmbeddingError> {
        if dim < 2 {
            return Err(EmbeddingError::InvalidDimension(dim));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbeddingError::Unavailable(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            dim,
            client,
        })
    }

    fn call(&self, kind: &str, payload: &[u8]) -> Result<Embedding, EmbeddingError> {
        let body = HttpEmbedRequest {
            kind,
            payload: base64::engine::general_purpose::STANDARD.encode(payload),
        };
        let resp: HttpEmbedResponse = self
            .client
            .post(&self.url)
            .json(&body)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| EmbeddingError::Unavailable(e.to_string()))?;
        if resp.embedding.len() != self.dim {
            return Err(EmbeddingError::Format(format!(
                "backend returned {} components, expected {}",
                resp.embedding.len(),
                self.dim
            )));
        }
        Embedding::normalized(resp.embedding).map_err(|e| EmbeddingError::Format(e.to_string()))
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        self.call("text", text.as_bytes())
    }

    fn embed_image(&self, image: &[u8]) -> Result<Embedding, EmbeddingError> {
        self.call("image", image)
    }
}
