//! Text embedding providers.
//!
//! Vectors handed out by an [`Embedder`] are unit length. The mock provider
//! is a hashed bag of words: each token seeds a ChaCha8 stream of standard
//! normals, token vectors are summed and the sum normalized. Texts sharing
//! many tokens land close together, identical texts land on the same point.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::llm::Limiter;

pub const MOCK_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("embedding endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed embedding response: {0}")]
    Response(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expected {expected} vectors, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("vector {0} has zero or non-finite norm")]
    Degenerate(usize),
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Identifies the provider and dimension; an index only accepts queries
    /// from the embedder it was built with.
    fn fingerprint(&self) -> String;

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

impl<T: Embedder + ?Sized> Embedder for std::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        (**self).embed(texts)
    }
}

/// Scales `v` to unit length; `None` for zero or non-finite vectors.
pub fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "can", "do", "does", "for", "from", "how", "in", "into", "is", "it",
    "its", "of", "on", "or", "the", "that", "this", "to", "what", "when", "which", "why", "with",
];

/// Lowercase alphanumeric tokens minus stopwords, with a crude plural strip.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .map(|t| match t.strip_suffix('s') {
            Some(stem) if stem.len() > 3 && !stem.ends_with('s') => stem.to_string(),
            _ => t,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let seed: [u8; 32] = Sha256::digest(token.as_bytes()).into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut toks = tokens(text);
        if toks.is_empty() {
            toks.push(String::new());
        }
        let mut sum = vec![0.0; self.dim];
        for t in &toks {
            for (s, x) in sum.iter_mut().zip(self.token_vector(t)) {
                *s += x;
            }
        }
        // A sum of Gaussian draws is zero with probability zero; the
        // fallback keeps the contract total anyway.
        normalize(sum).unwrap_or_else(|| self.token_vector(""))
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(MOCK_DIM)
    }
}

impl Embedder for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("mock-bow-sha256-chacha8/{}", self.dim)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Embedding service over HTTP: POST a JSON array of strings, receive a
/// JSON array of float arrays in the same order.
pub struct HttpEmbedder {
    url: String,
    dim: usize,
    max_retries: u32,
    client: reqwest::blocking::Client,
    limiter: Limiter,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, dim: usize, timeout: Duration, max_in_flight: usize) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            url: url.into(),
            dim,
            max_retries: 2,
            client,
            limiter: Limiter::new(max_in_flight),
        })
    }

    /// Endpoint from `EMBED_BASE_URL`, if set.
    pub fn from_env(dim: usize) -> Option<Result<Self, EmbedError>> {
        let url = std::env::var("EMBED_BASE_URL").ok()?;
        Some(Self::new(url, dim, Duration::from_secs(60), 8))
    }

    fn fetch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(Duration::from_millis(200 * u64::from(attempt - 1)));
            }
            let resp = match self.client.post(&self.url).json(texts).send() {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            let body = resp.text().map_err(|e| EmbedError::Response(e.to_string()))?;
            if status.is_server_error() || status.as_u16() == 429 {
                last = format!("HTTP {}", status.as_u16());
                continue;
            }
            if !status.is_success() {
                return Err(EmbedError::Status {
                    status: status.as_u16(),
                    body,
                });
            }
            return serde_json::from_str(&body).map_err(|e| EmbedError::Response(e.to_string()));
        }
        Err(EmbedError::Transport { attempts, message: last })
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("http {}/{}", self.url, self.dim)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let raw = {
            let _permit = self.limiter.acquire();
            self.fetch(texts)?
        };
        if raw.len() != texts.len() {
            return Err(EmbedError::CountMismatch {
                expected: texts.len(),
                got: raw.len(),
            });
        }
        raw.into_iter()
            .enumerate()
            .map(|(i, v)| {
                if v.len() != self.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.dim,
                        got: v.len(),
                    });
                }
                normalize(v).ok_or(EmbedError::Degenerate(i))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_is_deterministic_and_unit_norm() {
        let e = MockEmbedder::default();
        let texts = vec!["Thermal gradients accelerate aging".to_string(), "".to_string()];
        let a = e.embed(&texts).unwrap();
        let b = e.embed(&texts).unwrap();
        assert_eq!(a, b);
        for v in &a {
            assert_eq!(v.len(), MOCK_DIM);
            assert!((dot(v, v).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_tokens_raise_similarity() {
        let e = MockEmbedder::default();
        let base = e.embed_one("voltage inconsistency mechanisms in battery packs");
        let near = e.embed_one("what mechanisms cause voltage inconsistency");
        let far = e.embed_one("liquid cooling plate flow distribution");
        assert!(dot(&base, &near) > dot(&base, &far) + 0.2);
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokens("The Causes of SOH-drift, 2 packs"), vec!["cause", "soh", "drift", "2", "pack"]);
        assert_eq!(tokens("loss process"), vec!["loss", "process"]);
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(normalize(vec![0.0, 0.0]).is_none());
        assert_eq!(normalize(vec![3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
    }
}
