//! Node features: one embedding row per agent plus a virtual query row.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pool::AgentPool;

pub const DEFAULT_DIM: usize = 384;
/// Feature-hashing bins used by [`HashEmbedder`].
pub const HASH_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding backend unavailable: {0}")]
    EmbeddingUnavailable(String),
}

/// Unit-norm embedding of a piece of text.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// L2-normalizes `values`. Rejects non-finite entries and the zero vector.
    pub fn normalized(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::EmbeddingUnavailable("non-finite embedding entry".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbedError::EmbeddingUnavailable("zero embedding vector".into()));
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

pub trait EmbeddingBackend: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for &B {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }
}

impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for Box<B> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }
}

pub fn embed_text<B: EmbeddingBackend + ?Sized>(
    backend: &B,
    text: &str,
) -> Result<EmbeddingVector, EmbedError> {
    backend.embed(text)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Deterministic offline backend: signed feature hashing of lowercase
/// character 3-grams (each word padded as `<word>`) into 64 bins, L2-normalized,
/// then zero-padded to `dim`.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= HASH_BINS, "hash embedder needs dim >= {HASH_BINS}");
        Self { dim }
    }

    fn bins(text: &str) -> [f64; HASH_BINS] {
        let mut bins = [0.0; HASH_BINS];
        let lower = text.to_lowercase();
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            let chars: Vec<char> = std::iter::once('<')
                .chain(word.chars())
                .chain(std::iter::once('>'))
                .collect();
            for gram in chars.windows(3) {
                let s: String = gram.iter().collect();
                let h = fnv1a(s.as_bytes());
                let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                bins[(h % HASH_BINS as u64) as usize] += sign;
            }
        }
        bins
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut bins = Self::bins(text);
        if bins.iter().all(|&b| b == 0.0) {
            // empty text (or fully cancelled features) maps to a fixed sentinel bin
            let h = fnv1a(b"<>");
            bins[(h % HASH_BINS as u64) as usize] = 1.0;
        }
        let mut values = bins.to_vec();
        values.resize(self.dim, 0.0);
        EmbeddingVector::normalized(values)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

/// Remote backend speaking `POST {"input": text}` -> `{"embedding": [..]}`.
pub struct HttpEmbedder {
    endpoint: String,
    token: Option<String>,
    dim: usize,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, dim: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(true)
            .build()
            .into();
        Self { endpoint: endpoint.into(), token, dim, agent }
    }
}

impl EmbeddingBackend for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let unavailable = |e: String| EmbedError::EmbeddingUnavailable(e);
        let mut request = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let body: EmbedResponse = request
            .send_json(EmbedRequest { input: text })
            .map_err(|e| unavailable(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| unavailable(e.to_string()))?;
        if body.embedding.len() != self.dim {
            return Err(unavailable(format!(
                "endpoint returned {} dims, expected {}",
                body.embedding.len(),
                self.dim
            )));
        }
        EmbeddingVector::normalized(body.embedding)
    }
}

/// In-memory memo keyed by text.
pub struct Memoized<B> {
    inner: B,
    cache: Mutex<HashMap<String, EmbeddingVector>>,
}

impl<B: EmbeddingBackend> Memoized<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, cache: Mutex::new(HashMap::new()) }
    }
}

impl<B: EmbeddingBackend> EmbeddingBackend for Memoized<B> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if let Some(v) = self.cache.lock().expect("memo lock").get(text) {
            return Ok(v.clone());
        }
        let v = self.inner.embed(text)?;
        self.cache.lock().expect("memo lock").insert(text.to_string(), v.clone());
        Ok(v)
    }
}

/// `(n_max + 1) x d` features; the last row is the query's virtual node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    x: Array2<f64>,
}

impl NodeFeatures {
    pub fn new(x: Array2<f64>) -> Self {
        Self { x }
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    /// Number of agent rows (excludes the query row).
    pub fn n_agents(&self) -> usize {
        self.x.nrows().saturating_sub(1)
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

pub fn build_node_features<B: EmbeddingBackend + ?Sized>(
    pool: &AgentPool,
    query: &str,
    backend: &B,
) -> Result<NodeFeatures, EmbedError> {
    let mut texts: Vec<String> = pool.agents().iter().map(|a| a.embedding_text()).collect();
    texts.push(query.to_string());
    let rows = texts
        .par_iter()
        .map(|t| backend.embed(t))
        .collect::<Result<Vec<_>, _>>()?;
    let d = backend.dim();
    let mut x = Array2::zeros((rows.len(), d));
    for (i, row) in rows.iter().enumerate() {
        if row.dim() != d {
            return Err(EmbedError::EmbeddingUnavailable(format!(
                "row {i} has {} dims, expected {d}",
                row.dim()
            )));
        }
        for (j, &v) in row.values().iter().enumerate() {
            x[[i, j]] = v;
        }
    }
    Ok(NodeFeatures { x })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_backend_is_deterministic_and_unit_norm() {
        let e = HashEmbedder::default();
        let a = e.embed("Solve the equation for x").unwrap();
        assert_eq!(a, e.embed("Solve the equation for x").unwrap());
        assert_eq!(a.dim(), DEFAULT_DIM);
        for text in ["", "a", "Hello, World!", "数学 problem"] {
            let v = e.embed(text).unwrap();
            let norm: f64 = v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "{text:?} norm {norm}");
            assert!(v.values()[HASH_BINS..].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn distinct_texts_are_not_parallel() {
        let e = HashEmbedder::default();
        let a = e.embed("a").unwrap();
        let b = e.embed("b").unwrap();
        assert!(a.cosine(&b) < 1.0);
        // "<a>" and "<b>" each hash to one bin; the vectors share no bin
        assert_eq!(a.cosine(&b), 0.0);
    }

    #[test]
    fn case_and_punctuation_are_ignored() {
        let e = HashEmbedder::default();
        assert_eq!(e.embed("Hello, world").unwrap(), e.embed("hello world").unwrap());
    }

    #[test]
    fn features_shape_and_query_locality() {
        let pool = AgentPool::default_roster();
        let e = HashEmbedder::default();
        let f1 = build_node_features(&pool, "What is 2 + 2?", &e).unwrap();
        let f2 = build_node_features(&pool, "Write a sorting function", &e).unwrap();
        assert_eq!(f1.x().dim(), (16, 384));
        assert_eq!(f1.n_agents(), 15);
        for i in 0..15 {
            assert_eq!(f1.x().row(i), f2.x().row(i));
        }
        assert_ne!(f1.x().row(15), f2.x().row(15));
        let empty = build_node_features(&pool, "", &e).unwrap();
        assert_eq!(empty.x().row(15).to_vec(), e.embed("").unwrap().values().to_vec());
    }

    #[test]
    fn memo_returns_identical_vectors() {
        let m = Memoized::new(HashEmbedder::default());
        let a = m.embed("x y z").unwrap();
        assert_eq!(a, m.embed("x y z").unwrap());
        assert_eq!(m.cache.lock().unwrap().len(), 1);
    }
}
