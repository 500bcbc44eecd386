//! Vector-space similarity: word-vector averaging, sentence embeddings and
//! cosine similarity.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::digest::text_digest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, MetricsError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite);
        }
        Ok(Self(values))
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
}

/// Cosine similarity plus a flag for the zero-norm convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cosine {
    pub value: f64,
    pub degenerate: bool,
}

/// `A·B / (‖A‖ ‖B‖)`. A zero-norm side yields 0 with `degenerate` set.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<Cosine, MetricsError> {
    if a.dim() != b.dim() {
        return Err(MetricsError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if a.0.iter().chain(&b.0).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok(Cosine {
        value: (dot / (na * nb)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Word-vector table. Text format: one `token v1 v2 ... vd` per line; a
/// leading `count dim` header line, as written by word2vec, is skipped.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl Lexicon {
    pub fn from_entries<I, S>(entries: I) -> Result<Self, MetricsError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut lex = Lexicon::default();
        for (word, v) in entries {
            lex.insert(word.into(), v, 0)?;
        }
        Ok(lex)
    }

    fn insert(&mut self, word: String, v: Vec<f64>, line: usize) -> Result<(), MetricsError> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(MetricsError::Lexicon {
                line,
                message: format!("non-finite component for {word:?}"),
            });
        }
        if self.vectors.is_empty() {
            self.dim = v.len();
        } else if v.len() != self.dim {
            return Err(MetricsError::Lexicon {
                line,
                message: format!("{word:?} has {} components, expected {}", v.len(), self.dim),
            });
        }
        self.vectors.insert(word, v);
        Ok(())
    }

    pub fn parse(reader: impl BufRead) -> Result<Self, MetricsError> {
        let mut lex = Lexicon::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| MetricsError::Lexicon {
                line: i + 1,
                message: e.to_string(),
            })?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let rest: Vec<&str> = parts.collect();
            if i == 0 && rest.len() == 1 && word.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
                continue;
            }
            let v = rest
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| MetricsError::Lexicon {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if v.is_empty() {
                return Err(MetricsError::Lexicon {
                    line: i + 1,
                    message: format!("no vector for {word:?}"),
                });
            }
            lex.insert(word.to_string(), v, i + 1)?;
        }
        Ok(lex)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(std::io::BufReader::new(f))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedEmbedding {
    pub vector: EmbeddingVector,
    pub in_vocabulary: usize,
    pub out_of_vocabulary: usize,
    /// Every token was out of vocabulary; `vector` is all zeros.
    pub degenerate: bool,
}

/// Mean of the in-vocabulary token vectors.
pub fn embed_average<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> Result<AveragedEmbedding, MetricsError> {
    if lexicon.is_empty() {
        return Err(MetricsError::EmptyLexicon);
    }
    let mut sum = vec![0.0; lexicon.dim()];
    let mut hits = 0usize;
    for t in tokens {
        if let Some(v) = lexicon.get(t.as_ref()) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            hits += 1;
        }
    }
    if hits > 0 {
        let n = hits as f64;
        sum.iter_mut().for_each(|s| *s /= n);
    }
    Ok(AveragedEmbedding {
        vector: EmbeddingVector(sum),
        in_vocabulary: hits,
        out_of_vocabulary: tokens.len() - hits,
        degenerate: hits == 0,
    })
}

/// Source of whole-sentence embeddings.
pub trait SentenceEmbedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricsError>;
}

/// Precomputed embeddings keyed by SHA-256 of the text.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FixtureEmbeddings {
    vectors: std::collections::BTreeMap<String, Vec<f64>>,
}

impl FixtureEmbeddings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, text: &str, vector: Vec<f64>) {
        self.vectors.insert(text_digest(text), vector);
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))?;
        let fx: FixtureEmbeddings =
            serde_json::from_str(&raw).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))?;
        let mut dims = fx.vectors.values().map(Vec::len);
        if let Some(d) = dims.next() {
            if let Some(bad) = dims.find(|&x| x != d) {
                return Err(MetricsError::DimensionMismatch { expected: d, actual: bad });
            }
        }
        Ok(fx)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(self).expect("fixture serialization is infallible");
        std::fs::write(path, body).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl SentenceEmbedder for FixtureEmbeddings {
    fn dimension(&self) -> usize {
        self.vectors.values().next().map_or(0, Vec::len)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricsError> {
        self.vectors
            .get(&text_digest(text))
            .cloned()
            .ok_or_else(|| MetricsError::Unavailable(format!("no fixture embedding for text {}", abbreviate(text))))
    }
}

fn abbreviate(text: &str) -> String {
    let mut s: String = text.chars().take(48).collect();
    if s.len() < text.len() {
        s.push('…');
    }
    format!("{s:?}")
}

/// Offline stand-in: sums one pseudo-random vector per token, seeded by the
/// token's hash. Texts sharing words get correlated embeddings; no model
/// semantics beyond that.
#[derive(Debug, Clone, Copy)]
pub struct HashedEmbedder {
    dimension: usize,
}

impl HashedEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }
}

impl SentenceEmbedder for HashedEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricsError> {
        use rand::{Rng, SeedableRng};
        let mut out = vec![0.0; self.dimension];
        for tok in super::text::tokenize(text) {
            let digest = crate::digest::sha256_bytes(tok.as_bytes());
            let mut rng = rand_chacha::ChaCha8Rng::from_seed(digest);
            for v in out.iter_mut() {
                *v += rng.gen_range(-1.0..1.0);
            }
        }
        Ok(out)
    }
}

/// Remote embedding endpoint: `POST {"text": ...}`, answered by a JSON float
/// array or an object with an `embedding` array.
#[derive(Debug)]
pub struct HttpEmbedder {
    endpoint: String,
    dimension: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, dimension: usize, timeout: Duration) -> Result<Self, MetricsError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| MetricsError::Unavailable(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            dimension,
            client,
        })
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbeddingResponse {
    Bare(Vec<f64>),
    Wrapped { embedding: Vec<f64> },
}

impl SentenceEmbedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricsError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "text": text }))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| MetricsError::Unavailable(e.to_string()))?;
        let body: EmbeddingResponse = resp.json().map_err(|e| MetricsError::Unavailable(e.to_string()))?;
        Ok(match body {
            EmbeddingResponse::Bare(v) | EmbeddingResponse::Wrapped { embedding: v } => v,
        })
    }
}

/// Memoizes another embedder by text digest and checks its declared
/// dimension. Reads run concurrently; inserts are serialized.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: RwLock<HashMap<String, Vec<f64>>>,
    write_lock: Mutex<()>,
    calls: AtomicUsize,
}

impl<E: SentenceEmbedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
            write_lock: Mutex::new(()),
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of times the wrapped embedder was invoked.
    pub fn provider_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: SentenceEmbedder> SentenceEmbedder for CachedEmbedder<E> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, MetricsError> {
        let key = text_digest(text);
        if let Some(v) = self.cache.read().expect("embedding cache poisoned").get(&key) {
            return Ok(v.clone());
        }
        let _guard = self.write_lock.lock().expect("embedding cache poisoned");
        if let Some(v) = self.cache.read().expect("embedding cache poisoned").get(&key) {
            return Ok(v.clone());
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let v = self.inner.embed(text)?;
        let expected = self.inner.dimension();
        if v.len() != expected {
            return Err(MetricsError::DimensionMismatch {
                expected,
                actual: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(MetricsError::NonFinite);
        }
        self.cache
            .write()
            .expect("embedding cache poisoned")
            .insert(key, v.clone());
        Ok(v)
    }
}

pub fn sentence_embedding(text: &str, provider: &dyn SentenceEmbedder) -> Result<EmbeddingVector, MetricsError> {
    let v = provider.embed(text)?;
    if v.len() != provider.dimension() {
        return Err(MetricsError::DimensionMismatch {
            expected: provider.dimension(),
            actual: v.len(),
        });
    }
    EmbeddingVector::new(v)
}
