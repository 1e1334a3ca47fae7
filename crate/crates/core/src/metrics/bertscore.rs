//! Greedy-matching BERTScore over per-token embeddings served by an
//! [`EmbeddingBackend`]. No IDF weighting and no baseline rescaling.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::rouge::Prf;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding request failed: {0}")]
    Transport(String),
    #[error("embedding service returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed embedding response: {0}")]
    Protocol(String),
    #[error("token {0:?} is outside the embedder vocabulary")]
    Vocabulary(String),
}

/// Tokens of one text and their embeddings, index-aligned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbeddings {
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

pub trait EmbeddingBackend {
    /// One entry per input text, in order.
    fn embed(&self, texts: &[String]) -> Result<Vec<TokenEmbeddings>, EmbedError>;
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    tokens: Vec<Vec<String>>,
    vectors: Vec<Vec<Vec<f64>>>,
}

/// Client for the `POST {base}/embed` protocol.
pub struct HttpEmbedder {
    url: String,
    http: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, EmbedError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let base = base_url.trim_end_matches('/');
        let url = if base.ends_with("/embed") {
            base.to_string()
        } else {
            format!("{base}/embed")
        };
        Ok(HttpEmbedder { url, http })
    }
}

impl EmbeddingBackend for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<TokenEmbeddings>, EmbedError> {
        let resp = self
            .http
            .post(&self.url)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(EmbedError::Status {
                status: status.as_u16(),
                body: body.chars().take(512).collect(),
            });
        }
        let parsed: EmbedResponse = resp
            .json()
            .map_err(|e| EmbedError::Protocol(e.to_string()))?;
        if parsed.tokens.len() != texts.len() || parsed.vectors.len() != texts.len() {
            return Err(EmbedError::Protocol(format!(
                "{} texts sent, got {} token lists and {} vector lists",
                texts.len(),
                parsed.tokens.len(),
                parsed.vectors.len()
            )));
        }
        parsed
            .tokens
            .into_iter()
            .zip(parsed.vectors)
            .enumerate()
            .map(|(i, (tokens, vectors))| {
                if tokens.len() != vectors.len() {
                    return Err(EmbedError::Protocol(format!(
                        "text {i}: {} tokens but {} vectors",
                        tokens.len(),
                        vectors.len()
                    )));
                }
                Ok(TokenEmbeddings { tokens, vectors })
            })
            .collect()
    }
}

/// Deterministic stand-in embedder: whitespace tokens, each distinct token
/// mapped to its own basis vector of a fixed-size space, so distinct tokens
/// are orthogonal and equal tokens have similarity 1.
pub struct OneHotEmbedder {
    dim: usize,
    vocab: Mutex<HashMap<String, usize>>,
}

impl OneHotEmbedder {
    pub fn new(dim: usize) -> Self {
        OneHotEmbedder {
            dim,
            vocab: Mutex::new(HashMap::new()),
        }
    }

    fn index(&self, token: &str) -> Result<usize, EmbedError> {
        let mut vocab = self.vocab.lock().expect("vocab poisoned");
        let next = vocab.len();
        let idx = *vocab.entry(token.to_string()).or_insert(next);
        if idx >= self.dim {
            vocab.remove(token);
            return Err(EmbedError::Vocabulary(token.to_string()));
        }
        Ok(idx)
    }
}

impl EmbeddingBackend for OneHotEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<TokenEmbeddings>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                let tokens: Vec<String> = t.split_whitespace().map(str::to_string).collect();
                let vectors = tokens
                    .iter()
                    .map(|tok| {
                        let mut v = vec![0.0; self.dim];
                        v[self.index(tok)?] = 1.0;
                        Ok(v)
                    })
                    .collect::<Result<_, EmbedError>>()?;
                Ok(TokenEmbeddings { tokens, vectors })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BertScore {
    pub prf: Prf,
    /// Set when either side produced no tokens; the scores are then zero.
    pub empty: bool,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Precision is the mean over candidate tokens of their best similarity to
/// any reference token; recall is the same from the reference side.
pub fn greedy_match(candidate: &[Vec<f64>], reference: &[Vec<f64>]) -> BertScore {
    if candidate.is_empty() || reference.is_empty() {
        return BertScore {
            prf: Prf::default(),
            empty: true,
        };
    }
    let sim: Vec<Vec<f64>> = candidate
        .iter()
        .map(|c| reference.iter().map(|r| cosine(c, r)).collect())
        .collect();
    let row_max: f64 = sim
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    let col_max: f64 = (0..reference.len())
        .map(|j| {
            sim.iter()
                .map(|row| row[j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    let p = row_max / candidate.len() as f64;
    let r = col_max / reference.len() as f64;
    // Harmonic mean is only meaningful for positive inputs; mixed signs could
    // push F1 outside [-1, 1].
    let f1 = if p > 0.0 && r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    };
    BertScore {
        prf: Prf { p, r, f1 },
        empty: false,
    }
}

pub fn bertscore(
    candidate: &str,
    reference: &str,
    embedder: &dyn EmbeddingBackend,
) -> Result<BertScore, EmbedError> {
    let texts = [candidate.to_string(), reference.to_string()];
    let mut embedded = embedder.embed(&texts)?;
    if embedded.len() != 2 {
        return Err(EmbedError::Protocol(format!(
            "expected 2 embeddings, got {}",
            embedded.len()
        )));
    }
    let reference = embedded.pop().expect("len checked");
    let candidate = embedded.pop().expect("len checked");
    Ok(greedy_match(&candidate.vectors, &reference.vectors))
}

/// Scores many pairs, embedding each distinct text once in batches of
/// `batch_size`.
pub fn bertscore_pairs(
    pairs: &[(&str, &str)],
    embedder: &dyn EmbeddingBackend,
    batch_size: usize,
) -> Result<Vec<BertScore>, EmbedError> {
    let mut unique: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (c, r) in pairs {
        for t in [*c, *r] {
            if !index.contains_key(t) {
                index.insert(t, unique.len());
                unique.push(t.to_string());
            }
        }
    }
    let mut embedded: Vec<TokenEmbeddings> = Vec::with_capacity(unique.len());
    for chunk in unique.chunks(batch_size.max(1)) {
        let out = embedder.embed(chunk)?;
        if out.len() != chunk.len() {
            return Err(EmbedError::Protocol(format!(
                "sent {} texts, got {} embeddings",
                chunk.len(),
                out.len()
            )));
        }
        embedded.extend(out);
    }
    Ok(pairs
        .iter()
        .map(|(c, r)| greedy_match(&embedded[index[c]].vectors, &embedded[index[r]].vectors))
        .collect())
}
