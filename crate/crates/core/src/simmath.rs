//! Similarity kernels: cosine, relaxed word-mover distance, softmax priors.

use thiserror::Error;

use crate::providers::{EmbeddingProvider, ProviderError, ProviderVector};
use crate::kb::text::{extract_concepts, tokenize};

#[derive(Debug, Error, PartialEq)]
pub enum MathError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
}

/// Cosine of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &ProviderVector, b: &ProviderVector) -> Result<f64, MathError> {
    if a.dim() != b.dim() {
        return Err(MathError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(dot(a.values(), b.values()).clamp(-1.0, 1.0))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One vector per token, uniformly weighted.
#[derive(Debug, Clone)]
pub struct TokenCloud {
    vectors: Vec<ProviderVector>,
}

impl TokenCloud {
    pub fn new(vectors: Vec<ProviderVector>) -> Result<Self, MathError> {
        let Some(first) = vectors.first() else {
            return Err(MathError::Empty("token cloud"));
        };
        let dim = first.dim();
        if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(MathError::DimensionMismatch(dim, v.dim()));
        }
        Ok(Self { vectors })
    }

    /// Embeds the content tokens of `text` (all tokens if it has none).
    pub fn from_text(text: &str, embedder: &dyn EmbeddingProvider) -> Result<Self, ProviderError> {
        let mut tokens = extract_concepts(text);
        if tokens.is_empty() {
            tokens = tokenize(text);
        }
        if tokens.is_empty() {
            tokens.push(text.trim().to_owned());
        }
        let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
        let vectors = embedder.embed(&refs)?;
        Self::new(vectors).map_err(|e| ProviderError::InvalidInput(e.to_string()))
    }

    pub fn vectors(&self) -> &[ProviderVector] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].dim()
    }

    pub fn weights(&self) -> Vec<f64> {
        vec![1.0 / self.len() as f64; self.len()]
    }
}

/// Relaxed word-mover distance with cosine-distance ground cost.
///
/// Each direction moves every token's mass to its nearest token on the other
/// side; the result is the larger of the two directional costs, which never
/// exceeds the exact transport cost under uniform weights.
pub fn wasserstein(a: &TokenCloud, b: &TokenCloud) -> Result<f64, MathError> {
    if a.dim() != b.dim() {
        return Err(MathError::DimensionMismatch(a.dim(), b.dim()));
    }
    let forward = directional_relaxation(a, b);
    let backward = directional_relaxation(b, a);
    Ok(forward.max(backward))
}

fn directional_relaxation(from: &TokenCloud, to: &TokenCloud) -> f64 {
    let total: f64 = from
        .vectors
        .iter()
        .map(|u| {
            to.vectors
                .iter()
                .map(|v| cosine_distance(u.values(), v.values()))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / from.len() as f64
}

/// `1 − cos`, with rounding residue below 1e-12 snapped to zero so identical
/// unit vectors are exactly zero apart.
fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let d = 1.0 - dot(u, v).clamp(-1.0, 1.0);
    if d < 1e-12 {
        0.0
    } else {
        d
    }
}

/// Softmax of `scores / temperature` with max-shift.
pub fn policy_weights(scores: &[f64], temperature: f64) -> Result<Vec<f64>, MathError> {
    if scores.is_empty() {
        return Err(MathError::Empty("scores"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(MathError::BadTemperature(temperature));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MathError::NonFinite(i));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}
