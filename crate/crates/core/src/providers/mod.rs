//! Embedding, inference and entailment providers.
//!
//! Every model the engine depends on sits behind one of three traits. The
//! engine ships deterministic stubs for each, a file-backed vector store, and
//! an HTTP client for an external model server.

mod cache;
mod file;
mod remote;
mod stub;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::CachedEmbedder;
pub use file::{text_key, FileVectorStore, VECTOR_STORE_MAGIC};
pub use remote::{RemoteClient, RemoteConfig};
pub use stub::{fnv1a64, StubEmbedder, StubEntailer, StubInferencer, STUB_DIM};

/// Tolerance on the unit-norm invariant of [`ProviderVector`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("invalid provider input: {0}")]
    InvalidInput(String),
    #[error("no stored vector for text {text:?} (key {key})")]
    MissingKey { text: String, key: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("remote error (status {status}): {message}")]
    Remote { status: u16, message: String },
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("vector store {path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Stub,
    File,
    Remote,
}

/// A unit-normalized embedding.
#[derive(Clone, PartialEq)]
pub struct ProviderVector {
    values: Arc<[f64]>,
    provenance: Provenance,
}

impl ProviderVector {
    /// Normalizes `values` to unit length. Fails on empty, non-finite or zero vectors.
    pub fn normalized(values: Vec<f64>, provenance: Provenance) -> Result<Self, ProviderError> {
        if values.is_empty() {
            return Err(ProviderError::InvalidInput("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::InvalidInput("non-finite vector component".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ProviderError::InvalidInput("zero vector".into()));
        }
        let values: Arc<[f64]> = values.into_iter().map(|v| v / norm).collect();
        Ok(Self { values, provenance })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl fmt::Debug for ProviderVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderVector")
            .field("dim", &self.dim())
            .field("provenance", &self.provenance)
            .finish()
    }
}

/// Commonsense relation types with their natural-language statements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    Causes,
    #[serde(rename = "xReason")]
    XReason,
    HinderedBy,
    IsBefore,
    IsAfter,
    #[serde(rename = "xNeed")]
    XNeed,
    #[serde(rename = "xAttr")]
    XAttr,
    #[serde(rename = "xEffect")]
    XEffect,
    #[serde(rename = "xReact")]
    XReact,
    #[serde(rename = "xWant")]
    XWant,
    #[serde(rename = "xIntent")]
    XIntent,
}

impl Relation {
    pub const ALL: [Relation; 11] = [
        Relation::Causes,
        Relation::XReason,
        Relation::HinderedBy,
        Relation::IsBefore,
        Relation::IsAfter,
        Relation::XNeed,
        Relation::XAttr,
        Relation::XEffect,
        Relation::XReact,
        Relation::XWant,
        Relation::XIntent,
    ];

    /// Wire name, e.g. `"xReact"`.
    pub fn name(self) -> &'static str {
        match self {
            Relation::Causes => "Causes",
            Relation::XReason => "xReason",
            Relation::HinderedBy => "HinderedBy",
            Relation::IsBefore => "IsBefore",
            Relation::IsAfter => "IsAfter",
            Relation::XNeed => "xNeed",
            Relation::XAttr => "xAttr",
            Relation::XEffect => "xEffect",
            Relation::XReact => "xReact",
            Relation::XWant => "xWant",
            Relation::XIntent => "xIntent",
        }
    }

    pub fn statement(self) -> &'static str {
        match self {
            Relation::Causes => "causes",
            Relation::XReason => "because",
            Relation::HinderedBy => "can be hindered by",
            Relation::IsBefore => "happens before",
            Relation::IsAfter => "happens after",
            Relation::XNeed => "but before, x needed",
            Relation::XAttr => "X is seen as",
            Relation::XEffect => "as a result, x will",
            Relation::XReact => "as a result, x feels",
            Relation::XWant => "as a result, x wants",
            Relation::XIntent => "because x wanted",
        }
    }

    pub fn from_name(name: &str) -> Option<Relation> {
        Relation::ALL.into_iter().find(|r| r.name() == name)
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One generated inference with its per-token probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceCandidate {
    pub relation: Relation,
    pub text: String,
    pub token_probs: Vec<f64>,
}

pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier; part of the embedding cache key.
    fn id(&self) -> &str;

    fn embed(&self, texts: &[&str]) -> Result<Vec<ProviderVector>, ProviderError>;

    fn embed_one(&self, text: &str) -> Result<ProviderVector, ProviderError> {
        let mut out = self.embed(&[text])?;
        out.pop()
            .ok_or_else(|| ProviderError::Protocol("provider returned no vector".into()))
    }
}

pub trait InferenceProvider: Send + Sync {
    fn infer(
        &self,
        context: &str,
        relation: Relation,
        n: usize,
    ) -> Result<Vec<InferenceCandidate>, ProviderError>;
}

pub trait EntailmentProvider: Send + Sync {
    /// Entailment score in `[0, 1]`.
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<f64, ProviderError>;
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for Arc<T> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn embed(&self, texts: &[&str]) -> Result<Vec<ProviderVector>, ProviderError> {
        (**self).embed(texts)
    }
}

impl<T: InferenceProvider + ?Sized> InferenceProvider for Arc<T> {
    fn infer(
        &self,
        context: &str,
        relation: Relation,
        n: usize,
    ) -> Result<Vec<InferenceCandidate>, ProviderError> {
        (**self).infer(context, relation, n)
    }
}

impl<T: EntailmentProvider + ?Sized> EntailmentProvider for Arc<T> {
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<f64, ProviderError> {
        (**self).entail(premise, hypothesis)
    }
}

pub(crate) fn require_non_empty(texts: &[&str]) -> Result<(), ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::InvalidInput("empty text list".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(ProviderError::InvalidInput(format!("text #{i} is empty")));
    }
    Ok(())
}
