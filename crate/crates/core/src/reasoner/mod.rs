//! Relation-tagged inference generation, confidence scoring and diverse
//! subset selection.

mod dpp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{
    EmbeddingProvider, InferenceCandidate, InferenceProvider, ProviderError, ProviderVector,
    Relation,
};

pub use dpp::{select_diverse, DppKernel, GAIN_FLOOR, PSD_EPSILON};

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error("inference candidate {0:?} has no token probabilities")]
    EmptyTokenProbs(String),
    #[error("token probability {value} of {text:?} is outside (0, 1]")]
    BadTokenProb { text: String, value: f64 },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasonerConfig {
    /// Inferences kept per context after diverse selection.
    pub k_select: usize,
    /// Candidates requested per relation.
    pub n_per_relation: usize,
    pub relations: Vec<Relation>,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            k_select: 5,
            n_per_relation: 3,
            relations: Relation::ALL.to_vec(),
        }
    }
}

/// A scored inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub candidate: InferenceCandidate,
    /// Mean token probability.
    pub confidence: f64,
    pub embedding: ProviderVector,
}

impl Inference {
    pub fn relation(&self) -> Relation {
        self.candidate.relation
    }

    pub fn text(&self) -> &str {
        &self.candidate.text
    }
}

/// Mean of the candidate's token probabilities.
pub fn score_confidence(candidate: &InferenceCandidate) -> Result<f64, ReasonerError> {
    if candidate.token_probs.is_empty() {
        return Err(ReasonerError::EmptyTokenProbs(candidate.text.clone()));
    }
    if let Some(&value) = candidate
        .token_probs
        .iter()
        .find(|&&p| !(p > 0.0 && p <= 1.0))
    {
        return Err(ReasonerError::BadTokenProb {
            text: candidate.text.clone(),
            value,
        });
    }
    let sum: f64 = candidate.token_probs.iter().sum();
    Ok(sum / candidate.token_probs.len() as f64)
}

pub struct Reasoner<'a> {
    inferencer: &'a dyn InferenceProvider,
    embedder: &'a dyn EmbeddingProvider,
    config: ReasonerConfig,
}

impl<'a> Reasoner<'a> {
    pub fn new(
        inferencer: &'a dyn InferenceProvider,
        embedder: &'a dyn EmbeddingProvider,
        config: ReasonerConfig,
    ) -> Self {
        Self {
            inferencer,
            embedder,
            config,
        }
    }

    /// Generates candidates for every configured relation, scores them, and
    /// keeps a diverse subset ordered by descending confidence.
    pub fn reason(&self, context: &str) -> Result<Vec<Inference>, ReasonerError> {
        let mut candidates: Vec<InferenceCandidate> = Vec::new();
        if self.config.n_per_relation == 0 || self.config.k_select == 0 {
            return Ok(Vec::new());
        }
        for &relation in &self.config.relations {
            for c in self.inferencer.infer(context, relation, self.config.n_per_relation)? {
                if !candidates.iter().any(|seen| seen.text == c.text) {
                    candidates.push(c);
                }
            }
        }
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let confidences = candidates
            .iter()
            .map(score_confidence)
            .collect::<Result<Vec<_>, _>>()?;
        let texts: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
        let embeddings = self.embedder.embed(&texts)?;
        let inferences: Vec<Inference> = candidates
            .into_iter()
            .zip(confidences)
            .zip(embeddings)
            .map(|((candidate, confidence), embedding)| Inference {
                candidate,
                confidence,
                embedding,
            })
            .collect();
        let kernel = DppKernel::build(&inferences);
        let picked = select_diverse(&kernel, self.config.k_select);
        let mut selected: Vec<(usize, Inference)> = picked
            .into_iter()
            .enumerate()
            .map(|(order, i)| (order, inferences[i].clone()))
            .collect();
        selected.sort_by(|a, b| {
            b.1.confidence
                .total_cmp(&a.1.confidence)
                .then(a.0.cmp(&b.0))
        });
        Ok(selected.into_iter().map(|(_, inf)| inf).collect())
    }
}
