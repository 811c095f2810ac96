//! Evaluation: pairwise diversity (ROUGE, embedding overlap), alignment with
//! annotated logic transitions, and a dense top-k baseline.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::text::tokenize;
use crate::kb::{KnowledgeIndex, SentenceId};
use crate::providers::{EmbeddingProvider, EntailmentProvider, ProviderError, ProviderVector};
use crate::simmath::dot;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("text has no tokens: {0:?}")]
    NoTokens(String),
    #[error("theta must lie in [0, 1], got {0}")]
    BadTheta(f64),
    #[error("alignment needs at least one transition")]
    NoTransitions,
    #[error("k must be at least 1")]
    BadK,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeVariant {
    One,
    Two,
    L,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

fn tokens_of(text: &str) -> Result<Vec<String>, MetricsError> {
    let t = tokenize(text);
    if t.is_empty() {
        return Err(MetricsError::NoTokens(text.to_owned()));
    }
    Ok(t)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE of candidate `a` against reference `b` over the index tokenizer's tokens.
///
/// Texts too short to hold a single n-gram score 1 when their token
/// sequences are identical and 0 otherwise.
pub fn rouge(a: &str, b: &str, variant: RougeVariant) -> Result<Prf, MetricsError> {
    let ta = tokens_of(a)?;
    let tb = tokens_of(b)?;
    let (matched, na, nb) = match variant {
        RougeVariant::L => (lcs_len(&ta, &tb), ta.len(), tb.len()),
        RougeVariant::One | RougeVariant::Two => {
            let n = if variant == RougeVariant::One { 1 } else { 2 };
            let ca = ngram_counts(&ta, n);
            let cb = ngram_counts(&tb, n);
            let overlap = ca
                .iter()
                .map(|(g, &c)| c.min(cb.get(g).copied().unwrap_or(0)))
                .sum();
            (overlap, ta.len().saturating_sub(n - 1), tb.len().saturating_sub(n - 1))
        }
    };
    if na == 0 || nb == 0 {
        let same = if ta == tb { 1.0 } else { 0.0 };
        return Ok(Prf::new(same, same));
    }
    Ok(Prf::new(matched as f64 / na as f64, matched as f64 / nb as f64))
}

fn token_vectors(text: &str, embedder: &dyn EmbeddingProvider) -> Result<Vec<ProviderVector>, MetricsError> {
    let tokens = tokens_of(text)?;
    let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
    Ok(embedder.embed(&refs)?)
}

fn greedy_side(from: &[ProviderVector], to: &[ProviderVector]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|u| {
            to.iter()
                .map(|v| dot(u.values(), v.values()))
                .fold(f64::NEG_INFINITY, f64::max)
                .clamp(0.0, 1.0)
        })
        .sum();
    total / from.len() as f64
}

/// Greedy token matching: precision averages each `a` token's best cosine
/// against `b`'s tokens (floored at 0), recall the reverse.
pub fn semantic_overlap(a: &str, b: &str, embedder: &dyn EmbeddingProvider) -> Result<Prf, MetricsError> {
    let va = token_vectors(a, embedder)?;
    let vb = token_vectors(b, embedder)?;
    Ok(Prf::new(greedy_side(&va, &vb), greedy_side(&vb, &va)))
}

/// Mean pairwise overlap of a sentence set; lower means more diverse.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiversityReport {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub semantic_precision: f64,
    pub semantic_recall: f64,
    pub semantic_f1: f64,
    pub n_pairs: usize,
}

/// Averages over all unordered pairs; every mean is 0 with fewer than two sentences.
pub fn diversity_report<S: AsRef<str> + Sync>(
    sentences: &[S],
    embedder: &dyn EmbeddingProvider,
) -> Result<DiversityReport, MetricsError> {
    let m = sentences.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    if pairs.is_empty() {
        return Ok(DiversityReport::default());
    }
    let per_pair: Vec<[f64; 6]> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (sentences[i].as_ref(), sentences[j].as_ref());
            let s = semantic_overlap(a, b, embedder)?;
            Ok([
                rouge(a, b, RougeVariant::One)?.f1,
                rouge(a, b, RougeVariant::Two)?.f1,
                rouge(a, b, RougeVariant::L)?.f1,
                s.precision,
                s.recall,
                s.f1,
            ])
        })
        .collect::<Result<_, MetricsError>>()?;
    let n = per_pair.len() as f64;
    let mean = |k: usize| per_pair.iter().map(|p| p[k]).sum::<f64>() / n;
    Ok(DiversityReport {
        rouge1: mean(0),
        rouge2: mean(1),
        rouge_l: mean(2),
        semantic_precision: mean(3),
        semantic_recall: mean(4),
        semantic_f1: mean(5),
        n_pairs: per_pair.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentInput {
    pub retrieved: Vec<String>,
    pub transitions: Vec<String>,
    pub events: Vec<String>,
}

/// Entailment scores of every retrieved item and transition against every event.
#[derive(Debug, Clone, PartialEq)]
pub struct EntailmentTable {
    /// `retrieved[i]` entails `events[e]` with score `knowledge[i][e]`.
    pub knowledge: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<f64>>,
}

impl EntailmentTable {
    pub fn compute(input: &AlignmentInput, entailer: &dyn EntailmentProvider) -> Result<Self, MetricsError> {
        if input.transitions.is_empty() {
            return Err(MetricsError::NoTransitions);
        }
        let score = |premises: &[String]| -> Result<Vec<Vec<f64>>, MetricsError> {
            premises
                .iter()
                .map(|p| {
                    input
                        .events
                        .iter()
                        .map(|e| entailer.entail(p, e).map_err(MetricsError::from))
                        .collect()
                })
                .collect()
        };
        Ok(Self {
            knowledge: score(&input.retrieved)?,
            transitions: score(&input.transitions)?,
        })
    }

    /// Alignment at threshold `theta` (scores must exceed it strictly).
    pub fn at(&self, theta: f64) -> Result<AlignmentReport, MetricsError> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(MetricsError::BadTheta(theta));
        }
        let above = |rows: &[Vec<f64>]| -> Vec<usize> {
            rows.iter()
                .enumerate()
                .filter(|(_, r)| r.iter().any(|&s| s > theta))
                .map(|(i, _)| i)
                .collect()
        };
        let k_theta = above(&self.knowledge);
        let t_theta = above(&self.transitions);
        let n_events = self.transitions.first().map_or(0, Vec::len);
        let knowledge_events: Vec<bool> = (0..n_events)
            .map(|e| k_theta.iter().any(|&i| self.knowledge[i][e] > theta))
            .collect();
        let covered: Vec<usize> = t_theta
            .iter()
            .copied()
            .filter(|&t| (0..n_events).any(|e| self.transitions[t][e] > theta && knowledge_events[e]))
            .collect();
        let score = if t_theta.is_empty() {
            0.0
        } else {
            covered.len() as f64 / t_theta.len() as f64
        };
        Ok(AlignmentReport {
            theta,
            score,
            no_transition_passes: t_theta.is_empty(),
            k_theta,
            t_theta,
            covered,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub theta: f64,
    /// Covered transitions over `|T_θ|`; 0 when no transition passes.
    pub score: f64,
    /// Set when `T_θ` is empty, so a 0 score is not a measured miss.
    pub no_transition_passes: bool,
    /// Retrieved items entailing some event above θ.
    pub k_theta: Vec<usize>,
    /// Transitions entailing some event above θ.
    pub t_theta: Vec<usize>,
    /// Transitions of `T_θ` whose event is also entailed by a `K_θ` item.
    pub covered: Vec<usize>,
}

pub fn alignment_score(
    input: &AlignmentInput,
    theta: f64,
    entailer: &dyn EntailmentProvider,
) -> Result<AlignmentReport, MetricsError> {
    EntailmentTable::compute(input, entailer)?.at(theta)
}

/// Precomputed unit embeddings of every sentence for brute-force top-k search.
pub struct DenseIndex {
    ids: Vec<SentenceId>,
    vectors: Vec<ProviderVector>,
}

impl DenseIndex {
    pub fn build(index: &KnowledgeIndex, embedder: &dyn EmbeddingProvider) -> Result<Self, MetricsError> {
        let mut ids = Vec::with_capacity(index.sentences().len());
        let mut vectors = Vec::with_capacity(index.sentences().len());
        for chunk in index.sentences().chunks(1024) {
            let texts: Vec<&str> = chunk.iter().map(|s| s.text.as_str()).collect();
            vectors.extend(embedder.embed(&texts)?);
            ids.extend(chunk.iter().map(|s| s.id));
        }
        Ok(Self { ids, vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Top `k` sentences by cosine to `query`, ties by lower id.
    pub fn top_k(&self, query: &ProviderVector, k: usize) -> Result<Vec<(SentenceId, f64)>, MetricsError> {
        if k == 0 {
            return Err(MetricsError::BadK);
        }
        let mut scored: Vec<(SentenceId, f64)> = self
            .ids
            .iter()
            .zip(&self.vectors)
            .map(|(&id, v)| (id, dot(v.values(), query.values()).clamp(-1.0, 1.0)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }
}

/// Dense-retrieval baseline: top `k` sentences by embedding similarity to `query`.
pub fn baseline_retrieve(
    query: &str,
    index: &KnowledgeIndex,
    embedder: &dyn EmbeddingProvider,
    k: usize,
) -> Result<Vec<(SentenceId, f64)>, MetricsError> {
    if k == 0 {
        return Err(MetricsError::BadK);
    }
    let q = embedder.embed_one(query)?;
    DenseIndex::build(index, embedder)?.top_k(&q, k)
}
