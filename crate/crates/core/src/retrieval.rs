//! Inference-aware retrieval: searches inside a bridged sub-region for
//! sentences supporting one inference, penalizing repeats of what was
//! already retrieved.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridging::SubRegion;
use crate::kb::{ConceptId, KnowledgeIndex, KnowledgeSentence, SentenceId};
use crate::mcts::{most_similar_concept, KnowledgeChain, Search, SearchConfig, SearchError, SearchState, SearchTask};
use crate::providers::{EmbeddingProvider, ProviderVector};
use crate::reasoner::Inference;
use crate::simmath::cosine;

pub const DEFAULT_LENGTH_WEIGHT: f64 = 0.1;
pub const DEFAULT_MAX_TOKENS: usize = 32;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("sub-region is empty")]
    EmptySubRegion,
    #[error("length_weight must be finite and non-negative, got {0}")]
    BadLengthWeight(f64),
    #[error("max_tokens must be at least 1")]
    BadMaxTokens,
    #[error(transparent)]
    Search(#[from] SearchError),
}

impl From<crate::providers::ProviderError> for RetrievalError {
    fn from(e: crate::providers::ProviderError) -> Self {
        Self::Search(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub length_weight: f64,
    pub max_tokens: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            length_weight: DEFAULT_LENGTH_WEIGHT,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.length_weight >= 0.0 && self.length_weight.is_finite()) {
            return Err(RetrievalError::BadLengthWeight(self.length_weight));
        }
        if self.max_tokens == 0 {
            return Err(RetrievalError::BadMaxTokens);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalQuery {
    pub context: String,
    pub inference: Inference,
    /// Embeddings of sentences already retrieved for this conversation.
    pub history: Vec<ProviderVector>,
    pub config: RetrievalConfig,
}

/// Largest cosine between `k` and any history item; 0 for an empty history.
pub fn repetition_penalty(k: &ProviderVector, history: &[ProviderVector]) -> Result<f64, SearchError> {
    let mut worst: Option<f64> = None;
    for h in history {
        let c = cosine(k, h)?;
        worst = Some(worst.map_or(c, |w: f64| w.max(c)));
    }
    Ok(worst.unwrap_or(0.0))
}

/// `cos(r,k) + cos(C,k) + w · min(tokens / max_tokens, 1) − max_i cos(k, k̂_i)`.
pub fn retrieval_score(
    inference: &ProviderVector,
    context: &ProviderVector,
    sentence: &ProviderVector,
    token_count: usize,
    history: &[ProviderVector],
    config: &RetrievalConfig,
) -> Result<f64, SearchError> {
    let length = (token_count as f64 / config.max_tokens as f64).min(1.0);
    Ok(cosine(inference, sentence)? + cosine(context, sentence)? + config.length_weight * length
        - repetition_penalty(sentence, history)?)
}

/// Search task for one inference inside a sub-region.
pub struct RetrievalTask<'a> {
    query: &'a RetrievalQuery,
    subregion: &'a SubRegion,
    embedder: &'a dyn EmbeddingProvider,
    context_vec: ProviderVector,
    policy_vec: ProviderVector,
}

impl<'a> RetrievalTask<'a> {
    pub fn new(
        query: &'a RetrievalQuery,
        subregion: &'a SubRegion,
        embedder: &'a dyn EmbeddingProvider,
    ) -> Result<Self, SearchError> {
        let context_vec = embedder.embed_one(&query.context)?;
        let policy_vec = embedder.embed_one(&policy_text(query.inference.text(), &query.context))?;
        Ok(Self {
            query,
            subregion,
            embedder,
            context_vec,
            policy_vec,
        })
    }

    /// Critic of `sentence`, treating the sentences before it on `path` as history too.
    pub fn critic_for(
        &self,
        index: &KnowledgeIndex,
        sentence: &KnowledgeSentence,
        path: &[SentenceId],
    ) -> Result<f64, SearchError> {
        let k = self.embedder.embed_one(&sentence.text)?;
        let mut history = self.query.history.clone();
        let earlier: Vec<&str> = path
            .iter()
            .filter(|&&id| id != sentence.id)
            .filter_map(|&id| index.sentence(id).map(|s| s.text.as_str()))
            .collect();
        if !earlier.is_empty() {
            history.extend(self.embedder.embed(&earlier)?);
        }
        retrieval_score(
            &self.query.inference.embedding,
            &self.context_vec,
            &k,
            sentence.token_count,
            &history,
            &self.query.config,
        )
    }
}

/// Text the policy compares candidates with: inference and context joined by one space.
pub fn policy_text(inference: &str, context: &str) -> String {
    format!("{inference} {context}")
}

impl SearchTask for RetrievalTask<'_> {
    fn context(&self) -> &str {
        &self.query.context
    }

    fn seed_concepts(&self) -> &[ConceptId] {
        &self.subregion.concept_ids
    }

    fn root_candidates(&self, _index: &KnowledgeIndex) -> Result<Vec<SentenceId>, SearchError> {
        Ok(self.subregion.sentence_ids().collect())
    }

    fn admits(&self, id: SentenceId) -> bool {
        self.subregion.contains(id)
    }

    fn prune_similarity(&self, sentence: &KnowledgeSentence) -> Result<f64, SearchError> {
        self.policy_score(sentence)
    }

    fn policy_score(&self, sentence: &KnowledgeSentence) -> Result<f64, SearchError> {
        let v = self.embedder.embed_one(&sentence.text)?;
        Ok(cosine(&v, &self.policy_vec)?)
    }

    fn mark_concept(&self, index: &KnowledgeIndex, sentence: &KnowledgeSentence) -> Result<ConceptId, SearchError> {
        most_similar_concept(index, sentence, &self.context_vec, self.embedder)
    }

    fn critic(&self, index: &KnowledgeIndex, state: &SearchState, path: &[SentenceId]) -> Result<f64, SearchError> {
        let id = state.sentence_id.expect("critic called on a sentence state");
        let sentence = index.sentence(id).ok_or(SearchError::UnknownSentence(id))?;
        self.critic_for(index, sentence, path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedSentence {
    pub sentence_id: SentenceId,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct RetrievalResult {
    pub inference: Inference,
    pub chains: Vec<KnowledgeChain>,
    /// Distinct sentences of the chains, best critic score first, ties by id.
    pub flat_knowledge: Vec<RankedSentence>,
}

/// Retrieves supporting chains for one inference.
///
/// Runs up to `branch` searches. Each accepts its principal chain and pushes
/// the chain's sentence embeddings onto `query.history` before the next
/// search, so later chains favor unseen material. Stops early once a search
/// brings back nothing new.
pub fn retrieve_for_inference(
    query: &mut RetrievalQuery,
    subregion: &SubRegion,
    index: &KnowledgeIndex,
    embedder: &dyn EmbeddingProvider,
    config: &SearchConfig,
) -> Result<RetrievalResult, RetrievalError> {
    if subregion.is_empty() {
        return Err(RetrievalError::EmptySubRegion);
    }
    query.config.validate()?;
    let mut chains = Vec::new();
    let mut best: BTreeMap<SentenceId, f64> = BTreeMap::new();
    for _ in 0..config.branch {
        let principal = {
            let task = RetrievalTask::new(query, subregion, embedder)?;
            let mut search = Search::new(index, &task, config.clone())?;
            search.run(None)?.into_iter().next()
        };
        let Some(chain) = principal else { break };
        if chain.sentence_ids().all(|id| best.contains_key(&id)) {
            break;
        }
        let texts: Vec<&str> = chain
            .sentence_ids()
            .filter_map(|id| index.sentence(id).map(|s| s.text.as_str()))
            .collect();
        query.history.extend(embedder.embed(&texts)?);
        for step in &chain.steps {
            let entry = best.entry(step.sentence_id).or_insert(step.critic_score);
            *entry = entry.max(step.critic_score);
        }
        chains.push(chain);
    }
    let mut ranked: Vec<RankedSentence> = best
        .into_iter()
        .map(|(sentence_id, score)| RankedSentence { sentence_id, score })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.sentence_id.cmp(&b.sentence_id)));
    let mut seen_text = HashSet::new();
    ranked.retain(|r| {
        index
            .sentence(r.sentence_id)
            .is_none_or(|s| seen_text.insert(s.text.trim().to_lowercase()))
    });
    Ok(RetrievalResult {
        inference: query.inference.clone(),
        chains,
        flat_knowledge: ranked,
    })
}
