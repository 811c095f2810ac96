//! Concept bridging: a search whose policy favors sentences close to the
//! context and its concepts, and whose critic rewards landing in a node group
//! that covers the context concepts. The explored region becomes the
//! sub-region retrieval is confined to.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::kb::{ConceptId, KbError, KnowledgeIndex, KnowledgeSentence, SentenceId};
use crate::mcts::{most_similar_concept, KnowledgeChain, Search, SearchConfig, SearchError, SearchState, SearchTask};
use crate::providers::{EmbeddingProvider, ProviderVector};
use crate::simmath::{cosine, wasserstein, TokenCloud};

pub const DEFAULT_LAMBDA: f64 = -1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeQuery {
    pub context: String,
    /// Explicit context concepts that resolved in the index.
    pub context_concepts: Vec<ConceptId>,
    /// Context tokens with no matching concept.
    pub unresolved: Vec<String>,
    pub lambda: f64,
}

impl BridgeQuery {
    pub fn resolve(context: &str, index: &KnowledgeIndex, lambda: f64) -> Result<Self, SearchError> {
        let (context_concepts, unresolved) = index.resolve_concepts(context);
        if context_concepts.is_empty() {
            return Err(SearchError::UnresolvedSeeds(unresolved));
        }
        Ok(Self {
            context: context.to_owned(),
            context_concepts,
            unresolved,
            lambda,
        })
    }
}

/// `|N_C ∩ members| / |N_C|`.
pub fn bridging_rate(context_concepts: &[ConceptId], group_members: &[ConceptId]) -> f64 {
    if context_concepts.is_empty() {
        return 0.0;
    }
    let hits = context_concepts.iter().filter(|c| group_members.contains(c)).count();
    hits as f64 / context_concepts.len() as f64
}

/// Search task scoring candidates against a [`BridgeQuery`].
pub struct BridgeTask<'a> {
    query: &'a BridgeQuery,
    embedder: &'a dyn EmbeddingProvider,
    context_vec: ProviderVector,
    concept_vecs: Vec<ProviderVector>,
    context_cloud: TokenCloud,
}

impl<'a> BridgeTask<'a> {
    pub fn new(
        query: &'a BridgeQuery,
        index: &KnowledgeIndex,
        embedder: &'a dyn EmbeddingProvider,
    ) -> Result<Self, SearchError> {
        let context_vec = embedder.embed_one(&query.context)?;
        let surfaces: Vec<&str> = query
            .context_concepts
            .iter()
            .map(|&c| index.concept(c).map(|n| n.surface.as_str()).ok_or(KbError::UnknownConcept(c)))
            .collect::<Result<_, _>>()?;
        let concept_vecs = embedder.embed(&surfaces)?;
        let context_cloud = TokenCloud::from_text(&query.context, embedder)?;
        Ok(Self {
            query,
            embedder,
            context_vec,
            concept_vecs,
            context_cloud,
        })
    }

    /// `cos(k, C) + mean_n cos(k, n)` over the resolved context concepts.
    pub fn policy(&self, candidate: &KnowledgeSentence) -> Result<f64, SearchError> {
        let v = self.embedder.embed_one(&candidate.text)?;
        let mut concept_term = 0.0;
        for c in &self.concept_vecs {
            concept_term += cosine(&v, c)?;
        }
        if !self.concept_vecs.is_empty() {
            concept_term /= self.concept_vecs.len() as f64;
        }
        Ok(cosine(&v, &self.context_vec)? + concept_term)
    }

    /// Bridging rate of the marked concept's group plus `λ · WD(k, C)`.
    pub fn critic_for(
        &self,
        index: &KnowledgeIndex,
        sentence: &KnowledgeSentence,
        marked: ConceptId,
    ) -> Result<f64, SearchError> {
        let group = index.group_of(marked)?;
        let rate = bridging_rate(&self.query.context_concepts, &group.member_concepts);
        let cloud = TokenCloud::from_text(&sentence.text, self.embedder)?;
        let distance = wasserstein(&cloud, &self.context_cloud)?;
        Ok(rate + self.query.lambda * distance)
    }
}

impl SearchTask for BridgeTask<'_> {
    fn context(&self) -> &str {
        &self.query.context
    }

    fn seed_concepts(&self) -> &[ConceptId] {
        &self.query.context_concepts
    }

    fn prune_similarity(&self, sentence: &KnowledgeSentence) -> Result<f64, SearchError> {
        let v = self.embedder.embed_one(&sentence.text)?;
        Ok(cosine(&v, &self.context_vec)?)
    }

    fn policy_score(&self, sentence: &KnowledgeSentence) -> Result<f64, SearchError> {
        self.policy(sentence)
    }

    fn mark_concept(&self, index: &KnowledgeIndex, sentence: &KnowledgeSentence) -> Result<ConceptId, SearchError> {
        most_similar_concept(index, sentence, &self.context_vec, self.embedder)
    }

    fn critic(&self, index: &KnowledgeIndex, state: &SearchState, _path: &[SentenceId]) -> Result<f64, SearchError> {
        let id = state.sentence_id.expect("critic called on a sentence state");
        let marked = state.marked_concept.expect("critic called on a sentence state");
        let sentence = index.sentence(id).ok_or(SearchError::UnknownSentence(id))?;
        self.critic_for(index, sentence, marked)
    }
}

/// The context-relevant region of the index retrieval is confined to.
#[derive(Debug, Clone, PartialEq)]
pub struct SubRegion {
    /// Each sentence with the concept whose group brought it in.
    pub sentences: BTreeMap<SentenceId, ConceptId>,
    /// Context concepts plus every marked concept of an explored state.
    pub concept_ids: Vec<ConceptId>,
    pub chains: Vec<KnowledgeChain>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SubRegionRecord<'a> {
    sentence_id: SentenceId,
    text: &'a str,
    via_concept: &'a str,
}

impl SubRegion {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn contains(&self, id: SentenceId) -> bool {
        self.sentences.contains_key(&id)
    }

    pub fn sentence_ids(&self) -> impl Iterator<Item = SentenceId> + '_ {
        self.sentences.keys().copied()
    }

    /// Builds a region directly from a sentence list, attributing each to its first concept.
    pub fn from_sentences(index: &KnowledgeIndex, ids: &[SentenceId]) -> Result<Self, SearchError> {
        let mut sentences = BTreeMap::new();
        for &id in ids {
            let s = index.sentence(id).ok_or(SearchError::UnknownSentence(id))?;
            let via = *s.concepts.first().ok_or(SearchError::NoConcepts(id))?;
            sentences.insert(id, via);
        }
        Ok(Self {
            sentences,
            concept_ids: Vec::new(),
            chains: Vec::new(),
        })
    }

    fn add_group(&mut self, index: &KnowledgeIndex, concept: ConceptId) -> Result<(), KbError> {
        if !self.concept_ids.contains(&concept) {
            self.concept_ids.push(concept);
        }
        for &id in index.group_sentences(concept)? {
            self.sentences.entry(id).or_insert(concept);
        }
        Ok(())
    }

    /// One JSON line per sentence: `{sentence_id, text, via_concept}`.
    pub fn write_jsonl<W: Write>(&self, index: &KnowledgeIndex, mut w: W) -> std::io::Result<()> {
        for (&id, &via) in &self.sentences {
            let record = SubRegionRecord {
                sentence_id: id,
                text: index.sentence(id).map(|s| s.text.as_str()).unwrap_or(""),
                via_concept: index.concept(via).map(|c| c.surface.as_str()).unwrap_or(""),
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs the bridging search and collects the region it explored.
///
/// The region holds the node groups of the context concepts and of every
/// marked concept on an evaluated tree node, so it only grows as simulations
/// are added.
pub fn build_subregion(
    query: &BridgeQuery,
    index: &KnowledgeIndex,
    embedder: &dyn EmbeddingProvider,
    config: &SearchConfig,
) -> Result<SubRegion, SearchError> {
    let task = BridgeTask::new(query, index, embedder)?;
    let mut search = Search::new(index, &task, config.clone())?;
    let chains = search.run(None)?;
    let mut region = SubRegion {
        sentences: BTreeMap::new(),
        concept_ids: Vec::new(),
        chains,
    };
    for &c in &query.context_concepts {
        region.add_group(index, c)?;
    }
    for node in search.tree().nodes() {
        if let (true, Some(c)) = (node.visits > 0, node.state.marked_concept) {
            region.add_group(index, c)?;
        }
    }
    Ok(region)
}
