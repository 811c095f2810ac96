//! Knowledge corpus: sentences linked through shared concepts, with concepts
//! partitioned into semantic node groups.

mod cluster;
mod ingest;
mod snapshot;
pub mod text;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::ProviderError;

pub use cluster::{build_node_groups, DEFAULT_CLUSTER_THRESHOLD};
pub use ingest::{index_rows, ingest_corpus, ingest_reader, IngestConfig, IngestReport, RawRow};
pub use snapshot::INDEX_MAGIC;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("empty corpus: no rows accepted ({skipped} malformed)")]
    EmptyCorpus { skipped: usize },
    #[error("unknown concept {0}")]
    UnknownConcept(ConceptId),
    #[error("unknown concept surface {0:?}")]
    UnknownSurface(String),
    #[error("cluster threshold must lie in [0, 1], got {0}")]
    BadThreshold(f64),
    #[error("embedding provider failed while clustering: {0}")]
    Provider(#[from] ProviderError),
    #[error("index snapshot line {line}: {message}")]
    Snapshot { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(SentenceId, "k");
id_type!(ConceptId, "n");
id_type!(GroupId, "g");

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeSentence {
    pub id: SentenceId,
    pub text: String,
    pub source_term: String,
    pub score: f64,
    /// Source term first, then extracted concepts in text order.
    pub concepts: Vec<ConceptId>,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptNode {
    pub id: ConceptId,
    pub surface: String,
    /// Sorted ascending.
    pub sentence_ids: Vec<SentenceId>,
    pub group_id: GroupId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeGroup {
    pub id: GroupId,
    /// Sorted ascending.
    pub member_concepts: Vec<ConceptId>,
    /// Sorted union of the members' sentence ids.
    pub sentence_ids: Vec<SentenceId>,
}

/// Immutable corpus index. Ids are dense positions into the backing vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeIndex {
    sentences: Vec<KnowledgeSentence>,
    concepts: Vec<ConceptNode>,
    groups: Vec<NodeGroup>,
    surface_lookup: HashMap<String, ConceptId>,
}

impl KnowledgeIndex {
    /// Links sentences to concepts and places every concept in its own group.
    ///
    /// `sentences[i].concepts` must reference `surfaces` by position.
    pub(crate) fn from_parts(sentences: Vec<KnowledgeSentence>, surfaces: Vec<String>) -> Self {
        let mut concept_sentences: Vec<Vec<SentenceId>> = vec![Vec::new(); surfaces.len()];
        for s in &sentences {
            for c in &s.concepts {
                concept_sentences[c.index()].push(s.id);
            }
        }
        let surface_lookup = surfaces
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), ConceptId(i as u32)))
            .collect();
        let concepts = surfaces
            .into_iter()
            .zip(concept_sentences)
            .enumerate()
            .map(|(i, (surface, mut sentence_ids))| {
                sentence_ids.sort_unstable();
                sentence_ids.dedup();
                ConceptNode {
                    id: ConceptId(i as u32),
                    surface,
                    sentence_ids,
                    group_id: GroupId(i as u32),
                }
            })
            .collect();
        let mut index = Self {
            sentences,
            concepts,
            groups: Vec::new(),
            surface_lookup,
        };
        let singletons = (0..index.concepts.len()).map(|i| vec![ConceptId(i as u32)]).collect();
        index.set_groups(singletons);
        index
    }

    /// Replaces the grouping. `partition` must cover every concept exactly once.
    pub(crate) fn set_groups(&mut self, partition: Vec<Vec<ConceptId>>) {
        let mut groups = Vec::with_capacity(partition.len());
        for (g, mut members) in partition.into_iter().enumerate() {
            let gid = GroupId(g as u32);
            members.sort_unstable();
            let mut sentence_ids: Vec<SentenceId> = Vec::new();
            for c in &members {
                self.concepts[c.index()].group_id = gid;
                sentence_ids.extend_from_slice(&self.concepts[c.index()].sentence_ids);
            }
            sentence_ids.sort_unstable();
            sentence_ids.dedup();
            groups.push(NodeGroup {
                id: gid,
                member_concepts: members,
                sentence_ids,
            });
        }
        self.groups = groups;
    }

    pub fn sentences(&self) -> &[KnowledgeSentence] {
        &self.sentences
    }

    pub fn concepts(&self) -> &[ConceptNode] {
        &self.concepts
    }

    pub fn groups(&self) -> &[NodeGroup] {
        &self.groups
    }

    pub fn sentence(&self, id: SentenceId) -> Option<&KnowledgeSentence> {
        self.sentences.get(id.index())
    }

    pub fn concept(&self, id: ConceptId) -> Option<&ConceptNode> {
        self.concepts.get(id.index())
    }

    pub fn group(&self, id: GroupId) -> Option<&NodeGroup> {
        self.groups.get(id.index())
    }

    pub fn lookup(&self, surface: &str) -> Option<ConceptId> {
        self.surface_lookup.get(surface).copied()
    }

    /// The node group containing `concept`.
    pub fn group_of(&self, concept: ConceptId) -> Result<&NodeGroup, KbError> {
        let node = self.concept(concept).ok_or(KbError::UnknownConcept(concept))?;
        Ok(&self.groups[node.group_id.index()])
    }

    /// All sentences connected to any member of `concept`'s node group, sorted by id.
    pub fn group_sentences(&self, concept: ConceptId) -> Result<&[SentenceId], KbError> {
        Ok(&self.group_of(concept)?.sentence_ids)
    }

    /// Resolves free text to known concepts: adjacent token pairs found in the
    /// surface lookup first, then single content tokens, each in text order.
    /// Also returns the content tokens that did not resolve.
    pub fn resolve_concepts(&self, text: &str) -> (Vec<ConceptId>, Vec<String>) {
        let tokens = text::tokenize(text);
        let mut found = Vec::new();
        for pair in tokens.windows(2) {
            if let Some(id) = self.lookup(&format!("{} {}", pair[0], pair[1])) {
                if !found.contains(&id) {
                    found.push(id);
                }
            }
        }
        let mut missing = Vec::new();
        for token in text::extract_concepts(text) {
            match self.lookup(&token) {
                Some(id) if !found.contains(&id) => found.push(id),
                Some(_) => {}
                None => missing.push(token),
            }
        }
        (found, missing)
    }
}
