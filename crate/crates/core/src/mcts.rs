//! Rollout-free Monte Carlo tree search over the knowledge graph.
//!
//! A state is a sentence plus a *marked* concept inside it; an action moves
//! to another sentence of the marked concept's node group. Each simulation
//! descends by PUCT, expands the frontier node with policy-pruned children,
//! scores one new node with the task critic instead of a rollout, and backs
//! the value up to the root.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{ConceptId, KbError, KnowledgeIndex, KnowledgeSentence, SentenceId};
use crate::providers::{EmbeddingProvider, ProviderError, ProviderVector};
use crate::simmath::{dot, policy_weights, MathError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("no context concept resolves in the index (unresolved: {})", .0.join(", "))]
    UnresolvedSeeds(Vec<String>),
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("sentence {0} has no concepts")]
    NoConcepts(SentenceId),
    #[error("unknown sentence {0}")]
    UnknownSentence(SentenceId),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("trace write failed: {0}")]
    Trace(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Maximum chain length.
    pub horizon: usize,
    /// Candidates kept after similarity pruning at each expansion.
    pub candidate_pool: usize,
    /// Children instantiated per expansion; also the number of chains surfaced.
    pub branch: usize,
    pub c_puct: f64,
    pub simulations: usize,
    pub seed: u64,
    /// Softmax temperature turning policy scores into priors.
    pub temperature: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            candidate_pool: 50,
            branch: 5,
            c_puct: std::f64::consts::FRAC_1_SQRT_2,
            simulations: 100,
            seed: 0,
            temperature: 1.0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let fail = |m: &str| Err(SearchError::Config(m.to_owned()));
        if self.horizon < 1 {
            return fail("horizon must be at least 1");
        }
        if self.branch < 1 {
            return fail("branch must be at least 1");
        }
        if self.branch > self.candidate_pool {
            return fail("branch must not exceed candidate_pool");
        }
        if self.simulations < 1 {
            return fail("simulations must be at least 1");
        }
        if !(self.c_puct >= 0.0 && self.c_puct.is_finite()) {
            return fail("c_puct must be finite and non-negative");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail("temperature must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    pub context: Arc<str>,
    /// Absent at the root.
    pub sentence_id: Option<SentenceId>,
    /// Absent at the root.
    pub marked_concept: Option<ConceptId>,
    pub depth: usize,
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
pub struct SearchNode {
    pub state: SearchState,
    pub parent: Option<NodeId>,
    /// Sentence moved to from the parent.
    pub action: Option<SentenceId>,
    pub children: Vec<NodeId>,
    pub visits: u32,
    pub total_value: f64,
    pub prior: f64,
    /// Cached critic score of this state.
    pub critic: Option<f64>,
    /// Times this node was the evaluated leaf of a simulation.
    pub self_evaluations: u32,
    pub expanded: bool,
    /// Expanded with no admissible candidate.
    pub terminal: bool,
}

impl SearchNode {
    pub fn mean_value(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.total_value / f64::from(self.visits)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub sentence_id: SentenceId,
    pub marked_concept: ConceptId,
    pub critic_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeChain {
    pub steps: Vec<ChainStep>,
    /// Sum of the steps' critic scores.
    pub total_value: f64,
}

impl KnowledgeChain {
    pub fn sentence_ids(&self) -> impl Iterator<Item = SentenceId> + '_ {
        self.steps.iter().map(|s| s.sentence_id)
    }

    pub fn leaf_critic(&self) -> Option<f64> {
        self.steps.last().map(|s| s.critic_score)
    }
}

/// Task-specific policy and critic plugged into the search.
pub trait SearchTask {
    fn context(&self) -> &str;

    /// Concepts whose node groups seed the root's candidates.
    fn seed_concepts(&self) -> &[ConceptId];

    /// Candidate sentences for the root's children.
    fn root_candidates(&self, index: &KnowledgeIndex) -> Result<Vec<SentenceId>, SearchError> {
        let seeds = self.seed_concepts();
        if seeds.is_empty() {
            return Err(SearchError::UnresolvedSeeds(Vec::new()));
        }
        let mut out = BTreeSet::new();
        for &c in seeds {
            out.extend(index.group_sentences(c)?.iter().copied());
        }
        Ok(out.into_iter().collect())
    }

    /// Whether the search may step onto `id` at all.
    fn admits(&self, _id: SentenceId) -> bool {
        true
    }

    /// Similarity used to prune candidates down to the pool size.
    fn prune_similarity(&self, sentence: &KnowledgeSentence) -> Result<f64, SearchError>;

    fn policy_score(&self, sentence: &KnowledgeSentence) -> Result<f64, SearchError>;

    /// Concept of `sentence` designating the next hop.
    fn mark_concept(
        &self,
        index: &KnowledgeIndex,
        sentence: &KnowledgeSentence,
    ) -> Result<ConceptId, SearchError>;

    /// Value of `state`; `path` lists the sentences from the root down to
    /// and including the state's own sentence.
    fn critic(
        &self,
        index: &KnowledgeIndex,
        state: &SearchState,
        path: &[SentenceId],
    ) -> Result<f64, SearchError>;
}

/// The concept of `sentence` whose surface embedding is closest to `target`;
/// ties go to the lexicographically smallest surface.
pub fn most_similar_concept(
    index: &KnowledgeIndex,
    sentence: &KnowledgeSentence,
    target: &ProviderVector,
    embedder: &dyn EmbeddingProvider,
) -> Result<ConceptId, SearchError> {
    let surfaces: Vec<&str> = sentence
        .concepts
        .iter()
        .map(|c| {
            index
                .concept(*c)
                .map(|n| n.surface.as_str())
                .ok_or(KbError::UnknownConcept(*c))
        })
        .collect::<Result<_, _>>()?;
    if surfaces.is_empty() {
        return Err(SearchError::NoConcepts(sentence.id));
    }
    let vectors = embedder.embed(&surfaces)?;
    let mut best: Option<(f64, &str, ConceptId)> = None;
    for ((&id, surface), v) in sentence.concepts.iter().zip(&surfaces).zip(&vectors) {
        let sim = dot(v.values(), target.values());
        let better = match best {
            None => true,
            Some((bs, bsurf, _)) => sim > bs || (sim == bs && *surface < bsurf),
        };
        if better {
            best = Some((sim, surface, id));
        }
    }
    Ok(best.map(|(_, _, id)| id).expect("non-empty concept list"))
}

/// PUCT score of a child: `Q + c_puct · P · √N_parent / (1 + n)`, `Q = 0` when unvisited.
pub fn puct_score(child: &SearchNode, parent_visits: u32, c_puct: f64) -> f64 {
    let exploration =
        c_puct * child.prior * f64::from(parent_visits).sqrt() / (1.0 + f64::from(child.visits));
    child.mean_value() + exploration
}

/// Arena-allocated search tree; node 0 is the root.
#[derive(Debug, Clone)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub fn new(context: Arc<str>) -> Self {
        Self {
            nodes: vec![SearchNode {
                state: SearchState {
                    context,
                    sentence_id: None,
                    marked_concept: None,
                    depth: 0,
                },
                parent: None,
                action: None,
                children: Vec::new(),
                visits: 0,
                total_value: 0.0,
                prior: 1.0,
                critic: None,
                self_evaluations: 0,
                expanded: false,
                terminal: false,
            }],
        }
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Sentences on the path from the root to `id`, root side first.
    pub fn path(&self, id: NodeId) -> Vec<SentenceId> {
        let mut path = Vec::with_capacity(self.nodes[id].state.depth);
        let mut cur = Some(id);
        while let Some(n) = cur {
            if let Some(a) = self.nodes[n].action {
                path.push(a);
            }
            cur = self.nodes[n].parent;
        }
        path.reverse();
        path
    }

    /// Adds `value` to every node from `leaf` up to the root, inclusive.
    pub fn backpropagate(&mut self, leaf: NodeId, value: f64) {
        let mut cur = Some(leaf);
        while let Some(n) = cur {
            let node = &mut self.nodes[n];
            node.visits += 1;
            node.total_value += value;
            cur = node.parent;
        }
    }

    fn add_child(&mut self, parent: NodeId, state: SearchState, action: SentenceId, prior: f64) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(SearchNode {
            state,
            parent: Some(parent),
            action: Some(action),
            children: Vec::new(),
            visits: 0,
            total_value: 0.0,
            prior,
            critic: None,
            self_evaluations: 0,
            expanded: false,
            terminal: false,
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Child with the highest PUCT score; ties go to the lowest action id.
    pub fn select_child(&self, parent: NodeId, c_puct: f64) -> Option<NodeId> {
        let parent_visits = self.nodes[parent].visits;
        let mut best: Option<(f64, SentenceId, NodeId)> = None;
        for &c in &self.nodes[parent].children {
            let node = &self.nodes[c];
            let score = puct_score(node, parent_visits, c_puct);
            let action = node.action.expect("non-root node has an action");
            let better = match best {
                None => true,
                Some((bs, ba, _)) => score > bs || (score == bs && action < ba),
            };
            if better {
                best = Some((score, action, c));
            }
        }
        best.map(|(_, _, c)| c)
    }

    /// Most-visited child among visited ones; ties by higher mean value, then lower action id.
    fn most_visited_child(&self, parent: NodeId) -> Option<NodeId> {
        let mut ranked = self.ranked_children(parent);
        if ranked.is_empty() {
            None
        } else {
            Some(ranked.remove(0))
        }
    }

    fn ranked_children(&self, parent: NodeId) -> Vec<NodeId> {
        let mut kids: Vec<NodeId> = self.nodes[parent]
            .children
            .iter()
            .copied()
            .filter(|&c| self.nodes[c].visits > 0)
            .collect();
        kids.sort_by(|&a, &b| {
            let (na, nb) = (&self.nodes[a], &self.nodes[b]);
            nb.visits
                .cmp(&na.visits)
                .then(nb.mean_value().total_cmp(&na.mean_value()))
                .then(na.action.cmp(&nb.action))
        });
        kids
    }

    fn chain_from(&self, start: NodeId) -> KnowledgeChain {
        let mut steps = Vec::new();
        let mut cur = Some(start);
        while let Some(n) = cur {
            let node = &self.nodes[n];
            if let (Some(sentence_id), Some(marked_concept)) = (node.state.sentence_id, node.state.marked_concept) {
                steps.push(ChainStep {
                    sentence_id,
                    marked_concept,
                    critic_score: node.critic.unwrap_or(0.0),
                });
            }
            cur = self.most_visited_child(n);
        }
        let total_value = steps.iter().map(|s| s.critic_score).sum();
        KnowledgeChain { steps, total_value }
    }

    /// The principal chain followed by up to `max_chains - 1` alternates
    /// rooted at the next most-visited root children.
    pub fn chains(&self, max_chains: usize) -> Vec<KnowledgeChain> {
        self.ranked_children(0)
            .into_iter()
            .take(max_chains)
            .map(|c| self.chain_from(c))
            .collect()
    }

    /// Checks the structural invariants of the tree.
    pub fn audit(&self, horizon: usize) -> Result<(), String> {
        for (id, node) in self.nodes.iter().enumerate() {
            let child_visits: u32 = node.children.iter().map(|&c| self.nodes[c].visits).sum();
            if node.visits != child_visits + node.self_evaluations {
                return Err(format!(
                    "node {id}: N={} but children sum {} + self evaluations {}",
                    node.visits, child_visits, node.self_evaluations
                ));
            }
            if !node.children.is_empty() && !node.terminal && node.self_evaluations > 1 {
                return Err(format!("node {id}: interior node evaluated {} times", node.self_evaluations));
            }
            if node.state.depth > horizon {
                return Err(format!("node {id}: depth {} beyond horizon", node.state.depth));
            }
            if !node.children.is_empty() {
                let priors: f64 = node.children.iter().map(|&c| self.nodes[c].prior).sum();
                if (priors - 1.0).abs() > 1e-6 {
                    return Err(format!("node {id}: sibling priors sum to {priors}"));
                }
            }
            let path = self.path(id);
            let unique: BTreeSet<_> = path.iter().collect();
            if unique.len() != path.len() {
                return Err(format!("node {id}: sentence repeated on path {path:?}"));
            }
        }
        Ok(())
    }
}

/// One simulation's trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub iter: usize,
    pub path: Vec<SentenceId>,
    pub value: Option<f64>,
    pub chosen_action: Option<SentenceId>,
}

pub struct Search<'a, T: SearchTask + ?Sized> {
    index: &'a KnowledgeIndex,
    task: &'a T,
    config: SearchConfig,
    tree: SearchTree,
    iterations: usize,
}

impl<'a, T: SearchTask + ?Sized> Search<'a, T> {
    pub fn new(index: &'a KnowledgeIndex, task: &'a T, config: SearchConfig) -> Result<Self, SearchError> {
        config.validate()?;
        Ok(Self {
            index,
            task,
            tree: SearchTree::new(Arc::from(task.context())),
            config,
            iterations: 0,
        })
    }

    pub fn tree(&self) -> &SearchTree {
        &self.tree
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Instantiates the children of `node`, or marks it terminal.
    pub fn expand(&mut self, node: NodeId) -> Result<(), SearchError> {
        let index = self.index;
        let (depth, marked, context) = {
            let n = &self.tree.nodes[node];
            debug_assert!(!n.expanded);
            (n.state.depth, n.state.marked_concept, n.state.context.clone())
        };
        let raw = match marked {
            None => self.task.root_candidates(index)?,
            Some(c) => index.group_sentences(c)?.to_vec(),
        };
        let path: BTreeSet<SentenceId> = self.tree.path(node).into_iter().collect();
        let mut pool: Vec<(f64, SentenceId)> = Vec::new();
        for id in raw {
            if path.contains(&id) || !self.task.admits(id) {
                continue;
            }
            let sentence = index.sentence(id).ok_or(SearchError::UnknownSentence(id))?;
            pool.push((self.task.prune_similarity(sentence)?, id));
        }
        pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        pool.truncate(self.config.candidate_pool);

        let mut scored: Vec<(f64, SentenceId)> = pool
            .into_iter()
            .map(|(_, id)| {
                let sentence = index.sentence(id).ok_or(SearchError::UnknownSentence(id))?;
                Ok((self.task.policy_score(sentence)?, id))
            })
            .collect::<Result<_, SearchError>>()?;
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.truncate(self.config.branch);

        self.tree.nodes[node].expanded = true;
        if scored.is_empty() {
            self.tree.nodes[node].terminal = true;
            return Ok(());
        }
        let scores: Vec<f64> = scored.iter().map(|s| s.0).collect();
        let priors = policy_weights(&scores, self.config.temperature)?;
        let mut children: Vec<(SentenceId, f64)> =
            scored.iter().map(|s| s.1).zip(priors).collect();
        children.sort_by_key(|c| c.0);
        for (id, prior) in children {
            let sentence = index.sentence(id).ok_or(SearchError::UnknownSentence(id))?;
            let marked = self.task.mark_concept(index, sentence)?;
            let state = SearchState {
                context: context.clone(),
                sentence_id: Some(id),
                marked_concept: Some(marked),
                depth: depth + 1,
            };
            self.tree.add_child(node, state, id, prior);
        }
        Ok(())
    }

    fn evaluate(&mut self, node: NodeId) -> Result<f64, SearchError> {
        if let Some(v) = self.tree.nodes[node].critic {
            return Ok(v);
        }
        let path = self.tree.path(node);
        let value = self.task.critic(self.index, &self.tree.nodes[node].state, &path)?;
        self.tree.nodes[node].critic = Some(value);
        Ok(value)
    }

    /// Runs one selection/expansion/evaluation/back-propagation cycle.
    pub fn step(&mut self) -> Result<SimulationRecord, SearchError> {
        let iter = self.iterations;
        self.iterations += 1;
        let horizon = self.config.horizon;
        let mut node: NodeId = 0;
        let leaf = loop {
            let (expanded, depth) = {
                let n = &self.tree.nodes[node];
                (n.expanded, n.state.depth)
            };
            if !expanded && depth < horizon {
                self.expand(node)?;
            }
            let n = &self.tree.nodes[node];
            if n.children.is_empty() || n.state.depth >= horizon {
                break node;
            }
            let child = self
                .tree
                .select_child(node, self.config.c_puct)
                .expect("expanded node has children");
            if self.tree.nodes[child].visits == 0 {
                break child;
            }
            node = child;
        };

        let path = self.tree.path(leaf);
        if leaf == 0 {
            // root has no admissible candidate; nothing to evaluate
            return Ok(SimulationRecord {
                iter,
                path,
                value: None,
                chosen_action: None,
            });
        }
        let value = self.evaluate(leaf)?;
        self.tree.nodes[leaf].self_evaluations += 1;
        self.tree.backpropagate(leaf, value);
        Ok(SimulationRecord {
            iter,
            chosen_action: path.last().copied(),
            path,
            value: Some(value),
        })
    }

    /// Runs the configured number of simulations, optionally writing one JSON
    /// line per simulation to `trace`.
    pub fn run(&mut self, mut trace: Option<&mut dyn Write>) -> Result<Vec<KnowledgeChain>, SearchError> {
        for _ in 0..self.config.simulations {
            let record = self.step()?;
            if let Some(w) = trace.as_deref_mut() {
                serde_json::to_writer(&mut *w, &record).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
            if record.value.is_none() {
                break;
            }
        }
        Ok(self.chains())
    }

    pub fn chains(&self) -> Vec<KnowledgeChain> {
        self.tree.chains(self.config.branch)
    }
}

/// Runs a full search and returns the principal chain plus alternates.
pub fn search<T: SearchTask + ?Sized>(
    index: &KnowledgeIndex,
    task: &T,
    config: &SearchConfig,
) -> Result<Vec<KnowledgeChain>, SearchError> {
    Search::new(index, task, config.clone())?.run(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn child(q_sum: f64, visits: u32, prior: f64) -> SearchNode {
        let mut tree = SearchTree::new(Arc::from("c"));
        let state = tree.root().state.clone();
        let id = tree.add_child(0, state, SentenceId(1), prior);
        let mut n = tree.node(id).clone();
        n.visits = visits;
        n.total_value = q_sum;
        n
    }

    #[test]
    fn puct_unvisited_at_zero_parent_visits() {
        assert_eq!(puct_score(&child(0.0, 0, 0.7), 0, std::f64::consts::FRAC_1_SQRT_2), 0.0);
    }

    #[test]
    fn puct_hand_value() {
        // Q = 1.5 / 3 = 0.5; 0.5 + 0.70711 * 0.2 * 4 / 4
        let s = puct_score(&child(1.5, 3, 0.2), 16, std::f64::consts::FRAC_1_SQRT_2);
        assert!((s - 0.6414).abs() < 1e-4, "{s}");
    }

    #[test]
    fn puct_monotone_in_prior() {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        assert!(puct_score(&child(1.0, 2, 0.6), 9, c) > puct_score(&child(1.0, 2, 0.3), 9, c));
    }

    #[test]
    fn backprop_single_edge() {
        let mut tree = SearchTree::new(Arc::from("c"));
        let state = tree.root().state.clone();
        let leaf = tree.add_child(0, state, SentenceId(0), 1.0);
        tree.backpropagate(leaf, 0.7);
        assert_eq!(tree.root().visits, 1);
        assert_eq!(tree.root().total_value, 0.7);
    }

    #[test]
    fn backprop_mean() {
        let mut tree = SearchTree::new(Arc::from("c"));
        let state = tree.root().state.clone();
        let leaf = tree.add_child(0, state, SentenceId(0), 1.0);
        tree.backpropagate(leaf, 0.4);
        tree.backpropagate(leaf, 0.6);
        assert!((tree.root().mean_value() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(SearchConfig::default().validate().is_ok());
        let bad = SearchConfig {
            branch: 60,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SearchConfig {
            simulations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SearchConfig {
            horizon: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn default_constants() {
        let c = SearchConfig::default();
        assert_eq!((c.horizon, c.candidate_pool, c.branch, c.simulations), (3, 50, 5, 100));
        assert!((c.c_puct - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
    }
}
