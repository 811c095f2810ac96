use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    require_non_empty, EmbeddingProvider, EntailmentProvider, InferenceCandidate,
    InferenceProvider, Provenance, ProviderError, ProviderVector, Relation,
};
use crate::kb::text::{extract_concepts, tokenize};

pub const STUB_DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Hashed bag-of-words embedder: each token is hashed into one bucket of a
/// fixed-dimension vector and counts are accumulated before normalization.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    dim: usize,
    id: String,
}

impl StubEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "stub embedding dimension must be positive");
        Self {
            dim,
            id: format!("stub-fnv1a-{dim}"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dim as u64) as usize
    }

    fn embed_text(&self, text: &str) -> Result<ProviderVector, ProviderError> {
        let mut values = vec![0.0; self.dim];
        let tokens = tokenize(text);
        if tokens.is_empty() {
            // punctuation-only text still gets a stable direction
            values[self.bucket(text.trim())] = 1.0;
        }
        for token in &tokens {
            values[self.bucket(token)] += 1.0;
        }
        ProviderVector::normalized(values, Provenance::Stub)
    }
}

impl Default for StubEmbedder {
    fn default() -> Self {
        Self::new(STUB_DIM)
    }
}

impl EmbeddingProvider for StubEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<ProviderVector>, ProviderError> {
        require_non_empty(texts)?;
        texts.iter().map(|t| self.embed_text(t)).collect()
    }
}

/// Template inference generator for pipeline testing.
///
/// Candidate `i` reads `"<statement> <concept_i>"` where concepts are the
/// context's content tokens ranked by frequency (ties by first occurrence).
/// Token probabilities come from a generator seeded by the instance seed,
/// the relation, the context and `i`.
#[derive(Debug, Clone)]
pub struct StubInferencer {
    seed: u64,
}

impl StubInferencer {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn ranked_concepts(context: &str) -> Vec<String> {
        let concepts = extract_concepts(context);
        let mut counts: HashMap<String, usize> = HashMap::new();
        for tok in tokenize(context) {
            *counts.entry(tok).or_default() += 1;
        }
        let mut ranked: Vec<(usize, usize, String)> = concepts
            .into_iter()
            .enumerate()
            .map(|(pos, c)| (counts[&c], pos, c))
            .collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        ranked.into_iter().map(|(_, _, c)| c).collect()
    }
}

impl InferenceProvider for StubInferencer {
    fn infer(
        &self,
        context: &str,
        relation: Relation,
        n: usize,
    ) -> Result<Vec<InferenceCandidate>, ProviderError> {
        if n == 0 {
            return Err(ProviderError::InvalidInput("n must be at least 1".into()));
        }
        let mut concepts = Self::ranked_concepts(context);
        if concepts.is_empty() {
            concepts.push("something".to_owned());
        }
        let mut key = Vec::with_capacity(context.len() + 16);
        key.extend_from_slice(relation.name().as_bytes());
        key.push(0x1f);
        key.extend_from_slice(context.as_bytes());
        let base = self.seed ^ fnv1a64(&key);

        let out = concepts
            .iter()
            .take(n)
            .enumerate()
            .map(|(i, concept)| {
                let text = format!("{} {}", relation.statement(), concept);
                let mut rng = ChaCha8Rng::seed_from_u64(base.wrapping_add(i as u64));
                let token_probs = (0..tokenize(&text).len())
                    .map(|_| rng.random_range(0.05..=1.0))
                    .collect();
                InferenceCandidate {
                    relation,
                    text,
                    token_probs,
                }
            })
            .collect();
        Ok(out)
    }
}

/// Token-overlap entailment: `|tokens(premise) ∩ tokens(hypothesis)| / |tokens(hypothesis)|`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubEntailer;

impl EntailmentProvider for StubEntailer {
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<f64, ProviderError> {
        require_non_empty(&[premise, hypothesis])?;
        let premise: HashSet<String> = tokenize(premise).into_iter().collect();
        let hypothesis: HashSet<String> = tokenize(hypothesis).into_iter().collect();
        if hypothesis.is_empty() {
            return Ok(0.0);
        }
        let shared = hypothesis.intersection(&premise).count();
        Ok(shared as f64 / hypothesis.len() as f64)
    }
}
