//! End-to-end orchestration: reason about a conversation, bridge its
//! concepts into a sub-region, then retrieve supporting knowledge for each
//! inference inside that sub-region.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridging::{build_subregion, BridgeQuery, SubRegion, DEFAULT_LAMBDA};
use crate::kb::{KnowledgeIndex, DEFAULT_CLUSTER_THRESHOLD};
use crate::mcts::{SearchConfig, SearchError};
use crate::providers::{
    CachedEmbedder, EmbeddingProvider, EntailmentProvider, FileVectorStore, InferenceProvider,
    ProviderError, RemoteClient, RemoteConfig, StubEmbedder, StubEntailer, StubInferencer, STUB_DIM,
};
use crate::reasoner::{Reasoner, ReasonerConfig, ReasonerError};
use crate::retrieval::{retrieve_for_inference, RetrievalConfig, RetrievalError, RetrievalQuery, RetrievalResult};

pub const DEFAULT_CONTEXT_WINDOW: usize = 4;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config does not serialize: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BridgingConfig {
    pub lambda: f64,
    /// Cosine threshold used when clustering concepts into node groups.
    pub cluster_threshold: f64,
}

impl Default for BridgingConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            cluster_threshold: DEFAULT_CLUSTER_THRESHOLD,
        }
    }
}

/// Where a provider comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderSelector {
    Stub {
        #[serde(default = "default_stub_dim")]
        dim: usize,
    },
    /// Precomputed vectors; embeddings only.
    File { path: PathBuf },
    Remote(RemoteConfig),
}

fn default_stub_dim() -> usize {
    STUB_DIM
}

impl Default for ProviderSelector {
    fn default() -> Self {
        Self::Stub { dim: STUB_DIM }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProvidersConfig {
    pub embedding: ProviderSelector,
    pub inference: ProviderSelector,
    pub entailment: ProviderSelector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Seeds the stub inferencer and the search.
    pub seed: u64,
    /// Number of trailing turns forming the context.
    pub context_window: usize,
    pub search: SearchConfig,
    pub reasoner: ReasonerConfig,
    pub bridging: BridgingConfig,
    pub retrieval: RetrievalConfig,
    pub providers: ProvidersConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            context_window: DEFAULT_CONTEXT_WINDOW,
            search: SearchConfig::default(),
            reasoner: ReasonerConfig::default(),
            bridging: BridgingConfig::default(),
            retrieval: RetrievalConfig::default(),
            providers: ProvidersConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let config = Self::load_unvalidated(path)?;
        config.validate()?;
        Ok(config)
    }

    /// Parses without validating, for callers that apply overrides first.
    pub fn load_unvalidated(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Ok(toml::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.search.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.retrieval.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.context_window == 0 {
            return Err(ConfigError::Invalid("context_window must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.bridging.cluster_threshold) {
            return Err(ConfigError::Invalid("bridging.cluster_threshold must lie in [0, 1]".into()));
        }
        if !self.bridging.lambda.is_finite() {
            return Err(ConfigError::Invalid("bridging.lambda must be finite".into()));
        }
        if matches!(self.providers.inference, ProviderSelector::File { .. })
            || matches!(self.providers.entailment, ProviderSelector::File { .. })
        {
            return Err(ConfigError::Invalid("file providers serve embeddings only".into()));
        }
        Ok(())
    }

    /// Search settings with the pipeline seed applied.
    pub fn effective_search(&self) -> SearchConfig {
        SearchConfig {
            seed: self.seed,
            ..self.search.clone()
        }
    }
}

/// The three providers a run needs; embeddings are memoized.
#[derive(Clone)]
pub struct Providers {
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub inferencer: Arc<dyn InferenceProvider>,
    pub entailer: Arc<dyn EntailmentProvider>,
}

impl Providers {
    pub fn stub(seed: u64) -> Self {
        Self {
            embedder: Arc::new(CachedEmbedder::new(Arc::new(StubEmbedder::default()))),
            inferencer: Arc::new(StubInferencer::new(seed)),
            entailer: Arc::new(StubEntailer),
        }
    }

    pub fn from_config(config: &PipelineConfig) -> Result<Self, ProviderError> {
        let p = &config.providers;
        let raw_embedder: Arc<dyn EmbeddingProvider> = match &p.embedding {
            ProviderSelector::Stub { dim } => Arc::new(StubEmbedder::new(*dim)),
            ProviderSelector::File { path } => FileVectorStore::load(path)?.into_shared(),
            ProviderSelector::Remote(rc) => Arc::new(RemoteClient::new(rc.clone())),
        };
        let inferencer: Arc<dyn InferenceProvider> = match &p.inference {
            ProviderSelector::Remote(rc) => Arc::new(RemoteClient::new(rc.clone())),
            ProviderSelector::Stub { .. } => Arc::new(StubInferencer::new(config.seed)),
            ProviderSelector::File { .. } => {
                return Err(ProviderError::InvalidInput("file providers serve embeddings only".into()))
            }
        };
        let entailer: Arc<dyn EntailmentProvider> = match &p.entailment {
            ProviderSelector::Remote(rc) => Arc::new(RemoteClient::new(rc.clone())),
            ProviderSelector::Stub { .. } => Arc::new(StubEntailer),
            ProviderSelector::File { .. } => {
                return Err(ProviderError::InvalidInput("file providers serve embeddings only".into()))
            }
        };
        Ok(Self {
            embedder: Arc::new(CachedEmbedder::new(raw_embedder)),
            inferencer,
            entailer,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationInput {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl ConversationInput {
    /// The last `window` turns as `speaker: text` lines.
    pub fn context(&self, window: usize) -> String {
        let start = self.turns.len().saturating_sub(window);
        self.turns[start..]
            .iter()
            .map(|t| format!("{}: {}", t.speaker, t.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Reads conversation JSONL, skipping blank lines. Errors carry the 1-based line number.
pub fn read_conversations<R: BufRead>(reader: R) -> Result<Vec<ConversationInput>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let conv: ConversationInput = serde_json::from_str(&line).map_err(|e| (i + 1, e.to_string()))?;
        if conv.turns.is_empty() {
            return Err((i + 1, format!("conversation {:?} has no turns", conv.id)));
        }
        out.push(conv);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Input,
    Reason,
    Bridge,
    Retrieve,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Input => "input",
            Stage::Reason => "reason",
            Stage::Bridge => "bridge",
            Stage::Retrieve => "retrieve",
        })
    }
}

#[derive(Debug, Error)]
#[error("conversation {conversation_id}: {stage} stage failed: {message}")]
pub struct PipelineError {
    pub conversation_id: String,
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ConversationOutput {
    pub conversation_id: String,
    pub context: String,
    pub subregion: Option<SubRegion>,
    /// One per inference, highest confidence first.
    pub results: Vec<RetrievalResult>,
    pub warnings: Vec<String>,
}

pub fn run_pipeline(
    conversation: &ConversationInput,
    index: &KnowledgeIndex,
    providers: &Providers,
    config: &PipelineConfig,
) -> Result<ConversationOutput, PipelineError> {
    let fail = |stage: Stage, message: String| PipelineError {
        conversation_id: conversation.id.clone(),
        stage,
        message,
    };
    if conversation.turns.is_empty() {
        return Err(fail(Stage::Input, "conversation has no turns".into()));
    }
    let context = conversation.context(config.context_window);
    let embedder = providers.embedder.as_ref();
    let mut output = ConversationOutput {
        conversation_id: conversation.id.clone(),
        context: context.clone(),
        subregion: None,
        results: Vec::new(),
        warnings: Vec::new(),
    };

    let reasoner = Reasoner::new(providers.inferencer.as_ref(), embedder, config.reasoner.clone());
    let inferences = reasoner
        .reason(&context)
        .map_err(|e: ReasonerError| fail(Stage::Reason, e.to_string()))?;
    if inferences.is_empty() {
        let warning = format!("conversation {}: reasoner produced no inferences", conversation.id);
        log::warn!("{warning}");
        output.warnings.push(warning);
        return Ok(output);
    }

    let search = config.effective_search();
    let subregion = BridgeQuery::resolve(&context, index, config.bridging.lambda)
        .and_then(|q| build_subregion(&q, index, embedder, &search))
        .map_err(|e: SearchError| fail(Stage::Bridge, e.to_string()))?;

    let mut history = Vec::new();
    for inference in inferences {
        let mut query = RetrievalQuery {
            context: context.clone(),
            inference,
            history: std::mem::take(&mut history),
            config: config.retrieval.clone(),
        };
        let result = retrieve_for_inference(&mut query, &subregion, index, embedder, &search)
            .map_err(|e: RetrievalError| fail(Stage::Retrieve, e.to_string()))?;
        history = query.history;
        output.results.push(result);
    }
    output.subregion = Some(subregion);
    Ok(output)
}

/// Runs every conversation on the worker pool; results keep input order.
pub fn run_batch(
    conversations: &[ConversationInput],
    index: &KnowledgeIndex,
    providers: &Providers,
    config: &PipelineConfig,
) -> Vec<Result<ConversationOutput, PipelineError>> {
    conversations
        .par_iter()
        .map(|c| run_pipeline(c, index, providers, config))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub relation: String,
    pub text: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub id: String,
    pub concept: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub steps: Vec<StepRecord>,
    pub total_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeRecord {
    pub id: String,
    pub text: String,
    pub score: f64,
}

/// One line of the results JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub conversation_id: String,
    pub inference: InferenceRecord,
    pub chains: Vec<ChainRecord>,
    pub knowledge: Vec<KnowledgeRecord>,
}

impl ConversationOutput {
    pub fn records(&self, index: &KnowledgeIndex) -> Vec<ResultRecord> {
        let text = |id| index.sentence(id).map(|s| s.text.clone()).unwrap_or_default();
        let surface = |id| index.concept(id).map(|c| c.surface.clone()).unwrap_or_default();
        self.results
            .iter()
            .map(|r| ResultRecord {
                conversation_id: self.conversation_id.clone(),
                inference: InferenceRecord {
                    relation: r.inference.relation().name().to_owned(),
                    text: r.inference.text().to_owned(),
                    confidence: r.inference.confidence,
                },
                chains: r
                    .chains
                    .iter()
                    .map(|c| ChainRecord {
                        steps: c
                            .steps
                            .iter()
                            .map(|s| StepRecord {
                                id: s.sentence_id.to_string(),
                                concept: surface(s.marked_concept),
                                score: s.critic_score,
                            })
                            .collect(),
                        total_value: c.total_value,
                    })
                    .collect(),
                knowledge: r
                    .flat_knowledge
                    .iter()
                    .map(|k| KnowledgeRecord {
                        id: k.sentence_id.to_string(),
                        text: text(k.sentence_id),
                        score: k.score,
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, index: &KnowledgeIndex, mut w: W) -> std::io::Result<()> {
        for record in self.records(index) {
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
