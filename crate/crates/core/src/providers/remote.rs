//! HTTP client for an external model server.
//!
//! ```text
//! POST /v1/embed   {"texts":[s,...]}                → {"dim":d,"vectors":[[f,...],...]}
//! POST /v1/infer   {"context":s,"relation":r,"n":k} → {"candidates":[{"text":s,"token_probs":[f,...]},...]}
//! POST /v1/entail  {"premise":s,"hypothesis":s}     → {"score":f}
//! ```
//!
//! Non-200 responses carry `{"error":s}`.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    require_non_empty, EmbeddingProvider, EntailmentProvider, InferenceCandidate,
    InferenceProvider, Provenance, ProviderError, ProviderVector, Relation,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout_secs: f64,
    pub retries: u32,
    /// First backoff delay; doubles on each retry.
    pub backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8765".into(),
            timeout_secs: 30.0,
            retries: 2,
            backoff_ms: 200,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct InferRequest<'a> {
    context: &'a str,
    relation: &'a str,
    n: usize,
}

#[derive(Deserialize)]
struct InferResponse {
    candidates: Vec<WireCandidate>,
}

#[derive(Deserialize)]
struct WireCandidate {
    text: String,
    token_probs: Vec<f64>,
}

#[derive(Serialize)]
struct EntailRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct EntailResponse {
    score: f64,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

pub struct RemoteClient {
    config: RemoteConfig,
    agent: ureq::Agent,
    id: String,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let id = format!("remote:{}", config.base_url.trim_end_matches('/'));
        Self { config, agent, id }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Serialized request body for `/v1/embed`. Exposed for protocol tests.
    pub fn embed_body(texts: &[&str]) -> Vec<u8> {
        serde_json::to_vec(&EmbedRequest { texts }).expect("embed request serializes")
    }

    pub fn infer_body(context: &str, relation: Relation, n: usize) -> Vec<u8> {
        serde_json::to_vec(&InferRequest {
            context,
            relation: relation.name(),
            n,
        })
        .expect("infer request serializes")
    }

    pub fn entail_body(premise: &str, hypothesis: &str) -> Vec<u8> {
        serde_json::to_vec(&EntailRequest {
            premise,
            hypothesis,
        })
        .expect("entail request serializes")
    }

    fn post<T: DeserializeOwned>(&self, route: &str, body: &[u8]) -> Result<T, ProviderError> {
        let url = format!("{}{}", self.config.base_url.trim_end_matches('/'), route);
        let attempts = self.config.retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1));
                thread::sleep(Duration::from_millis(delay));
            }
            let response = self
                .agent
                .post(&url)
                .header("Content-Type", "application/json")
                .send(body);
            let mut response = match response {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("{route}: attempt {} failed: {e}", attempt + 1);
                    last_error = e.to_string();
                    continue;
                }
            };
            let status = response.status().as_u16();
            let text = match response.body_mut().read_to_string() {
                Ok(t) => t,
                Err(e) => {
                    last_error = e.to_string();
                    continue;
                }
            };
            if status == 200 {
                return serde_json::from_str(&text)
                    .map_err(|e| ProviderError::Protocol(format!("{route}: {e}")));
            }
            let message = serde_json::from_str::<ErrorBody>(&text)
                .map(|b| b.error)
                .unwrap_or(text);
            if status >= 500 {
                log::warn!("{route}: attempt {} got {status}: {message}", attempt + 1);
                last_error = format!("status {status}: {message}");
                continue;
            }
            return Err(ProviderError::Remote { status, message });
        }
        Err(ProviderError::Transport {
            attempts,
            message: last_error,
        })
    }
}

impl EmbeddingProvider for RemoteClient {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<ProviderVector>, ProviderError> {
        require_non_empty(texts)?;
        let resp: EmbedResponse = self.post("/v1/embed", &Self::embed_body(texts))?;
        if resp.vectors.len() != texts.len() {
            return Err(ProviderError::Protocol(format!(
                "/v1/embed: {} texts but {} vectors",
                texts.len(),
                resp.vectors.len()
            )));
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                if v.len() != resp.dim {
                    return Err(ProviderError::Protocol(format!(
                        "/v1/embed: vector of length {} with dim {}",
                        v.len(),
                        resp.dim
                    )));
                }
                ProviderVector::normalized(v, Provenance::Remote)
            })
            .collect()
    }
}

impl InferenceProvider for RemoteClient {
    fn infer(
        &self,
        context: &str,
        relation: Relation,
        n: usize,
    ) -> Result<Vec<InferenceCandidate>, ProviderError> {
        if n == 0 {
            return Err(ProviderError::InvalidInput("n must be at least 1".into()));
        }
        let resp: InferResponse = self.post("/v1/infer", &Self::infer_body(context, relation, n))?;
        resp.candidates
            .into_iter()
            .take(n)
            .map(|c| {
                if c.token_probs.is_empty()
                    || c.token_probs.iter().any(|&p| !(p > 0.0 && p <= 1.0))
                {
                    return Err(ProviderError::Protocol(format!(
                        "/v1/infer: token_probs for {:?} must be non-empty and in (0, 1]",
                        c.text
                    )));
                }
                Ok(InferenceCandidate {
                    relation,
                    text: c.text,
                    token_probs: c.token_probs,
                })
            })
            .collect()
    }
}

impl EntailmentProvider for RemoteClient {
    fn entail(&self, premise: &str, hypothesis: &str) -> Result<f64, ProviderError> {
        require_non_empty(&[premise, hypothesis])?;
        let resp: EntailResponse = self.post("/v1/entail", &Self::entail_body(premise, hypothesis))?;
        if !(0.0..=1.0).contains(&resp.score) {
            return Err(ProviderError::Protocol(format!(
                "/v1/entail: score {} outside [0, 1]",
                resp.score
            )));
        }
        Ok(resp.score)
    }
}
