//! Client boundary to the external foundation-model services: text embedding, image
//! captioning and chat completion.
//!
//! Two providers implement [`Gateway`]:
//!
//! * [`StubGateway`] runs in-process with no network access and is fully deterministic.
//! * [`HttpGateway`] speaks JSON over HTTP(S) to three configurable endpoints. The wire
//!   schemas are documented in `docs/gateway-protocol.md`.
//!
//! Which provider is used is selected by a provider manifest, see [`ProviderManifest`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::Engine as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::hashing::{seed_from, short_hash};

pub const ISSUES_MARKER: &str = "Come up with 10 distinct concepts";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Embed,
    Caption,
    Chat,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Endpoint::Embed => "embed",
            Endpoint::Caption => "caption",
            Endpoint::Chat => "chat",
        })
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{endpoint} request failed after {attempts} attempt(s): {message}")]
    Transport {
        endpoint: Endpoint,
        attempts: u32,
        message: String,
    },
    #[error("{endpoint} request rejected with status {status} after {attempts} attempt(s)")]
    Status {
        endpoint: Endpoint,
        status: u16,
        attempts: u32,
    },
    #[error("malformed {endpoint} response: {message}")]
    Response { endpoint: Endpoint, message: String },
    #[error("prompt of {len} characters exceeds the configured budget of {budget}")]
    OverBudget { len: usize, budget: usize },
    #[error("embedding dimension {actual} does not match expected {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("provider returned a zero or non-finite embedding for {0:?}")]
    DegenerateEmbedding(String),
    #[error("empty text passed to the gateway")]
    EmptyText,
    #[error("unreadable asset {path}: {message}")]
    Asset { path: String, message: String },
    #[error("gateway configuration error: {0}")]
    Config(String),
}

/// Identifies the provider behind every generated artifact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
pub struct GatewayIdentity {
    pub provider: String,
    pub embed_model: String,
    pub caption_model: String,
    pub chat_model: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct RequestLogEntry {
    pub endpoint: Endpoint,
    pub target: String,
    pub payload_hash: String,
    pub carried_image_bytes: bool,
    pub ok: bool,
}

/// A provider of embeddings, captions and completions. Implementations are shareable across
/// threads; every call blocks the caller until it completes or fails.
pub trait Gateway: Send + Sync {
    fn identity(&self) -> &GatewayIdentity;

    /// Embeds `text` into the joint image/text space.
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, GatewayError>;

    /// Produces a caption for the image at `asset`.
    fn caption_image(&self, asset: &Path) -> Result<String, GatewayError>;

    /// Sends a text-only prompt to the chat model and returns its raw response.
    fn complete(&self, prompt: &str) -> Result<String, GatewayError>;

    /// Requests issued so far, oldest first.
    fn request_log(&self) -> Vec<RequestLogEntry>;

    fn calls(&self, endpoint: Endpoint) -> usize {
        self.request_log().iter().filter(|e| e.endpoint == endpoint).count()
    }
}

/// Captions every asset in order; the output is aligned with the input.
pub fn caption_batch(gateway: &dyn Gateway, assets: &[&Path]) -> Result<Vec<String>, GatewayError> {
    assets.iter().map(|a| gateway.caption_image(a)).collect()
}

fn read_asset(path: &Path) -> Result<Vec<u8>, GatewayError> {
    std::fs::read(path).map_err(|e| GatewayError::Asset {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn validate_embedding(text: &str, v: &[f64]) -> Result<(), GatewayError> {
    let norm_sq: f64 = v.iter().map(|x| x * x).sum();
    if !norm_sq.is_finite() || norm_sq == 0.0 {
        return Err(GatewayError::DegenerateEmbedding(text.to_string()));
    }
    Ok(())
}

fn check_budget(prompt: &str, budget: Option<usize>) -> Result<(), GatewayError> {
    let len = prompt.chars().count();
    match budget {
        Some(budget) if len > budget => Err(GatewayError::OverBudget { len, budget }),
        _ => Ok(()),
    }
}

const DEFAULT_CONCEPTS: [&str; 10] = [
    "cluttered background",
    "low light",
    "motion blur",
    "small object",
    "reflective surface",
    "unusual viewpoint",
    "partial occlusion",
    "text overlay",
    "monochrome image",
    "crowded scene",
];

/// Deterministic in-process provider.
///
/// * `embed_text` returns a pinned vector when the exact text is pinned, otherwise a unit
///   vector drawn from a ChaCha8 generator seeded with the SHA-256 of the text.
/// * `caption_image` returns `CAPTION(<hash of the asset path>)` after checking the asset is
///   readable.
/// * `complete` returns the configured concept list (one `N. concept` line each) for
///   issue-proposal prompts and `SUMMARY(<prompt hash>)` for anything else.
pub struct StubGateway {
    dim: usize,
    pins: BTreeMap<String, Vec<f64>>,
    concepts: Vec<String>,
    prompt_budget: Option<usize>,
    identity: GatewayIdentity,
    log: Mutex<Vec<RequestLogEntry>>,
}

impl fmt::Debug for StubGateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StubGateway")
            .field("dim", &self.dim)
            .field("pins", &self.pins.len())
            .field("identity", &self.identity)
            .finish()
    }
}

impl StubGateway {
    pub fn new(dim: usize) -> Self {
        let mut stub = Self {
            dim,
            pins: BTreeMap::new(),
            concepts: DEFAULT_CONCEPTS.iter().map(|s| s.to_string()).collect(),
            prompt_budget: None,
            identity: GatewayIdentity {
                provider: "stub".into(),
                embed_model: "stub-embed".into(),
                caption_model: "stub-caption".into(),
                chat_model: "stub-chat".into(),
                config_hash: String::new(),
            },
            log: Mutex::new(Vec::new()),
        };
        stub.rehash();
        stub
    }

    /// Pins `text` to a fixed embedding.
    pub fn with_pin(mut self, text: impl Into<String>, vector: Vec<f64>) -> Self {
        self.pins.insert(text.into(), vector);
        self.rehash();
        self
    }

    pub fn with_concepts<I, S>(mut self, concepts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.concepts = concepts.into_iter().map(Into::into).collect();
        self.rehash();
        self
    }

    pub fn with_prompt_budget(mut self, chars: usize) -> Self {
        self.prompt_budget = Some(chars);
        self.rehash();
        self
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    fn rehash(&mut self) {
        let mut key = format!("dim={};budget={:?};concepts={:?};", self.dim, self.prompt_budget, self.concepts);
        for (text, v) in &self.pins {
            key.push_str(&format!("pin:{text}={v:?};"));
        }
        self.identity.config_hash = short_hash(key);
    }

    fn record(&self, endpoint: Endpoint, target: &str, payload: &[u8], image: bool, ok: bool) {
        self.log.lock().unwrap().push(RequestLogEntry {
            endpoint,
            target: target.to_string(),
            payload_hash: short_hash(payload),
            carried_image_bytes: image,
            ok,
        });
    }

    /// Hash-seeded unit vector used for unpinned text.
    pub fn hashed_vector(text: &str, dim: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(text));
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl Gateway for StubGateway {
    fn identity(&self) -> &GatewayIdentity {
        &self.identity
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        if text.is_empty() {
            return Err(GatewayError::EmptyText);
        }
        let v = match self.pins.get(text) {
            Some(v) => v.clone(),
            None => Self::hashed_vector(text, self.dim),
        };
        let checked = if v.len() != self.dim {
            Err(GatewayError::Dimension {
                expected: self.dim,
                actual: v.len(),
            })
        } else {
            validate_embedding(text, &v)
        };
        self.record(Endpoint::Embed, "stub", text.as_bytes(), false, checked.is_ok());
        checked.map(|_| v)
    }

    fn caption_image(&self, asset: &Path) -> Result<String, GatewayError> {
        let bytes = read_asset(asset);
        self.record(Endpoint::Caption, "stub", asset.to_string_lossy().as_bytes(), bytes.is_ok(), bytes.is_ok());
        bytes?;
        Ok(format!("CAPTION({})", short_hash(asset.to_string_lossy().as_bytes())))
    }

    fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        check_budget(prompt, self.prompt_budget)?;
        self.record(Endpoint::Chat, "stub", prompt.as_bytes(), false, true);
        if prompt.contains(ISSUES_MARKER) {
            Ok(self
                .concepts
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{}. {c}", i + 1))
                .collect::<Vec<_>>()
                .join("\n"))
        } else {
            Ok(format!("SUMMARY({})", short_hash(prompt)))
        }
    }

    fn request_log(&self) -> Vec<RequestLogEntry> {
        self.log.lock().unwrap().clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            backoff_ms: 250,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): `backoff_ms * 2^(attempt-1)`.
    pub fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_ms.saturating_mul(1u64 << (attempt - 1).min(16)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ProviderConfig {
    #[serde(default = "default_provider_name")]
    pub name: String,
    pub embed_endpoint: String,
    pub caption_endpoint: String,
    pub chat_endpoint: String,
    pub embed_model: String,
    pub caption_model: String,
    pub chat_model: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub privacy_mode: bool,
    #[serde(default)]
    pub prompt_budget_chars: Option<usize>,
    /// Environment variable holding a bearer token, if the provider needs one.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_provider_name() -> String {
    "http".into()
}
fn default_timeout() -> u64 {
    30_000
}
fn default_concurrency() -> usize {
    4
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout_ms == 0 {
            return Err(GatewayError::Config("timeout_ms must be positive".into()));
        }
        if self.retry.attempts == 0 {
            return Err(GatewayError::Config("retry.attempts must be at least 1".into()));
        }
        if self.max_concurrency == 0 {
            return Err(GatewayError::Config("max_concurrency must be at least 1".into()));
        }
        if self.privacy_mode && self.caption_endpoint == self.chat_endpoint {
            return Err(GatewayError::Config(
                "privacy_mode forbids routing image captioning through the chat endpoint".into(),
            ));
        }
        Ok(())
    }

    fn hash(&self) -> String {
        short_hash(serde_json::to_vec(self).unwrap_or_default())
    }
}

/// Counting semaphore bounding in-flight requests.
struct Permits {
    available: Mutex<usize>,
    cond: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cond.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.cond.notify_one();
    }
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct CaptionResponse {
    caption: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    text: String,
}

/// Live provider speaking JSON over HTTP with bounded concurrency, per-call timeout and
/// exponential-backoff retries on transport errors, 429 and 5xx.
pub struct HttpGateway {
    config: ProviderConfig,
    identity: GatewayIdentity,
    agent: ureq::Agent,
    api_key: Option<String>,
    permits: Permits,
    log: Mutex<Vec<RequestLogEntry>>,
}

impl HttpGateway {
    pub fn new(config: ProviderConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let identity = GatewayIdentity {
            provider: config.name.clone(),
            embed_model: config.embed_model.clone(),
            caption_model: config.caption_model.clone(),
            chat_model: config.chat_model.clone(),
            config_hash: config.hash(),
        };
        Ok(Self {
            permits: Permits::new(config.max_concurrency),
            config,
            identity,
            agent,
            api_key,
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn post<T: serde::de::DeserializeOwned>(
        &self,
        endpoint: Endpoint,
        url: &str,
        body: &serde_json::Value,
        carries_image: bool,
    ) -> Result<T, GatewayError> {
        let payload = serde_json::to_vec(body).unwrap_or_default();
        let _permit = self.permits.acquire();
        let attempts = self.config.retry.attempts;
        let mut last = None;
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.config.retry.delay(attempt - 1));
            }
            let mut request = self.agent.post(url);
            if let Some(key) = &self.api_key {
                request = request.header("Authorization", &format!("Bearer {key}"));
            }
            let outcome = request.send_json(body);
            let ok = outcome.is_ok();
            self.log.lock().unwrap().push(RequestLogEntry {
                endpoint,
                target: url.to_string(),
                payload_hash: short_hash(&payload),
                carried_image_bytes: carries_image,
                ok,
            });
            match outcome {
                Ok(mut response) => {
                    return response.body_mut().read_json::<T>().map_err(|e| GatewayError::Response {
                        endpoint,
                        message: e.to_string(),
                    });
                }
                Err(ureq::Error::StatusCode(status)) if status != 429 && status < 500 => {
                    return Err(GatewayError::Status {
                        endpoint,
                        status,
                        attempts: attempt,
                    });
                }
                Err(e) => {
                    tracing::warn!(%endpoint, attempt, error = %e, "gateway request failed");
                    last = Some(e);
                }
            }
        }
        Err(match last {
            Some(ureq::Error::StatusCode(status)) => GatewayError::Status {
                endpoint,
                status,
                attempts,
            },
            other => GatewayError::Transport {
                endpoint,
                attempts,
                message: other.map(|e| e.to_string()).unwrap_or_default(),
            },
        })
    }
}

impl Gateway for HttpGateway {
    fn identity(&self) -> &GatewayIdentity {
        &self.identity
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        if text.is_empty() {
            return Err(GatewayError::EmptyText);
        }
        let body = serde_json::json!({ "model": self.config.embed_model, "input": text });
        let response: EmbedResponse = self.post(Endpoint::Embed, &self.config.embed_endpoint, &body, false)?;
        validate_embedding(text, &response.embedding)?;
        Ok(response.embedding)
    }

    fn caption_image(&self, asset: &Path) -> Result<String, GatewayError> {
        let bytes = read_asset(asset)?;
        let body = serde_json::json!({
            "model": self.config.caption_model,
            "asset": asset.to_string_lossy(),
            "image_base64": base64::engine::general_purpose::STANDARD.encode(bytes),
        });
        let response: CaptionResponse = self.post(Endpoint::Caption, &self.config.caption_endpoint, &body, true)?;
        if response.caption.trim().is_empty() {
            return Err(GatewayError::Response {
                endpoint: Endpoint::Caption,
                message: "empty caption".into(),
            });
        }
        Ok(response.caption)
    }

    fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        check_budget(prompt, self.config.prompt_budget_chars)?;
        let body = serde_json::json!({ "model": self.config.chat_model, "prompt": prompt });
        let response: ChatResponse = self.post(Endpoint::Chat, &self.config.chat_endpoint, &body, false)?;
        tracing::debug!(prompt_hash = %short_hash(prompt), "chat completion");
        Ok(response.text)
    }

    fn request_log(&self) -> Vec<RequestLogEntry> {
        self.log.lock().unwrap().clone()
    }
}

/// Provider manifest selecting between the stub and a live HTTP provider.
///
/// ```json
/// { "provider": "stub", "dim": 512, "pins": { "red car": [0.1, 0.2] }, "pin_samples": { "cat": "s17" } }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "provider", rename_all = "lowercase")]
pub enum ProviderManifest {
    Stub {
        #[serde(default)]
        dim: Option<usize>,
        #[serde(default)]
        pins: BTreeMap<String, Vec<f64>>,
        /// Pins a phrase to the stored embedding of a dataset sample.
        #[serde(default)]
        pin_samples: BTreeMap<String, String>,
        #[serde(default)]
        concepts: Option<Vec<String>>,
        #[serde(default)]
        prompt_budget_chars: Option<usize>,
    },
    Http(ProviderConfig),
}

impl ProviderManifest {
    pub fn stub() -> Self {
        ProviderManifest::Stub {
            dim: None,
            pins: BTreeMap::new(),
            pin_samples: BTreeMap::new(),
            concepts: None,
            prompt_budget_chars: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))
    }

    /// Builds the gateway. `dataset` supplies the default dimension and resolves sample pins.
    pub fn build(&self, dataset: Option<&Dataset>) -> Result<Arc<dyn Gateway>, GatewayError> {
        match self {
            ProviderManifest::Stub {
                dim,
                pins,
                pin_samples,
                concepts,
                prompt_budget_chars,
            } => {
                let dim = dim
                    .or(dataset.map(Dataset::dim))
                    .unwrap_or(crate::dataset::DEFAULT_EMBEDDING_DIM);
                let mut stub = StubGateway::new(dim);
                for (text, v) in pins {
                    stub = stub.with_pin(text.clone(), v.clone());
                }
                for (text, id) in pin_samples {
                    let ds = dataset.ok_or_else(|| {
                        GatewayError::Config("pin_samples requires a dataset".into())
                    })?;
                    let v = ds
                        .embedding(id)
                        .map_err(|e| GatewayError::Config(e.to_string()))?
                        .to_vec();
                    stub = stub.with_pin(text.clone(), v);
                }
                if let Some(c) = concepts {
                    stub = stub.with_concepts(c.clone());
                }
                if let Some(b) = prompt_budget_chars {
                    stub = stub.with_prompt_budget(*b);
                }
                Ok(Arc::new(stub))
            }
            ProviderManifest::Http(config) => Ok(Arc::new(HttpGateway::new(config.clone())?)),
        }
    }
}
