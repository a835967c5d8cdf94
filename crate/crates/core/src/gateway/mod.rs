//! Provider-agnostic chat-completion access.
//!
//! Every downstream module talks to language models through [`Gateway`],
//! which adds bounded retries, token-bucket rate limiting, and a response
//! cache keyed by a request digest. The cache powers record/replay: record
//! mode calls the provider and writes the cache, replay mode answers from
//! the cache alone and performs no network I/O, so a recorded corpus makes
//! the whole pipeline deterministic and testable offline.

mod http;
mod limiter;
mod mock;

pub use http::OpenAiCompatProvider;
pub use limiter::TokenBucket;
pub use mock::{CaptureLog, MockProvider, MockReply};

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataio::{ArtifactStore, DataIoError};

/// Artifact kind the response cache lives under.
const CACHE_KIND: &str = "llm";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("replay cache miss for digest {digest}")]
    ReplayMiss { digest: String },
    #[error("provider transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed provider payload: {0}")]
    Protocol(String),
    #[error("unscripted mock request:\n{0}")]
    Unscripted(String),
    #[error("gateway configuration: {0}")]
    Config(String),
    #[error("cache error: {0}")]
    Cache(#[from] DataIoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Message {
        Message { role: Role::System, text: text.into() }
    }
    pub fn user(text: impl Into<String>) -> Message {
        Message { role: Role::User, text: text.into() }
    }
    pub fn assistant(text: impl Into<String>) -> Message {
        Message { role: Role::Assistant, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_name: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub seed: Option<i64>,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(
        model_name: impl Into<String>,
        messages: Vec<Message>,
        temperature: f64,
        seed: Option<i64>,
        max_tokens: u32,
    ) -> Result<ChatRequest, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::InvalidRequest("at least one message required".into()));
        }
        if !(0.0..=2.0).contains(&temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {temperature} outside [0,2]"
            )));
        }
        if max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(ChatRequest { model_name: model_name.into(), messages, temperature, seed, max_tokens })
    }

    /// All message text joined, for capture-log inspection in tests.
    pub fn flat_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub provider_id: String,
    pub cached: bool,
}

/// Digest of every request field plus the prompt-template version, so a
/// template edit invalidates stale recordings.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn compute(request: &ChatRequest, template_version: &str) -> CacheKey {
        #[derive(Serialize)]
        struct Keyed<'a> {
            template_version: &'a str,
            request: &'a ChatRequest,
        }
        let bytes = serde_json::to_vec(&Keyed { template_version, request })
            .expect("request serialization is infallible");
        let digest = Sha256::digest(&bytes);
        CacheKey(hex::encode(digest))
    }

    pub fn digest(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
}

/// Outcome of a single provider call attempt.
#[derive(Debug)]
pub enum ProviderFailure {
    /// Network-level trouble; worth retrying.
    Transport(String),
    /// The provider answered but with a payload we cannot use.
    Protocol(String),
    /// Mock-only: no script entry matched; carries the full request dump.
    Unscripted(String),
}

pub trait Provider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderFailure>;
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, initial_backoff: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; tests use this.
    pub fn immediate(max_attempts: u32) -> RetryPolicy {
        RetryPolicy { max_attempts, initial_backoff: Duration::ZERO }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    text: String,
    provider_id: String,
}

pub struct Gateway {
    provider: Option<Arc<dyn Provider>>,
    mode: GatewayMode,
    cache: Option<ArtifactStore>,
    limiter: Option<Mutex<TokenBucket>>,
    retry: RetryPolicy,
    template_version: String,
}

impl Gateway {
    pub fn new(
        provider: Option<Arc<dyn Provider>>,
        mode: GatewayMode,
        cache: Option<ArtifactStore>,
        retry: RetryPolicy,
        requests_per_second: Option<f64>,
        template_version: impl Into<String>,
    ) -> Result<Gateway, GatewayError> {
        match mode {
            GatewayMode::Live | GatewayMode::Record if provider.is_none() => {
                return Err(GatewayError::Config(format!("{mode:?} mode requires a provider")));
            }
            GatewayMode::Record | GatewayMode::Replay if cache.is_none() => {
                return Err(GatewayError::Config(format!("{mode:?} mode requires a cache")));
            }
            _ => {}
        }
        let limiter = requests_per_second
            .filter(|r| r.is_finite() && *r > 0.0)
            .map(|r| Mutex::new(TokenBucket::new(r, r.max(1.0))));
        Ok(Gateway {
            provider,
            mode,
            cache,
            limiter,
            retry,
            template_version: template_version.into(),
        })
    }

    /// Live-mode gateway over a scripted responder, with no backoff and no
    /// rate limit. The caller keeps the mock's [`CaptureLog`] for prompt
    /// inspection.
    pub fn with_mock(mock: MockProvider) -> Gateway {
        Gateway::new(
            Some(Arc::new(mock)),
            GatewayMode::Live,
            None,
            RetryPolicy::immediate(3),
            None,
            "mock",
        )
        .expect("mock gateway config is always valid")
    }

    /// Record-mode gateway over a mock; used to build replay fixtures.
    pub fn record_with_mock(mock: MockProvider, cache: ArtifactStore) -> Gateway {
        Gateway::new(
            Some(Arc::new(mock)),
            GatewayMode::Record,
            Some(cache),
            RetryPolicy::immediate(3),
            None,
            "mock",
        )
        .expect("mock gateway config is always valid")
    }

    /// Replay-only gateway; never touches a provider.
    pub fn replay(cache: ArtifactStore) -> Gateway {
        Gateway::new(None, GatewayMode::Replay, Some(cache), RetryPolicy::immediate(1), None, "mock")
            .expect("replay gateway config is always valid")
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn template_version(&self) -> &str {
        &self.template_version
    }

    /// Overrides the template version baked into cache digests.
    pub fn set_template_version(&mut self, version: impl Into<String>) {
        self.template_version = version.into();
    }

    pub fn cache_key(&self, request: &ChatRequest) -> CacheKey {
        CacheKey::compute(request, &self.template_version)
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.complete_in_mode(request, self.mode)
    }

    pub fn complete_in_mode(
        &self,
        request: &ChatRequest,
        mode: GatewayMode,
    ) -> Result<ChatResponse, GatewayError> {
        match mode {
            GatewayMode::Replay => {
                let key = self.cache_key(request);
                let cache = self
                    .cache
                    .as_ref()
                    .ok_or_else(|| GatewayError::Config("replay mode requires a cache".into()))?;
                match cache.load_json::<CacheEntry>(CACHE_KIND, key.digest()) {
                    Ok(entry) => Ok(ChatResponse {
                        text: entry.text,
                        provider_id: entry.provider_id,
                        cached: true,
                    }),
                    Err(DataIoError::NotFound { .. }) => {
                        Err(GatewayError::ReplayMiss { digest: key.digest().to_string() })
                    }
                    Err(e) => Err(e.into()),
                }
            }
            GatewayMode::Record => {
                let response = self.call_provider(request)?;
                let key = self.cache_key(request);
                let cache = self
                    .cache
                    .as_ref()
                    .ok_or_else(|| GatewayError::Config("record mode requires a cache".into()))?;
                cache.persist_json(
                    CACHE_KIND,
                    key.digest(),
                    &CacheEntry {
                        text: response.text.clone(),
                        provider_id: response.provider_id.clone(),
                    },
                )?;
                Ok(response)
            }
            GatewayMode::Live => self.call_provider(request),
        }
    }

    fn call_provider(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let provider = self
            .provider
            .as_ref()
            .ok_or_else(|| GatewayError::Config("no provider configured".into()))?;
        let mut last_transport = String::new();
        for attempt in 1..=self.retry.max_attempts {
            self.throttle();
            match provider.complete(request) {
                Ok(text) => {
                    return Ok(ChatResponse {
                        text,
                        provider_id: provider.id().to_string(),
                        cached: false,
                    })
                }
                Err(ProviderFailure::Protocol(msg)) => return Err(GatewayError::Protocol(msg)),
                Err(ProviderFailure::Unscripted(dump)) => {
                    return Err(GatewayError::Unscripted(dump))
                }
                Err(ProviderFailure::Transport(msg)) => {
                    last_transport = msg;
                    if attempt < self.retry.max_attempts {
                        let backoff = self.retry.initial_backoff * 2u32.pow(attempt - 1);
                        if !backoff.is_zero() {
                            std::thread::sleep(backoff);
                        }
                    }
                }
            }
        }
        Err(GatewayError::Transport {
            attempts: self.retry.max_attempts,
            message: last_transport,
        })
    }

    fn throttle(&self) {
        let Some(limiter) = &self.limiter else { return };
        loop {
            let wait = {
                let mut bucket = limiter.lock().expect("limiter lock poisoned");
                bucket.try_acquire_at(Instant::now())
            };
            match wait {
                Ok(()) => return,
                Err(d) => std::thread::sleep(d),
            }
        }
    }
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("mode", &self.mode)
            .field("template_version", &self.template_version)
            .field("has_cache", &self.cache.is_some())
            .finish()
    }
}

#[cfg(test)]
mod tests;
