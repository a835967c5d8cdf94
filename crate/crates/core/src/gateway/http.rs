//! Chat-completion adapter for providers speaking the common JSON protocol
//! (`POST {base_url}/chat/completions` with a messages array).

use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatRequest, Provider, ProviderFailure, Role};

pub struct OpenAiCompatProvider {
    id: String,
    base_url: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl OpenAiCompatProvider {
    pub fn new(id: impl Into<String>, base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("default client config is valid");
        OpenAiCompatProvider {
            id: id.into(),
            base_url: base_url.into(),
            api_key: api_key.into(),
            client,
        }
    }

    /// Reads the API key from the environment variable named in config.
    /// The key never appears in any persisted artifact.
    pub fn from_env(
        id: impl Into<String>,
        base_url: impl Into<String>,
        api_key_env: &str,
    ) -> Result<Self, String> {
        let key = std::env::var(api_key_env)
            .map_err(|_| format!("environment variable {api_key_env} not set"))?;
        Ok(OpenAiCompatProvider::new(id, base_url, key))
    }

    fn role_name(role: Role) -> &'static str {
        match role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }

    pub(crate) fn request_body(request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": Self::role_name(m.role), "content": m.text}))
            .collect();
        let mut body = json!({
            "model": request.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    pub(crate) fn parse_payload(payload: &Value) -> Result<String, ProviderFailure> {
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                ProviderFailure::Protocol(format!(
                    "missing choices[0].message.content in: {payload}"
                ))
            })
    }
}

impl Provider for OpenAiCompatProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderFailure> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&Self::request_body(request))
            .send()
            .map_err(|e| ProviderFailure::Transport(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(ProviderFailure::Transport(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(ProviderFailure::Protocol(format!("HTTP {status}: {body}")));
        }
        let payload: Value = response
            .json()
            .map_err(|e| ProviderFailure::Protocol(e.to_string()))?;
        Self::parse_payload(&payload)
    }
}
