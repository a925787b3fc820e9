//! OpenAI-compatible chat-completion and embedding endpoints.

use std::time::Duration;

use serde_json::{json, Value};

use super::{PromptRequest, Provider};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ProviderConfig {
    /// Base URL; `/chat/completions` and `/embeddings` are appended.
    pub endpoint: String,
    pub model: String,
    pub embedding_model: String,
    pub embedding_dim: usize,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_parallel: usize,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://dashscope.aliyuncs.com/compatible-mode/v1".into(),
            model: "qwen-long".into(),
            embedding_model: "text-embedding-v3".into(),
            embedding_dim: 1024,
            api_key_env: "LLARD_API_KEY".into(),
            timeout_secs: 60.0,
            max_parallel: 8,
            max_attempts: 3,
            backoff_base_ms: 500,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_parallel == 0 {
            return Err(Error::Config("max_parallel must be at least 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(Error::Config("timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Minimal JSON POST seam, swapped for a fake in tests.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, api_key: Option<&str>, body: &Value, timeout: Duration) -> Result<HttpResponse>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(&self, url: &str, api_key: Option<&str>, body: &Value, timeout: Duration) -> Result<HttpResponse> {
        let mut req = self.client.post(url).timeout(timeout).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                Error::Timeout(timeout.as_secs_f64())
            } else {
                Error::Transport(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

pub struct HttpProvider<T: Transport> {
    config: ProviderConfig,
    api_key: Option<String>,
    transport: T,
    sleep: fn(Duration),
}

impl HttpProvider<ReqwestTransport> {
    pub fn from_env(config: ProviderConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env).ok();
        if api_key.is_none() {
            log::warn!("{} is not set; sending requests without credentials", config.api_key_env);
        }
        HttpProvider::new(config, api_key, ReqwestTransport::new()?)
    }
}

impl<T: Transport> HttpProvider<T> {
    pub fn new(config: ProviderConfig, api_key: Option<String>, transport: T) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            api_key,
            transport,
            sleep: std::thread::sleep,
        })
    }

    /// Replaces the backoff sleep (tests record instead of waiting).
    pub fn with_sleep(mut self, sleep: fn(Duration)) -> Self {
        self.sleep = sleep;
        self
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    /// POST with retries on transport failures, timeouts, 429 and 5xx.
    fn post(&self, url: &str, body: &Value) -> Result<Value> {
        let timeout = Duration::from_secs_f64(self.config.timeout_secs);
        let mut last = Error::Transport("no attempt made".into());
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                let wait = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                (self.sleep)(Duration::from_millis(wait));
            }
            match self.transport.post_json(url, self.api_key.as_deref(), body, timeout) {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    return serde_json::from_str(&resp.body).map_err(|_| Error::ResponseParse {
                        what: "provider JSON",
                        raw: resp.body,
                    });
                }
                Ok(resp) => {
                    let retryable = resp.status == 429 || resp.status >= 500;
                    last = Error::Provider {
                        status: resp.status,
                        body: resp.body,
                    };
                    if !retryable {
                        return Err(last);
                    }
                }
                Err(e @ (Error::Transport(_) | Error::Timeout(_))) => last = e,
                Err(e) => return Err(e),
            }
            log::debug!("attempt {} of {} failed: {last}", attempt + 1, self.config.max_attempts);
        }
        Err(last)
    }
}

impl<T: Transport> Provider for HttpProvider<T> {
    fn model(&self) -> &str {
        &self.config.model
    }

    fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    fn complete(&self, request: &PromptRequest) -> Result<String> {
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        let value = self.post(&self.url("chat/completions"), &body)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .or_else(|| value["choices"][0]["text"].as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::ResponseParse {
                what: "completion text",
                raw: value.to_string(),
            })
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let body = json!({
            "model": self.config.embedding_model,
            "input": [text],
        });
        let value = self.post(&self.url("embeddings"), &body)?;
        let vector = value["data"][0]["embedding"]
            .as_array()
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
            .ok_or_else(|| Error::ResponseParse {
                what: "embedding vector",
                raw: value.to_string(),
            })?;
        Ok(vector)
    }
}
