use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, BackendTag, RankerRequest, RawCompletion};

pub const API_KEY_ENV: &str = "FAIRAUDIT_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Full chat-completions URL, e.g. `https://host/v1/chat/completions`.
    pub endpoint: String,
    pub api_key_env: String,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub backoff_factor: f64,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: API_KEY_ENV.into(),
            max_attempts: 3,
            initial_backoff_ms: 500,
            backoff_factor: 2.0,
            timeout_secs: 120,
        }
    }
}

impl HttpConfig {
    /// Sleep before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64
            * self.backoff_factor.powi(retry.saturating_sub(1) as i32);
        Duration::from_millis(ms.min(3_600_000.0) as u64)
    }
}

/// OpenAI-compatible chat-completions client.
pub struct HttpBackend {
    cfg: HttpConfig,
    api_key: String,
    agent: ureq::Agent,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(BackendError),
}

fn redact(text: &str, secret: &str) -> String {
    if secret.is_empty() {
        text.to_string()
    } else {
        text.replace(secret, "<redacted>")
    }
}

impl HttpBackend {
    /// Reads the credential from the configured environment variable.
    pub fn from_env(cfg: HttpConfig) -> Result<Self, BackendError> {
        let key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                BackendError::Config(format!(
                    "environment variable {} is not set",
                    cfg.api_key_env
                ))
            })?;
        Self::with_api_key(cfg, key)
    }

    pub fn with_api_key(cfg: HttpConfig, api_key: String) -> Result<Self, BackendError> {
        if cfg.endpoint.trim().is_empty() {
            return Err(BackendError::Config("http endpoint is empty".into()));
        }
        if cfg.max_attempts == 0 {
            return Err(BackendError::Config(
                "max_attempts must be at least 1".into(),
            ));
        }
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            cfg,
            api_key,
            agent,
        })
    }

    fn body(request: &RankerRequest) -> serde_json::Value {
        json!({
            "model": request.model,
            "messages": [
                {"role": "system", "content": request.prompt.system_text},
                {"role": "user", "content": request.prompt.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    fn attempt(&self, key: &str, body: &serde_json::Value) -> Attempt {
        log::debug!(
            "POST {} authorization=Bearer <redacted> body={}",
            self.cfg.endpoint,
            redact(&body.to_string(), &self.api_key)
        );
        let response = self
            .agent
            .post(&self.cfg.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let mut response = match response {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(redact(&e.to_string(), &self.api_key)),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        let text = redact(&text, &self.api_key);
        log::debug!("response {status} for {key}: {text}");
        if status == 429 || status >= 500 {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if !(200..300).contains(&status) {
            return Attempt::Fatal(BackendError::Rejected {
                key: key.to_string(),
                status,
                body: text,
            });
        }
        let parsed: serde_json::Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => {
                return Attempt::Fatal(BackendError::Malformed {
                    key: key.to_string(),
                    message: e.to_string(),
                })
            }
        };
        match parsed
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
        {
            Some(content) if !content.trim().is_empty() => Attempt::Done(content.to_string()),
            _ => Attempt::Fatal(BackendError::Malformed {
                key: key.to_string(),
                message: "no choices[0].message.content".into(),
            }),
        }
    }
}

impl Backend for HttpBackend {
    fn tag(&self) -> BackendTag {
        BackendTag::Http
    }

    fn execute(&self, request: &RankerRequest) -> Result<RawCompletion, BackendError> {
        let key = request.request_key();
        let body = Self::body(request);
        let start = Instant::now();
        let mut last = String::new();
        for attempt in 1..=self.cfg.max_attempts {
            if attempt > 1 {
                std::thread::sleep(self.cfg.backoff(attempt - 1));
            }
            match self.attempt(&key, &body) {
                Attempt::Done(text) => {
                    return Ok(RawCompletion {
                        request_key: key,
                        text,
                        latency: start.elapsed(),
                        backend_tag: BackendTag::Http,
                    })
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => {
                    log::warn!(
                        "request {key} attempt {attempt}/{} failed: {msg}",
                        self.cfg.max_attempts
                    );
                    last = msg;
                }
            }
        }
        Err(BackendError::Exhausted {
            key,
            attempts: self.cfg.max_attempts,
            message: last,
        })
    }
}
