//! Ranker backends: live HTTP, record/replay, and a synthetic biased ranker.

mod http;
mod replay;
mod synthetic;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::digest::FieldHasher;
use crate::prompts::Prompt;

pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use replay::{RecordingBackend, ReplayBackend, ReplayRecord, ReplayStore};
pub use synthetic::{
    draw_slots, synthetic_rank, synthetic_seed, BiasTarget, SyntheticBackend, SyntheticBiasConfig,
};

pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankerRequest {
    pub prompt: Prompt,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl RankerRequest {
    pub fn new(prompt: Prompt, model: impl Into<String>) -> Self {
        Self {
            prompt,
            model: model.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn request_key(&self) -> String {
        cache_key(&self.prompt, &self.model, self.temperature, self.max_tokens)
    }
}

/// SHA-256 over the prompt's render hash and the generation parameters.
pub fn cache_key(prompt: &Prompt, model: &str, temperature: f64, max_tokens: u32) -> String {
    let mut h = FieldHasher::new("ranker-request/v1");
    h.str(&prompt.render_hash)
        .str(model)
        .f64(temperature)
        .u64(u64::from(max_tokens));
    h.hex()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendTag {
    Http,
    Replay,
    Synthetic,
}

impl fmt::Display for BackendTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendTag::Http => "http",
            BackendTag::Replay => "replay",
            BackendTag::Synthetic => "synthetic",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawCompletion {
    pub request_key: String,
    pub text: String,
    pub latency: Duration,
    pub backend_tag: BackendTag,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("replay store has no completion for request {key}")]
    CacheMiss { key: String },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("request {key} failed after {attempts} attempt(s): {message}")]
    Exhausted {
        key: String,
        attempts: u32,
        message: String,
    },
    #[error("request {key} rejected with HTTP {status}: {body}")]
    Rejected {
        key: String,
        status: u16,
        body: String,
    },
    #[error("request {key}: unusable response: {message}")]
    Malformed { key: String, message: String },
    #[error("request {key}: {message}")]
    Synthetic { key: String, message: String },
    #[error("replay store i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub trait Backend: Send + Sync {
    fn tag(&self) -> BackendTag;
    fn execute(&self, request: &RankerRequest) -> Result<RawCompletion, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn tag(&self) -> BackendTag {
        (**self).tag()
    }

    fn execute(&self, request: &RankerRequest) -> Result<RawCompletion, BackendError> {
        (**self).execute(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn tag(&self) -> BackendTag {
        (**self).tag()
    }

    fn execute(&self, request: &RankerRequest) -> Result<RawCompletion, BackendError> {
        (**self).execute(request)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn tag(&self) -> BackendTag {
        (**self).tag()
    }

    fn execute(&self, request: &RankerRequest) -> Result<RawCompletion, BackendError> {
        (**self).execute(request)
    }
}

/// Executes `requests` with at most `max_in_flight` outstanding calls.
/// Results come back in request order.
pub fn execute_all<B: Backend + ?Sized>(
    backend: &B,
    requests: &[RankerRequest],
    max_in_flight: usize,
) -> Vec<Result<RawCompletion, BackendError>> {
    let workers = max_in_flight.max(1).min(requests.len());
    if workers <= 1 {
        return requests.iter().map(|r| backend.execute(r)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<RawCompletion, BackendError>>>> =
        requests.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(request) = requests.get(i) else {
                    break;
                };
                let result = backend.execute(request);
                *slots[i].lock().expect("result slot poisoned") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .expect("result slot poisoned")
                .expect("every request executed")
        })
        .collect()
}
