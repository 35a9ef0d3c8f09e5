//! Generation-backend abstraction: sampled decoding parameters, a registry
//! of named backends, and bounded-retry handling for remote calls.
//!
//! Backends implement [`TextBackend`] and are safe for concurrent use; the
//! registry is immutable after construction.

pub mod mock;
pub mod remote;
pub mod testing;

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("unregistered backend {0:?}")]
    UnknownBackend(String),
    #[error("backend id {0:?} registered twice")]
    DuplicateBackend(String),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("backend {backend:?} returned an empty completion")]
    EmptyCompletion { backend: String },
    #[error("backend {backend:?} failed after {attempts} attempts: {message}")]
    Transport {
        backend: String,
        attempts: u32,
        message: String,
    },
    #[error("auth env var {var:?} is not set")]
    MissingAuth { var: String },
    #[error("invalid sampling params: {0}")]
    InvalidParams(String),
}

/// Decoding parameters for one generation call. Both knobs live in
/// [0.2, 1.0]; the seed is forwarded to the backend verbatim.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

impl SamplingParams {
    pub fn new(temperature: f64, top_p: f64, seed: u64) -> Result<SamplingParams, ModelIoError> {
        let in_range = |v: f64| (0.2..=1.0).contains(&v);
        if !in_range(temperature) {
            return Err(ModelIoError::InvalidParams(format!(
                "temperature {temperature} outside [0.2, 1.0]"
            )));
        }
        if !in_range(top_p) {
            return Err(ModelIoError::InvalidParams(format!(
                "top_p {top_p} outside [0.2, 1.0]"
            )));
        }
        Ok(SamplingParams {
            temperature,
            top_p,
            seed,
        })
    }
}

/// Draws temperature, then top_p, then the call seed. The draw order is part
/// of the determinism contract: replaying a seeded generator reproduces the
/// exact params.
pub fn sample_params<R: Rng + ?Sized>(rng: &mut R) -> SamplingParams {
    let temperature = rng.random_range(0.2..=1.0);
    let top_p = rng.random_range(0.2..=1.0);
    let seed = rng.random();
    SamplingParams {
        temperature,
        top_p,
        seed,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: &str) -> Message {
        Message {
            role: Role::System,
            content: content.to_string(),
        }
    }

    pub fn user(content: &str) -> Message {
        Message {
            role: Role::User,
            content: content.to_string(),
        }
    }
}

/// Whether the caller expects free text or a structured record.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    #[default]
    Text,
    Structured,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRequest {
    pub messages: Vec<Message>,
    pub params: SamplingParams,
    pub mode: OutputMode,
}

impl GenerationRequest {
    pub fn text(prompt: &str, params: SamplingParams) -> GenerationRequest {
        GenerationRequest {
            messages: vec![Message::user(prompt)],
            params,
            mode: OutputMode::Text,
        }
    }

    pub fn structured(prompt: &str, params: SamplingParams) -> GenerationRequest {
        GenerationRequest {
            messages: vec![Message::user(prompt)],
            params,
            mode: OutputMode::Structured,
        }
    }

    /// All message contents joined, for digests and substring checks.
    pub fn prompt_text(&self) -> String {
        let mut out = String::new();
        for message in &self.messages {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&message.content);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct GenerationResult {
    pub text: String,
    pub backend_id: String,
    pub params: SamplingParams,
    pub latency: Duration,
}

/// One named generation backend. Implementations must be pure with respect
/// to the request (no prompt mutation) and safe for concurrent calls.
pub trait TextBackend: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, request: &GenerationRequest) -> Result<String, ModelIoError>;
}

/// Bounded retry with exponential backoff. Attempt n sleeps
/// initial_backoff * 2^(n-1) before retrying.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    #[serde(with = "duration_millis")]
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, String>,
    ) -> Result<T, (u32, String)> {
        let attempts = self.attempts.max(1);
        let mut backoff = self.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match op() {
                Ok(value) => return Ok(value),
                Err(message) => last = message,
            }
            if attempt < attempts {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err((attempts, last))
    }
}

mod duration_millis {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        (d.as_millis() as u64).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Immutable map of backend id → backend. Built once at config load.
#[derive(Default)]
pub struct BackendRegistry {
    backends: BTreeMap<String, Arc<dyn TextBackend>>,
}

impl BackendRegistry {
    pub fn new() -> BackendRegistry {
        BackendRegistry::default()
    }

    /// Registry of digest mocks, one per id.
    pub fn with_mocks(ids: &[&str]) -> BackendRegistry {
        let mut registry = BackendRegistry::new();
        for id in ids {
            registry
                .register(Arc::new(mock::MockBackend::new(id)))
                .expect("mock ids are distinct");
        }
        registry
    }

    pub fn register(&mut self, backend: Arc<dyn TextBackend>) -> Result<(), ModelIoError> {
        let id = backend.id().to_string();
        if self.backends.contains_key(&id) {
            return Err(ModelIoError::DuplicateBackend(id));
        }
        self.backends.insert(id, backend);
        Ok(())
    }

    pub fn get(&self, backend_id: &str) -> Result<&Arc<dyn TextBackend>, ModelIoError> {
        self.backends
            .get(backend_id)
            .ok_or_else(|| ModelIoError::UnknownBackend(backend_id.to_string()))
    }

    /// Backend ids in sorted order.
    pub fn ids(&self) -> Vec<&str> {
        self.backends.keys().map(|k| k.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.backends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backends.is_empty()
    }

    /// Runs one generation call, timing it and rejecting empty prompts and
    /// empty completions.
    pub fn generate(
        &self,
        backend_id: &str,
        request: &GenerationRequest,
    ) -> Result<GenerationResult, ModelIoError> {
        if request.messages.iter().all(|m| m.content.trim().is_empty()) {
            return Err(ModelIoError::EmptyPrompt);
        }
        let backend = self.get(backend_id)?;
        let started = Instant::now();
        let text = backend.generate(request)?;
        let latency = started.elapsed();
        if text.trim().is_empty() {
            return Err(ModelIoError::EmptyCompletion {
                backend: backend_id.to_string(),
            });
        }
        Ok(GenerationResult {
            text,
            backend_id: backend_id.to_string(),
            params: request.params,
            latency,
        })
    }
}
