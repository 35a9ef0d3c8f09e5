//! Backends for exercising pipelines in tests: scripted responses, injected
//! latency, and bounded failure. All are thread-safe like real backends.

use super::{GenerationRequest, ModelIoError, TextBackend};
use crate::util::seeded_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

/// Pops queued responses in order and records every request's prompt text.
/// An exhausted script is a transport error, so over-consuming tests fail
/// loudly.
pub struct ScriptedBackend {
    id: String,
    script: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(id: &str, responses: &[&str]) -> ScriptedBackend {
        ScriptedBackend {
            id: id.to_string(),
            script: Mutex::new(responses.iter().map(|s| s.to_string()).collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Prompt text of every request handled so far, in order.
    pub fn prompts(&self) -> Vec<String> {
        self.seen.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap().len()
    }
}

impl TextBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ModelIoError> {
        self.seen.lock().unwrap().push(request.prompt_text());
        self.script
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| ModelIoError::Transport {
                backend: self.id.clone(),
                attempts: 1,
                message: "script exhausted".to_string(),
            })
    }
}

/// Delegates to an inner backend after sleeping a seeded pseudo-random
/// duration, for scheduler-interleaving tests.
pub struct JitterBackend {
    inner: Arc<dyn TextBackend>,
    rng: Mutex<ChaCha8Rng>,
    max_delay: Duration,
}

impl JitterBackend {
    pub fn new(inner: Arc<dyn TextBackend>, seed: u64, max_delay: Duration) -> JitterBackend {
        JitterBackend {
            rng: Mutex::new(seeded_rng(seed, inner.id())),
            inner,
            max_delay,
        }
    }
}

impl TextBackend for JitterBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ModelIoError> {
        let delay = {
            let mut rng = self.rng.lock().unwrap();
            rng.random_range(0..=self.max_delay.as_micros() as u64)
        };
        std::thread::sleep(Duration::from_micros(delay));
        self.inner.generate(request)
    }
}

/// Fails the first `failures` calls with a transport error, then delegates.
pub struct FailNTimesBackend {
    inner: Arc<dyn TextBackend>,
    remaining: AtomicU32,
}

impl FailNTimesBackend {
    pub fn new(inner: Arc<dyn TextBackend>, failures: u32) -> FailNTimesBackend {
        FailNTimesBackend {
            inner,
            remaining: AtomicU32::new(failures),
        }
    }
}

impl TextBackend for FailNTimesBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ModelIoError> {
        let before = self
            .remaining
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .unwrap_or(0);
        if before > 0 {
            return Err(ModelIoError::Transport {
                backend: self.id().to_string(),
                attempts: 1,
                message: "injected failure".to_string(),
            });
        }
        self.inner.generate(request)
    }
}
