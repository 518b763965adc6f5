use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    BackendError, ChatBackend, ChatMessage, ChatReply, ChatRequest, UsageLedger, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE,
};
use crate::error::{Error, Result};
use crate::kg::EntityId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    pub fn no_wait(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    /// Delay before retry number `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct RateLimiter {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a RateLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock().expect("limiter lock");
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

impl RateLimiter {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        Permit { limiter: self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub request: ChatRequest,
    pub reply: ChatReply,
}

/// Appends one JSON object per completed call.
#[derive(Debug)]
pub struct TranscriptWriter {
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl TranscriptWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &TranscriptRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        let mut out = self.out.lock().expect("transcript lock");
        writeln!(out, "{line}")
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        records.push(record);
    }
    Ok(records)
}

/// A backend wrapped with retries, admission control, usage accounting and
/// optional transcript recording. Safe to share between worker threads.
pub struct ChatClient {
    backend: Arc<dyn ChatBackend>,
    retry: RetryPolicy,
    limiter: RateLimiter,
    ledger: UsageLedger,
    transcript: Option<TranscriptWriter>,
    temperature: f64,
    max_tokens: u32,
}

impl ChatClient {
    pub fn new(backend: Arc<dyn ChatBackend>, retry: RetryPolicy, max_in_flight: usize) -> Self {
        Self {
            backend,
            retry,
            limiter: RateLimiter::new(max_in_flight),
            ledger: UsageLedger::new(),
            transcript: None,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn with_decoding(mut self, temperature: f64, max_tokens: u32) -> Self {
        self.temperature = temperature;
        self.max_tokens = max_tokens;
        self
    }

    /// A request to this client's model with its decoding settings.
    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.backend.model_id().to_string(),
            messages,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }

    pub fn with_transcript(mut self, writer: TranscriptWriter) -> Self {
        self.transcript = Some(writer);
        self
    }

    pub fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn probe(&self) -> std::result::Result<(), BackendError> {
        self.backend.probe()
    }

    /// Sends `request`, retrying transient failures, and books the usage
    /// against `target`.
    pub fn chat(&self, target: Option<EntityId>, request: &ChatRequest) -> Result<ChatReply> {
        request.validate()?;
        let attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        let reply = loop {
            attempt += 1;
            let outcome = {
                let _permit = self.limiter.acquire();
                self.backend.complete(request)
            };
            match outcome {
                Ok(reply) => break reply,
                Err(e) if e.is_transient() && attempt < attempts => {
                    let delay = self.retry.delay(attempt);
                    log::warn!("chat attempt {attempt} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
                Err(e) if e.is_transient() => {
                    return Err(BackendError::Exhausted {
                        attempts,
                        last: Box::new(e),
                    }
                    .into())
                }
                Err(e) => return Err(e.into()),
            }
        };
        self.ledger.record(target, &reply);
        if let Some(t) = &self.transcript {
            t.append(&TranscriptRecord {
                request: request.clone(),
                reply: reply.clone(),
            })?;
        }
        Ok(reply)
    }
}
