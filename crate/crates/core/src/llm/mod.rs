//! Chat-model access: request/reply types, the backend trait, and the
//! HTTP, scripted-replay and gold-oracle backends.

mod client;
mod http;
mod oracle;
mod scripted;
mod usage;

use serde::{Deserialize, Serialize};

pub use client::{read_transcript, ChatClient, RateLimiter, RetryPolicy, TranscriptRecord, TranscriptWriter};
pub use http::HttpBackend;
pub use oracle::{OracleBackend, OracleConfig};
pub use scripted::ScriptedBackend;
pub use usage::{Usage, UsageLedger};

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// The system prompt must come first.
    pub fn validate(&self) -> Result<(), BackendError> {
        match self.messages.first() {
            Some(m) if m.role == Role::System => Ok(()),
            _ => Err(BackendError::InvalidRequest(
                "the first message must be the system prompt".into(),
            )),
        }
    }

    /// Content of the last user message.
    pub fn last_user(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    /// Stable digest of the request, used to match replayed replies.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatReply {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Model latency in microseconds.
    pub latency_us: u64,
    /// Token counts come from [`estimate_tokens`] rather than the server.
    #[serde(default)]
    pub estimated_tokens: bool,
}

impl ChatReply {
    /// A reply whose token counts are estimated from the texts.
    pub fn estimated(request: &ChatRequest, content: impl Into<String>, latency_us: u64) -> Self {
        let content = content.into();
        Self {
            prompt_tokens: request.messages.iter().map(|m| estimate_tokens(&m.content)).sum(),
            completion_tokens: estimate_tokens(&content),
            content,
            latency_us,
            estimated_tokens: true,
        }
    }
}

/// Token estimate used when a server reports no usage: every
/// whitespace-separated piece counts `ceil(chars / 4)` tokens.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace()
        .map(|piece| piece.chars().count().div_ceil(4) as u64)
        .sum()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no recorded reply for request {0}")]
    NoRecording(String),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("malformed reply: {0}")]
    MalformedReply(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<BackendError> },
}

impl BackendError {
    /// Rate limits, server errors and transport failures are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Http { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            BackendError::Transport(_) => true,
            _ => false,
        }
    }
}

/// A chat model. Implementations may be called from several threads at once.
pub trait ChatBackend: Send + Sync {
    fn model_id(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError>;

    /// Cheap reachability check run before a batch starts.
    fn probe(&self) -> Result<(), BackendError> {
        Ok(())
    }
}
