use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;
use ureq::Agent;

use super::{BackendError, ChatBackend, ChatReply, ChatRequest};

/// Environment variable holding the bearer token.
pub const API_KEY_VAR: &str = "CHATEA_API_KEY";

/// OpenAI-style chat-completions endpoint.
pub struct HttpBackend {
    agent: Agent,
    base_url: String,
    model: String,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<ServerUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ServerUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

fn transport(e: ureq::Error) -> BackendError {
    BackendError::Transport(e.to_string())
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            agent,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
        }
    }

    /// Reads the token from [`API_KEY_VAR`]; a missing variable means no
    /// Authorization header is sent.
    pub fn from_env(base_url: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Self {
        let key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
        Self::new(base_url, model, key, timeout)
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn auth(&self) -> Option<String> {
        self.api_key.as_ref().map(|k| format!("Bearer {k}"))
    }
}

impl ChatBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        request.validate()?;
        let body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut post = self.agent.post(format!("{}/chat/completions", self.base_url));
        if let Some(auth) = self.auth() {
            post = post.header("Authorization", auth);
        }
        let started = Instant::now();
        let mut response = post.send_json(&body).map_err(transport)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(transport)?;
        let latency_us = started.elapsed().as_micros() as u64;
        if !(200..300).contains(&status) {
            return Err(BackendError::Http { status, body: text });
        }
        let parsed: Completion =
            serde_json::from_str(&text).map_err(|e| BackendError::MalformedReply(format!("{e}: {text}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::MalformedReply(format!("no message content: {text}")))?;
        Ok(match parsed.usage {
            Some(u) => ChatReply {
                content,
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
                latency_us,
                estimated_tokens: false,
            },
            None => ChatReply::estimated(request, content, latency_us),
        })
    }

    /// Lists models; any answer other than an authentication failure counts
    /// as reachable.
    fn probe(&self) -> Result<(), BackendError> {
        let mut get = self.agent.get(format!("{}/models", self.base_url));
        if let Some(auth) = self.auth() {
            get = get.header("Authorization", auth);
        }
        let mut response = get.call().map_err(transport)?;
        let status = response.status().as_u16();
        if status == 401 || status == 403 {
            let body = response.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Http { status, body });
        }
        Ok(())
    }
}
