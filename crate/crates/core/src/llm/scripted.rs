use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use super::{read_transcript, BackendError, ChatBackend, ChatReply, ChatRequest, TranscriptRecord};
use crate::error::Result;

enum Script {
    /// Replies keyed by request fingerprint. Repeated requests consume the
    /// queue in order; the last reply is reused once the queue runs dry.
    Keyed(HashMap<String, VecDeque<ChatReply>>),
    /// Replies handed out in order, whatever the request.
    Sequence(VecDeque<String>),
}

/// Deterministic backend that replays recorded or hand-written replies.
pub struct ScriptedBackend {
    model: String,
    script: Mutex<Script>,
}

impl ScriptedBackend {
    pub fn from_records(model: impl Into<String>, records: impl IntoIterator<Item = TranscriptRecord>) -> Self {
        let mut map: HashMap<String, VecDeque<ChatReply>> = HashMap::new();
        for r in records {
            map.entry(r.request.fingerprint()).or_default().push_back(r.reply);
        }
        Self {
            model: model.into(),
            script: Mutex::new(Script::Keyed(map)),
        }
    }

    /// Replays a transcript file written by [`super::TranscriptWriter`].
    pub fn from_transcript(model: impl Into<String>, path: &Path) -> Result<Self> {
        Ok(Self::from_records(model, read_transcript(path)?))
    }

    pub fn sequence(model: impl Into<String>, replies: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            model: model.into(),
            script: Mutex::new(Script::Sequence(replies.into_iter().map(Into::into).collect())),
        }
    }

    pub fn remaining(&self) -> usize {
        match &*self.script.lock().expect("script lock") {
            Script::Keyed(map) => map.values().map(VecDeque::len).sum(),
            Script::Sequence(q) => q.len(),
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatReply, BackendError> {
        let mut script = self.script.lock().expect("script lock");
        match &mut *script {
            Script::Keyed(map) => {
                let key = request.fingerprint();
                let queue = map.get_mut(&key).ok_or_else(|| BackendError::NoRecording(key.clone()))?;
                let reply = if queue.len() > 1 { queue.pop_front() } else { queue.front().cloned() };
                reply.ok_or(BackendError::NoRecording(key))
            }
            Script::Sequence(q) => q
                .pop_front()
                .map(|content| ChatReply::estimated(request, content, 0))
                .ok_or_else(|| BackendError::NoRecording("scripted sequence exhausted".into())),
        }
    }
}
