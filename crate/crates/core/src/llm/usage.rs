use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ChatReply;
use crate::kg::EntityId;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_us: u64,
    /// Calls whose token counts were estimated locally.
    #[serde(default)]
    pub estimated_calls: u64,
}

impl Usage {
    pub fn of(reply: &ChatReply) -> Self {
        Self {
            calls: 1,
            prompt_tokens: reply.prompt_tokens,
            completion_tokens: reply.completion_tokens,
            latency_us: reply.latency_us,
            estimated_calls: u64::from(reply.estimated_tokens),
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn seconds(&self) -> f64 {
        self.latency_us as f64 / 1e6
    }

    pub fn add(&mut self, other: &Usage) {
        self.calls += other.calls;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.latency_us += other.latency_us;
        self.estimated_calls += other.estimated_calls;
    }
}

/// Token and latency totals, per target entity and overall.
///
/// Calls made outside any target are booked under `None`.
#[derive(Debug, Default)]
pub struct UsageLedger {
    per_target: Mutex<BTreeMap<Option<EntityId>, Usage>>,
    calls: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    latency_us: AtomicU64,
    estimated: AtomicU64,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, target: Option<EntityId>, reply: &ChatReply) {
        let usage = Usage::of(reply);
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.prompt_tokens.fetch_add(usage.prompt_tokens, Ordering::Relaxed);
        self.completion_tokens.fetch_add(usage.completion_tokens, Ordering::Relaxed);
        self.latency_us.fetch_add(usage.latency_us, Ordering::Relaxed);
        if reply.estimated_tokens {
            self.estimated.fetch_add(1, Ordering::Relaxed);
        }
        self.per_target
            .lock()
            .expect("ledger lock")
            .entry(target)
            .or_default()
            .add(&usage);
    }

    pub fn total(&self) -> Usage {
        Usage {
            calls: self.calls.load(Ordering::Relaxed),
            prompt_tokens: self.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: self.completion_tokens.load(Ordering::Relaxed),
            latency_us: self.latency_us.load(Ordering::Relaxed),
            estimated_calls: self.estimated.load(Ordering::Relaxed),
        }
    }

    pub fn for_target(&self, target: Option<EntityId>) -> Usage {
        self.per_target
            .lock()
            .expect("ledger lock")
            .get(&target)
            .copied()
            .unwrap_or_default()
    }

    pub fn per_target(&self) -> BTreeMap<Option<EntityId>, Usage> {
        self.per_target.lock().expect("ledger lock").clone()
    }

    /// True if any recorded reply carried estimated token counts.
    pub fn has_estimates(&self) -> bool {
        self.estimated.load(Ordering::Relaxed) > 0
    }
}
