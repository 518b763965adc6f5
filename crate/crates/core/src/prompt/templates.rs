//! Prompt templates shipped as text assets, pinned by SHA-256.
//!
//! Slots are written `{{name}}` and filled in a single pass, so slot values
//! that themselves contain braces are never expanded again.

use std::sync::LazyLock;

use regex::{Captures, Regex};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
    pub sha256: &'static str,
}

macro_rules! template {
    ($ident:ident, $file:literal, $hash:literal) => {
        pub const $ident: Template = Template {
            name: $file,
            text: include_str!(concat!("../../templates/", $file, ".txt")),
            sha256: $hash,
        };
    };
}

template!(SYSTEM, "system", "c195236154401fb8279636be26faa8486f00ae4a1646172f40b914ec148d2ea3");
template!(SYSTEM_PLAIN, "system_plain", "ac51cc82afd35ede356f560fb93f0a559ce782b89c2507a8cba357c407041680");
template!(REASONING, "reasoning", "d2ee2d11c04505aac820b818e60a2ff58665b577152d880cb62b48464289192a");
template!(RETHINKING, "rethinking", "07dc5caf50d417eecfafa23868d84d24a1c4cbbb86af8bfaf29db81bc7eb585c");
template!(DESCRIPTION, "description", "06e48d7e729974a99eca7948038ce74b80a438b2c25611c2cf0b675caae19d14");
template!(FORMAT_REMINDER, "format_reminder", "311974c98ced56eb7189b2a6c714c56a8f14b940c234412496ea20aef42f314c");
template!(REASONING_CASE, "reasoning_case", "47a6aa3e0ae96cd8b8b9f067fee2e81418705cf3f71b4435aeb0def669f44b97");
template!(RETHINKING_EXAMPLES, "rethinking_examples", "493424dcd0032b66df12f9b84e391916bead68c7c6981886a753683b29ce184e");

pub const ALL: [Template; 8] = [
    SYSTEM,
    SYSTEM_PLAIN,
    REASONING,
    RETHINKING,
    DESCRIPTION,
    FORMAT_REMINDER,
    REASONING_CASE,
    RETHINKING_EXAMPLES,
];

static SLOT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{\{([a-z_]+)\}\}").expect("slot regex"));

impl Template {
    /// Hash of the shipped text.
    pub fn actual_sha256(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }

    /// Names of the slots, in order of appearance.
    pub fn slots(&self) -> Vec<&'static str> {
        SLOT.captures_iter(self.text)
            .map(|c| c.get(1).expect("group").as_str())
            .collect()
    }

    /// Fills every slot. Panics on a slot without a value: the templates are
    /// fixed at compile time, so that is a programming error.
    pub fn fill(&self, values: &[(&str, &str)]) -> String {
        SLOT.replace_all(self.text, |c: &Captures| {
            let slot = &c[1];
            values
                .iter()
                .find(|(k, _)| *k == slot)
                .map(|(_, v)| v.to_string())
                .unwrap_or_else(|| panic!("template {} has no value for slot {slot}", self.name))
        })
        .into_owned()
    }
}

/// Combined digest of every template, for run fingerprints.
pub fn templates_digest() -> String {
    let mut h = Sha256::new();
    for t in ALL {
        h.update(t.name.as_bytes());
        h.update([0]);
        h.update(t.text.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}
