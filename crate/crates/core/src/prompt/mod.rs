//! KG-to-code prompt rendering and reply parsing.
//!
//! Entities are shown to the model as `Entity(...)` literals of a small
//! Python-like class defined in the system prompt. Replies are parsed into
//! four 1-5 scores or a YES/NO verdict.

mod card;
mod describe;
mod parse;
pub mod templates;

use serde::{Deserialize, Serialize};

pub use card::{quote, CardOptions, CardTuple, EntityCard, MASK};
pub use describe::{generate_description, render_description_prompt, DescriptionCache};
pub use parse::{parse_scores, parse_verdict, ParseError, RethinkVerdict, ScoreWeights, SimilarityScores, LABELS};

use crate::error::{Error, Result};
use crate::kg::EntityId;
use crate::llm::{ChatClient, ChatMessage};

/// System prompt with the class definition and the given worked case.
pub fn render_system_prompt(reasoning_case: &str) -> String {
    templates::SYSTEM.fill(&[("reasoning_case", reasoning_case)])
}

/// System prompt without the class definition, for plain-text cards.
pub fn render_system_prompt_plain(reasoning_case: &str) -> String {
    templates::SYSTEM_PLAIN.fill(&[("reasoning_case", reasoning_case)])
}

pub fn default_reasoning_case() -> &'static str {
    templates::REASONING_CASE.text
}

pub fn default_rethinking_examples() -> &'static str {
    templates::RETHINKING_EXAMPLES.text
}

pub fn render_reasoning_prompt(main: &EntityCard, cand: &EntityCard, code: bool) -> String {
    templates::REASONING.fill(&[("main", &main.render(code)), ("candidate", &cand.render(code))])
}

/// A judged candidate as listed in the rethinking prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedPair {
    pub name: String,
    pub id: String,
    pub aggregate: f64,
}

/// `[('name', 'id', 4.50), ...]`
pub fn render_pairs(judged: &[JudgedPair]) -> String {
    let items: Vec<String> = judged
        .iter()
        .map(|p| format!("({}, {}, {:.2})", quote(&p.name), quote(&p.id), p.aggregate))
        .collect();
    format!("[{}]", items.join(", "))
}

/// Fills the rethinking template. `judged` must be non-empty and sorted by
/// aggregate, highest first.
pub fn render_rethinking_prompt(main_name: &str, main_id: &str, judged: &[JudgedPair], examples: &str) -> Result<String> {
    if judged.is_empty() {
        return Err(Error::InvalidArgument("rethinking needs at least one judged candidate".into()));
    }
    if judged.windows(2).any(|w| w[0].aggregate < w[1].aggregate) {
        return Err(Error::InvalidArgument("judged candidates must be sorted by aggregate, highest first".into()));
    }
    let main = format!("({}, {})", quote(main_name), quote(main_id));
    Ok(templates::RETHINKING.fill(&[("main", &main), ("pairs", &render_pairs(judged)), ("examples", examples)]))
}

/// Scores obtained for one pair and how they were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOutcome {
    pub scores: SimilarityScores,
    pub calls: u32,
    /// Both replies were unparseable and the floor scores were used.
    pub fallback: bool,
}

/// Asks for the four scores. An unparseable reply gets one follow-up turn
/// with a format reminder; if that fails as well the pair gets
/// [`SimilarityScores::FLOOR`].
pub fn request_scores(client: &ChatClient, target: Option<EntityId>, system: &str, prompt: &str) -> Result<ScoreOutcome> {
    let mut messages = vec![ChatMessage::system(system), ChatMessage::user(prompt)];
    let first = client.chat(target, &client.request(messages.clone()))?;
    match parse_scores(&first.content) {
        Ok(scores) => {
            return Ok(ScoreOutcome {
                scores,
                calls: 1,
                fallback: false,
            })
        }
        Err(e) => log::info!("unparseable scores ({e}); asking again with a format reminder"),
    }
    messages.push(ChatMessage::assistant(first.content));
    messages.push(ChatMessage::user(templates::FORMAT_REMINDER.text));
    let second = client.chat(target, &client.request(messages))?;
    Ok(match parse_scores(&second.content) {
        Ok(scores) => ScoreOutcome {
            scores,
            calls: 2,
            fallback: false,
        },
        Err(e) => {
            log::warn!("scores still unparseable after a reminder ({e}); using {}", SimilarityScores::FLOOR);
            ScoreOutcome {
                scores: SimilarityScores::FLOOR,
                calls: 2,
                fallback: true,
            }
        }
    })
}
