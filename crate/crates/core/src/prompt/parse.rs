use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// A reply that does not follow the requested format.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct ParseError {
    pub message: String,
    pub raw: String,
}

impl ParseError {
    fn new(message: impl Into<String>, raw: &str) -> Self {
        Self {
            message: message.into(),
            raw: raw.to_string(),
        }
    }
}

pub const LABELS: [&str; 4] = [
    "NAME SIMILARITY",
    "PROBABILITY OF DESCRIPTION POINTING SAME ENTITY",
    "STRUCTURE SIMILARITY",
    "TIME SIMILARITY",
];

/// Relative weights of the four score components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreWeights {
    pub name: f64,
    pub description: f64,
    pub structure: f64,
    pub time: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            name: 1.0,
            description: 1.0,
            structure: 1.0,
            time: 1.0,
        }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.name, self.description, self.structure, self.time];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || all.iter().sum::<f64>() <= 0.0 {
            return Err("score weights must be finite, non-negative and not all zero".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SimilarityScores {
    pub name: u8,
    pub description: u8,
    pub structure: u8,
    pub time: u8,
}

impl SimilarityScores {
    /// Lowest score on every component; given when a reply stays unparseable.
    pub const FLOOR: SimilarityScores = SimilarityScores {
        name: 1,
        description: 1,
        structure: 1,
        time: 1,
    };

    pub fn new(name: u8, description: u8, structure: u8, time: u8) -> Option<Self> {
        [name, description, structure, time]
            .iter()
            .all(|s| (1..=5).contains(s))
            .then_some(Self {
                name,
                description,
                structure,
                time,
            })
    }

    pub fn components(&self) -> [u8; 4] {
        [self.name, self.description, self.structure, self.time]
    }

    /// Weighted mean of the four components.
    pub fn aggregate(&self, w: &ScoreWeights) -> f64 {
        let ws = [w.name, w.description, w.structure, w.time];
        let num: f64 = ws.iter().zip(self.components()).map(|(w, s)| w * f64::from(s)).sum();
        num / ws.iter().sum::<f64>()
    }

    /// The reply the output format asks for.
    pub fn canonical_line(&self) -> String {
        let parts: Vec<String> = LABELS
            .iter()
            .zip(self.components())
            .map(|(label, s)| format!("[{label}] = {s} out of 5"))
            .collect();
        format!("{}.", parts.join(", "))
    }
}

impl fmt::Display for SimilarityScores {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.name, self.description, self.structure, self.time)
    }
}

static SCORE_PATTERNS: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    LABELS
        .iter()
        .map(|label| {
            let words = label.split(' ').collect::<Vec<_>>().join(r"\s+");
            Regex::new(&format!(r"(?i)\[\s*{words}\s*\]\s*=\s*(\d+)\s*out\s+of\s+5")).expect("score regex")
        })
        .collect()
});

/// Reads the four scores from a reply. For each label the last
/// `[LABEL] = N out of 5` wins; labels are matched case-insensitively and
/// with any whitespace between words.
pub fn parse_scores(reply: &str) -> Result<SimilarityScores, ParseError> {
    let mut values = [0u8; 4];
    for (i, pattern) in SCORE_PATTERNS.iter().enumerate() {
        let digits = pattern
            .captures_iter(reply)
            .last()
            .map(|c| c.get(1).expect("group").as_str())
            .ok_or_else(|| ParseError::new(format!("no score for [{}]", LABELS[i]), reply))?;
        values[i] = digits
            .parse::<u8>()
            .ok()
            .filter(|v| (1..=5).contains(v))
            .ok_or_else(|| ParseError::new(format!("[{}] = {digits} is outside 1..=5", LABELS[i]), reply))?;
    }
    Ok(SimilarityScores::new(values[0], values[1], values[2], values[3]).expect("checked range"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RethinkVerdict {
    pub satisfied: bool,
    pub raw: String,
}

static STRICT_VERDICT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[(YES|NO)\]").expect("verdict regex"));
static LENIENT_VERDICT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i:\[\s*(yes|no)\s*\])|\b(YES|NO)\b").expect("verdict regex"));

/// `[YES]` or `[NO]`; the last token wins. Lenient mode also accepts any
/// letter case inside brackets and bare upper-case `YES` / `NO`.
pub fn parse_verdict(reply: &str, lenient: bool) -> Result<RethinkVerdict, ParseError> {
    let pattern = if lenient { &*LENIENT_VERDICT } else { &*STRICT_VERDICT };
    let token = pattern
        .captures_iter(reply)
        .last()
        .and_then(|c| c.get(1).or_else(|| c.get(2)))
        .ok_or_else(|| ParseError::new("no [YES] or [NO] in reply", reply))?;
    Ok(RethinkVerdict {
        satisfied: token.as_str().eq_ignore_ascii_case("yes"),
        raw: reply.to_string(),
    })
}
