use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatReply, ChatRequest, Role};
use crate::kg::EntityId;
use crate::prompt::SimilarityScores;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Upper bound for each score component of a non-gold pair.
    pub nongold_max: u8,
    pub seed: u64,
    /// Rethink acceptance: top aggregate at least this high ...
    pub threshold: f64,
    /// ... and at least this far above the runner-up.
    pub min_gap: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            nongold_max: 2,
            seed: 5,
            threshold: 4.0,
            min_gap: 1.0,
        }
    }
}

/// Answers from gold labels. Entity ids are read back out of the rendered
/// card literals, so a renderer that drops or mangles ids makes it fail.
pub struct OracleBackend {
    gold: HashMap<EntityId, EntityId>,
    cfg: OracleConfig,
    model: String,
}

const QUOTED: &str = r"'((?:[^'\\]|\\.)*)'";

fn card_pattern(prefix: &str) -> Regex {
    Regex::new(&format!(r"{prefix}(?:Entity\(|name: ){QUOTED}, (?:id: )?'(\d+)'")).expect("card regex")
}

static MAIN: LazyLock<Regex> = LazyLock::new(|| card_pattern(r"\[Main Entity\] l_e = "));
static CAND: LazyLock<Regex> = LazyLock::new(|| card_pattern(r"\[Candidate Entity\] r_e = "));
static DESCRIBE: LazyLock<Regex> = LazyLock::new(|| card_pattern(r"description of the entity e = "));
static RETHINK_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"\[Main Entity\]: \({QUOTED}, '(\d+)'\) -> \[(.*)\]")).expect("rethink regex")
});
static PAIR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"\({QUOTED}, '(\d+)', (-?[0-9]+(?:\.[0-9]+)?)\)")).expect("pair regex"));

fn id(text: &str) -> Result<EntityId, BackendError> {
    text.parse()
        .map(EntityId)
        .map_err(|_| BackendError::Oracle(format!("bad entity id {text:?}")))
}

fn mix(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl OracleBackend {
    pub fn new(gold: impl IntoIterator<Item = (EntityId, EntityId)>, cfg: OracleConfig) -> Self {
        Self {
            gold: gold.into_iter().collect(),
            cfg,
            model: "oracle".into(),
        }
    }

    /// Model id reported in requests, so recorded transcripts can be
    /// replayed under the configured name.
    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn is_gold(&self, main: EntityId, cand: EntityId) -> bool {
        self.gold.get(&main) == Some(&cand)
    }

    /// Scores the oracle gives to a pair.
    pub fn scores(&self, main: EntityId, cand: EntityId) -> SimilarityScores {
        if self.is_gold(main, cand) {
            return SimilarityScores::new(5, 5, 5, 5).expect("valid scores");
        }
        let top = u64::from(self.cfg.nongold_max.clamp(1, 5));
        let base = mix(self.cfg.seed ^ mix(main.0) ^ mix(cand.0).rotate_left(17));
        let c = |k: u64| (1 + mix(base.wrapping_add(k)) % top) as u8;
        SimilarityScores::new(c(0), c(1), c(2), c(3)).expect("valid scores")
    }

    fn answer(&self, prompt: &str) -> Option<Result<String, BackendError>> {
        if let (Some(m), Some(c)) = (MAIN.captures(prompt), CAND.captures(prompt)) {
            return Some((|| Ok(self.scores(id(&m[2])?, id(&c[2])?).canonical_line()))());
        }
        if let Some(r) = RETHINK_LINE.captures(prompt) {
            return Some(self.verdict(&r[2], &r[3]));
        }
        if let Some(d) = DESCRIBE.captures(prompt) {
            let name = d[1].replace("\\'", "'");
            return Some(Ok(format!("{name} is a knowledge graph entity.")));
        }
        None
    }

    fn verdict(&self, main: &str, pairs: &str) -> Result<String, BackendError> {
        let main = id(main)?;
        let listed = PAIR
            .captures_iter(pairs)
            .map(|p| {
                let score: f64 = p[3].parse().map_err(|_| BackendError::Oracle(format!("bad score {:?}", &p[3])))?;
                Ok((id(&p[2])?, score))
            })
            .collect::<Result<Vec<_>, BackendError>>()?;
        let Some(&(top, best)) = listed.first() else {
            return Err(BackendError::Oracle("rethinking prompt lists no pairs".into()));
        };
        let clear = listed.get(1).is_none_or(|&(_, second)| best - second >= self.cfg.min_gap);
        let yes = self.is_gold(main, top) && best >= self.cfg.threshold && clear;
        Ok(if yes { "[YES]" } else { "[NO]" }.to_string())
    }
}

impl ChatBackend for OracleBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    /// The newest user message the oracle recognises decides the answer, so
    /// a format reminder following a reasoning prompt is answered in kind.
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        request.validate()?;
        let content = request
            .messages
            .iter()
            .rev()
            .filter(|m| m.role == Role::User)
            .find_map(|m| self.answer(&m.content))
            .unwrap_or_else(|| Err(BackendError::Oracle("no entity ids found in the prompt".into())))?;
        Ok(ChatReply::estimated(request, content, 0))
    }
}
