//! The two-stage alignment loop.
//!
//! For every target entity the candidate scope grows along a schedule
//! (by default 1, 10, 20). Each round scores the newly admitted candidates
//! with the chat model and then decides whether the best one is clearly
//! good enough; if so the loop stops early.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Candidate, CslsIndex};
use crate::kg::{EntityId, KnowledgeGraph, DEFAULT_TUPLE_CAP};
use crate::llm::{ChatClient, ChatMessage, Usage};
use crate::prompt::{
    self, generate_description, parse_verdict, render_reasoning_prompt, render_rethinking_prompt, request_scores,
    CardOptions, DescriptionCache, EntityCard, JudgedPair, ScoreWeights, SimilarityScores,
};

/// Switches that remove one ingredient of the method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    NoName,
    NoStructure,
    NoTemporal,
    NoCode,
    NoDescription,
    NoTwoStage,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::NoName,
        Ablation::NoStructure,
        Ablation::NoTemporal,
        Ablation::NoCode,
        Ablation::NoDescription,
        Ablation::NoTwoStage,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::NoName => "no-name",
            Ablation::NoStructure => "no-structure",
            Ablation::NoTemporal => "no-temporal",
            Ablation::NoCode => "no-code",
            Ablation::NoDescription => "no-description",
            Ablation::NoTwoStage => "no-two-stage",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RethinkMode {
    /// Ask the model with the rethinking prompt.
    Llm,
    /// Apply [`rethink_rule`] to the aggregates.
    Rule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub schedule: Vec<usize>,
    pub rethink: RethinkMode,
    pub threshold: f64,
    pub min_gap: f64,
    pub weights: ScoreWeights,
    pub tuple_cap: usize,
    /// Length of the stored final ranking.
    pub ranking_depth: usize,
    pub workers: usize,
    pub lenient_verdicts: bool,
    pub ablations: BTreeSet<Ablation>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            schedule: vec![1, 10, 20],
            rethink: RethinkMode::Llm,
            threshold: 4.0,
            min_gap: 1.0,
            weights: ScoreWeights::default(),
            tuple_cap: DEFAULT_TUPLE_CAP,
            ranking_depth: 50,
            workers: 1,
            lenient_verdicts: true,
            ablations: BTreeSet::new(),
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() || self.schedule[0] == 0 {
            return Err(Error::Config("schedule must be non-empty with scopes of at least 1".into()));
        }
        if self.schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("schedule {:?} must be strictly increasing", self.schedule)));
        }
        if !self.threshold.is_finite() || !self.min_gap.is_finite() || self.min_gap < 0.0 {
            return Err(Error::Config("threshold and min_gap must be finite, min_gap non-negative".into()));
        }
        self.weights.validate().map_err(Error::Config)?;
        if self.ranking_depth == 0 {
            return Err(Error::Config("ranking_depth must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn ablated(&self, a: Ablation) -> bool {
        self.ablations.contains(&a)
    }

    /// Rounds actually run: one round at the widest scope when the
    /// two-stage loop is ablated.
    pub fn effective_schedule(&self) -> Vec<usize> {
        if self.ablated(Ablation::NoTwoStage) {
            vec![*self.schedule.last().expect("validated schedule")]
        } else {
            self.schedule.clone()
        }
    }

    pub fn card_options(&self) -> CardOptions {
        CardOptions {
            tuple_cap: self.tuple_cap,
            code: !self.ablated(Ablation::NoCode),
            names: !self.ablated(Ablation::NoName),
            structure: !self.ablated(Ablation::NoStructure),
            times: !self.ablated(Ablation::NoTemporal),
            descriptions: !self.ablated(Ablation::NoDescription),
        }
    }
}

/// Ranked targets for a source row, best first.
pub trait CandidateSource: Sync {
    fn ranked(&self, src_row: usize) -> Vec<Candidate>;
}

impl CandidateSource for CslsIndex {
    fn ranked(&self, src_row: usize) -> Vec<Candidate> {
        CslsIndex::ranked(self, src_row)
    }
}

/// Precomputed candidate lists, one per source row.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticCandidates(pub Vec<Vec<Candidate>>);

impl CandidateSource for StaticCandidates {
    fn ranked(&self, src_row: usize) -> Vec<Candidate> {
        self.0.get(src_row).cloned().unwrap_or_default()
    }
}

/// The accept rule: the best aggregate reaches `threshold` and leads the
/// runner-up by at least `min_gap`. `sorted` is highest first.
pub fn rethink_rule(sorted: &[f64], threshold: f64, min_gap: f64) -> bool {
    match sorted {
        [] => false,
        [top] => *top >= threshold,
        [top, second, ..] => *top >= threshold && top - second >= min_gap,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgement {
    pub candidate: EntityId,
    /// 1-based position in the embedding ranking.
    pub csls_rank: usize,
    pub csls_score: f64,
    pub scores: SimilarityScores,
    pub aggregate: f64,
    pub round: usize,
    /// The reply could not be parsed and floor scores were used.
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub target: EntityId,
    pub judged: Vec<Judgement>,
    pub final_ranking: Vec<EntityId>,
    pub chosen: Option<EntityId>,
    pub rounds_used: usize,
    pub usage: Usage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
}

impl AlignmentResult {
    /// 1-based rank of `gold`, if it is in the stored ranking.
    pub fn rank_of(&self, gold: EntityId) -> Option<usize> {
        self.final_ranking.iter().position(|&e| e == gold).map(|p| p + 1)
    }
}

fn sort_judged(judged: &mut [Judgement]) {
    judged.sort_by(|a, b| b.aggregate.total_cmp(&a.aggregate).then(a.csls_rank.cmp(&b.csls_rank)));
}

/// Judged candidates by aggregate (embedding rank breaks ties), then every
/// other candidate in embedding order; at most `depth` entries.
pub fn final_ranking(judged: &[Judgement], csls: &[EntityId], depth: usize) -> Vec<EntityId> {
    let mut sorted = judged.to_vec();
    sort_judged(&mut sorted);
    let seen: BTreeSet<EntityId> = sorted.iter().map(|j| j.candidate).collect();
    sorted
        .iter()
        .map(|j| j.candidate)
        .chain(csls.iter().copied().filter(|e| !seen.contains(e)))
        .take(depth)
        .collect()
}

/// Everything the loop needs besides the target.
pub struct Aligner<'a> {
    pub kg1: &'a KnowledgeGraph,
    pub kg2: &'a KnowledgeGraph,
    pub candidates: &'a dyn CandidateSource,
    pub client: &'a ChatClient,
    pub descriptions: &'a DescriptionCache,
    pub cfg: &'a AlignConfig,
    system_prompt: String,
    rethinking_examples: String,
}

impl<'a> Aligner<'a> {
    pub fn new(
        kg1: &'a KnowledgeGraph,
        kg2: &'a KnowledgeGraph,
        candidates: &'a dyn CandidateSource,
        client: &'a ChatClient,
        descriptions: &'a DescriptionCache,
        cfg: &'a AlignConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let case = prompt::default_reasoning_case();
        let system_prompt = if cfg.ablated(Ablation::NoCode) {
            prompt::render_system_prompt_plain(case)
        } else {
            prompt::render_system_prompt(case)
        };
        Ok(Self {
            kg1,
            kg2,
            candidates,
            client,
            descriptions,
            cfg,
            system_prompt,
            rethinking_examples: prompt::default_rethinking_examples().to_string(),
        })
    }

    pub fn system_prompt(&self) -> &str {
        &self.system_prompt
    }

    /// Descriptions are shared through the cache, so their calls are booked
    /// under no target; otherwise the bill would depend on thread timing.
    fn description(&self, kg: &KnowledgeGraph, e: EntityId) -> Result<String> {
        if self.cfg.ablated(Ablation::NoDescription) {
            return Ok(String::new());
        }
        generate_description(self.client, &self.system_prompt, kg, e, self.descriptions, self.cfg.tuple_cap, None)
    }

    fn card(&self, kg: &KnowledgeGraph, e: EntityId) -> Result<EntityCard> {
        let description = self.description(kg, e)?;
        EntityCard::from_kg(kg, e, &description, &self.cfg.card_options())
    }

    fn satisfied(&self, target: EntityId, main: &EntityCard, judged: &[Judgement]) -> Result<bool> {
        match self.cfg.rethink {
            RethinkMode::Rule => {
                let aggs: Vec<f64> = judged.iter().map(|j| j.aggregate).collect();
                Ok(rethink_rule(&aggs, self.cfg.threshold, self.cfg.min_gap))
            }
            RethinkMode::Llm => {
                let pairs = judged
                    .iter()
                    .map(|j| JudgedPair {
                        name: self.candidate_name(j.candidate),
                        id: j.candidate.0.to_string(),
                        aggregate: j.aggregate,
                    })
                    .collect::<Vec<_>>();
                let text = render_rethinking_prompt(&main.name, &main.id, &pairs, &self.rethinking_examples)?;
                let request = self
                    .client
                    .request(vec![ChatMessage::system(&self.system_prompt), ChatMessage::user(text)]);
                let reply = self.client.chat(Some(target), &request)?;
                match parse_verdict(&reply.content, self.cfg.lenient_verdicts) {
                    Ok(v) => Ok(v.satisfied),
                    Err(e) => {
                        log::warn!("target {target}: unreadable verdict ({e}); treating it as [NO]");
                        Ok(false)
                    }
                }
            }
        }
    }

    fn candidate_name(&self, e: EntityId) -> String {
        if self.cfg.ablated(Ablation::NoName) {
            String::new()
        } else {
            self.kg2.entity_name(e).unwrap_or_default().to_string()
        }
    }

    /// Runs the loop for one target of the first graph.
    pub fn align_entity(&self, target: EntityId) -> Result<AlignmentResult> {
        let row = self.kg1.index_of(target).ok_or(Error::UnknownEntity(target.0))?;
        let ranked = self.candidates.ranked(row);
        let csls: Vec<EntityId> = ranked.iter().map(|c| self.kg2.id_at(c.row)).collect();
        let mut judged: Vec<Judgement> = Vec::new();
        let mut rounds_used = 0;
        let outcome = self.run_rounds(target, &ranked, &csls, &mut judged, &mut rounds_used);
        sort_judged(&mut judged);
        let final_ranking = final_ranking(&judged, &csls, self.cfg.ranking_depth);
        Ok(AlignmentResult {
            target,
            chosen: final_ranking.first().copied(),
            final_ranking,
            judged,
            rounds_used,
            usage: self.client.ledger().for_target(Some(target)),
            failed: match outcome {
                Ok(()) => None,
                Err(e @ Error::Backend(_)) => {
                    log::error!("target {target} failed: {e}");
                    Some(e.to_string())
                }
                Err(other) => return Err(other),
            },
        })
    }

    fn run_rounds(
        &self,
        target: EntityId,
        ranked: &[Candidate],
        csls: &[EntityId],
        judged: &mut Vec<Judgement>,
        rounds_used: &mut usize,
    ) -> Result<()> {
        let schedule = self.cfg.effective_schedule();
        let mut main: Option<EntityCard> = None;
        for (round, &scope) in schedule.iter().enumerate() {
            *rounds_used = round + 1;
            let start = judged.len();
            for (pos, c) in ranked.iter().enumerate().take(scope).skip(start) {
                let main_card = match &main {
                    Some(card) => card,
                    None => main.insert(self.card(self.kg1, target)?),
                };
                let cand = csls[pos];
                let cand_card = self.card(self.kg2, cand)?;
                let text = render_reasoning_prompt(main_card, &cand_card, self.cfg.card_options().code);
                let outcome = request_scores(self.client, Some(target), &self.system_prompt, &text)?;
                judged.push(Judgement {
                    candidate: cand,
                    csls_rank: pos + 1,
                    csls_score: c.score,
                    aggregate: outcome.scores.aggregate(&self.cfg.weights),
                    scores: outcome.scores,
                    round: round + 1,
                    fallback: outcome.fallback,
                });
            }
            if judged.is_empty() || round + 1 == schedule.len() {
                break;
            }
            let mut sorted = judged.clone();
            sort_judged(&mut sorted);
            let main_card = main.as_ref().expect("main card built with the first judgement");
            if self.satisfied(target, main_card, &sorted)? {
                break;
            }
        }
        Ok(())
    }

    /// Aligns every target on `cfg.workers` threads. Results come back in
    /// the order of `targets` whatever the scheduling.
    pub fn align_all(&self, targets: &[EntityId]) -> Result<Vec<AlignmentResult>> {
        let slots: Vec<Mutex<Option<Result<AlignmentResult>>>> = targets.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.cfg.workers.min(targets.len()).max(1);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&t) = targets.get(i) else { break };
                    let r = self.align_entity(t);
                    *slots[i].lock().expect("slot lock") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot lock").expect("every slot filled"))
            .collect()
    }
}

/// How many targets stopped after each round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundHistogram {
    pub counts: Vec<usize>,
}

impl RoundHistogram {
    pub fn new(results: &[AlignmentResult], rounds: usize) -> Self {
        let width = results.iter().map(|r| r.rounds_used).max().unwrap_or(0).max(rounds);
        let mut counts = vec![0; width];
        for r in results {
            if r.rounds_used > 0 {
                counts[r.rounds_used - 1] += 1;
            }
        }
        Self { counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn proportions(&self) -> Vec<f64> {
        let total = self.total();
        self.counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect()
    }
}

pub fn write_results(path: &Path, results: &[AlignmentResult]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<AlignmentResult>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, format!("bad result record: {e}")))?;
        out.push(r);
    }
    Ok(out)
}
