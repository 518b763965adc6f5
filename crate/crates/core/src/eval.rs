//! Hits@k, MRR, run reports and the embedding-noise sweep.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{AlignmentResult, RoundHistogram};
use crate::error::{Error, Result};
use crate::features::{inject_noise, CslsConfig, CslsIndex, EmbeddingMatrix};
use crate::kg::{EntityId, KnowledgeGraph};

/// Full-scale ICEWS-WIKI reference points for a 70B chat model. Desk-scale
/// runs are not expected to reach them.
pub const REFERENCE_HITS1_ICEWS_WIKI: f64 = 0.880;
pub const REFERENCE_AVG_TOKENS_ICEWS_WIKI: u64 = 11_380;
pub const REFERENCE_AVG_SECONDS_ICEWS_WIKI: f64 = 63.4;

/// Rank of each gold partner in its target's final ranking, in the order of
/// `test`. Targets without a result or whose gold is not ranked get `None`.
pub fn gold_ranks(results: &[AlignmentResult], test: &[(EntityId, EntityId)]) -> Vec<Option<usize>> {
    let by_target: HashMap<EntityId, &AlignmentResult> = results.iter().map(|r| (r.target, r)).collect();
    test.iter()
        .map(|(t, g)| by_target.get(t).and_then(|r| r.rank_of(*g)))
        .collect()
}

pub fn hits_from_ranks(ranks: &[Option<usize>], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count() as f64 / ranks.len() as f64
}

pub fn mrr_from_ranks(ranks: &[Option<usize>]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|r| r.map_or(0.0, |r| 1.0 / r as f64)).sum::<f64>() / ranks.len() as f64
}

pub fn hits_at_k(results: &[AlignmentResult], test: &[(EntityId, EntityId)], k: usize) -> f64 {
    hits_from_ranks(&gold_ranks(results, test), k)
}

pub fn mrr(results: &[AlignmentResult], test: &[(EntityId, EntityId)]) -> f64 {
    mrr_from_ranks(&gold_ranks(results, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub targets: usize,
    pub hits1: f64,
    pub hits10: f64,
    pub mrr: f64,
    /// Share of targets that stopped after round 1, 2, ...
    pub round_proportions: Vec<f64>,
    pub avg_tokens: f64,
    pub avg_prompt_tokens: f64,
    pub avg_completion_tokens: f64,
    /// Summed model latency per target, in seconds.
    pub avg_model_seconds: f64,
    /// Some token counts were estimated rather than reported by the server.
    pub tokens_estimated: bool,
    /// Tokens booked to no target, mostly cached descriptions. Only known
    /// to the run that made the calls; zero when rebuilt from results.
    #[serde(default)]
    pub shared_tokens: u64,
    pub failed_targets: usize,
    pub fallback_scores: usize,
    pub config_fingerprint: String,
}

/// Builds the report. Usage is taken from the per-target slices stored in
/// the results, so a report can be rebuilt from a results file alone.
pub fn report(
    results: &[AlignmentResult],
    test: &[(EntityId, EntityId)],
    rounds: usize,
    config_fingerprint: &str,
) -> EvalReport {
    let ranks = gold_ranks(results, test);
    let histogram = RoundHistogram::new(results, rounds);
    let n = results.len();
    let per = |f: &dyn Fn(&AlignmentResult) -> u64| -> f64 {
        if n == 0 {
            0.0
        } else {
            results.iter().map(f).sum::<u64>() as f64 / n as f64
        }
    };
    EvalReport {
        targets: n,
        hits1: hits_from_ranks(&ranks, 1),
        hits10: hits_from_ranks(&ranks, 10),
        mrr: mrr_from_ranks(&ranks),
        round_proportions: histogram.proportions(),
        avg_tokens: per(&|r| r.usage.total_tokens()),
        avg_prompt_tokens: per(&|r| r.usage.prompt_tokens),
        avg_completion_tokens: per(&|r| r.usage.completion_tokens),
        avg_model_seconds: per(&|r| r.usage.latency_us) / 1e6,
        tokens_estimated: results.iter().any(|r| r.usage.estimated_calls > 0),
        shared_tokens: 0,
        failed_targets: results.iter().filter(|r| r.failed.is_some()).count(),
        fallback_scores: results.iter().flat_map(|r| &r.judged).filter(|j| j.fallback).count(),
        config_fingerprint: config_fingerprint.to_string(),
    }
}

impl EvalReport {
    pub fn is_empty(&self) -> bool {
        self.targets == 0
    }

    /// Column names of [`to_csv`](Self::to_csv); `round_<i>` columns follow
    /// the schedule length.
    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "targets",
            "hits1",
            "hits10",
            "mrr",
            "avg_tokens",
            "avg_prompt_tokens",
            "avg_completion_tokens",
            "avg_model_seconds",
            "tokens_estimated",
            "shared_tokens",
            "failed_targets",
            "fallback_scores",
        ]
        .map(String::from)
        .to_vec();
        h.extend((1..=self.round_proportions.len()).map(|i| format!("round_{i}")));
        h.push("config_fingerprint".into());
        h
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut row = vec![
            self.targets.to_string(),
            format!("{:.6}", self.hits1),
            format!("{:.6}", self.hits10),
            format!("{:.6}", self.mrr),
            format!("{:.2}", self.avg_tokens),
            format!("{:.2}", self.avg_prompt_tokens),
            format!("{:.2}", self.avg_completion_tokens),
            format!("{:.6}", self.avg_model_seconds),
            self.tokens_estimated.to_string(),
            self.shared_tokens.to_string(),
            self.failed_targets.to_string(),
            self.fallback_scores.to_string(),
        ];
        row.extend(self.round_proportions.iter().map(|p| format!("{p:.6}")));
        row.push(self.config_fingerprint.clone());
        let csv_err = |e: csv::Error| Error::Integrity(format!("csv: {e}"));
        w.write_record(self.csv_header()).map_err(csv_err)?;
        w.write_record(&row).map_err(csv_err)?;
        let bytes = w.into_inner().map_err(|e| Error::Integrity(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_text(&self) -> String {
        if self.is_empty() {
            return format!("no data: the results contain no targets\nconfig {}\n", self.config_fingerprint);
        }
        let mut s = String::new();
        let _ = writeln!(s, "targets          {}", self.targets);
        let _ = writeln!(s, "Hits@1           {:.4}", self.hits1);
        let _ = writeln!(s, "Hits@10          {:.4}", self.hits10);
        let _ = writeln!(s, "MRR              {:.4}", self.mrr);
        for (i, p) in self.round_proportions.iter().enumerate() {
            let _ = writeln!(s, "stopped round {}  {:.4}", i + 1, p);
        }
        let estimate = if self.tokens_estimated { " (estimated)" } else { "" };
        let _ = writeln!(s, "avg tokens       {:.1}{estimate}", self.avg_tokens);
        if self.shared_tokens > 0 {
            let _ = writeln!(s, "shared tokens    {}", self.shared_tokens);
        }
        let _ = writeln!(s, "avg model time   {:.3} s per target", self.avg_model_seconds);
        if self.failed_targets > 0 {
            let _ = writeln!(s, "failed targets   {}", self.failed_targets);
        }
        if self.fallback_scores > 0 {
            let _ = writeln!(s, "fallback scores  {}", self.fallback_scores);
        }
        let _ = writeln!(s, "config           {}", self.config_fingerprint);
        s
    }

    /// Writes `report.csv`, `report.json` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            ("report.csv", self.to_csv()?),
            ("report.json", self.to_json()?),
            ("report.txt", self.to_text()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// One noise level of [`noise_sweep`], averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    /// Hits@1 of the top embedding candidate.
    pub embedding_hits1: f64,
    /// Hits@1 of the full loop.
    pub full_hits1: f64,
    /// Share of targets whose gold lies outside the widest scope.
    pub gold_outside_scope: f64,
}

/// Noises both graphs' embeddings (the same dimensions on each side) and
/// compares embedding-only retrieval with the full loop run by `full_loop`
/// on the noised index.
#[allow(clippy::too_many_arguments)]
pub fn noise_sweep(
    left: &EmbeddingMatrix,
    right: &EmbeddingMatrix,
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    test: &[(EntityId, EntityId)],
    ratios: &[f64],
    seeds: &[u64],
    csls: &CslsConfig,
    widest_scope: usize,
    full_loop: &dyn Fn(&CslsIndex) -> Result<Vec<AlignmentResult>>,
) -> Result<Vec<SweepRow>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("noise sweep needs at least one seed".into()));
    }
    let stacked = left.vstack(right)?;
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let (mut emb, mut full, mut outside) = (0.0, 0.0, 0.0);
        for &seed in seeds {
            let noised = inject_noise(&stacked, ratio, seed)?;
            let (l, r) = noised.split_rows(left.rows());
            let index = CslsIndex::new(&l, &r, csls)?;
            let mut top1 = 0usize;
            let mut out = 0usize;
            for (t, g) in test {
                let (Some(row), Some(gold_row)) = (kg1.index_of(*t), kg2.index_of(*g)) else {
                    return Err(Error::Integrity(format!("test pair ({t}, {g}) not in the graphs")));
                };
                let ranked = index.ranked(row);
                let pos = ranked.iter().position(|c| c.row == gold_row).expect("every target is ranked");
                top1 += usize::from(pos == 0);
                out += usize::from(pos >= widest_scope);
            }
            let n = test.len().max(1) as f64;
            emb += top1 as f64 / n;
            outside += out as f64 / n;
            full += hits_at_k(&full_loop(&index)?, test, 1);
        }
        let s = seeds.len() as f64;
        rows.push(SweepRow {
            ratio,
            embedding_hits1: emb / s,
            full_hits1: full / s,
            gold_outside_scope: outside / s,
        });
    }
    Ok(rows)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("ratio,embedding_hits1,full_hits1,gold_outside_scope\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:.2},{:.6},{:.6},{:.6}",
            r.ratio, r.embedding_hits1, r.full_hits1, r.gold_outside_scope
        );
    }
    s
}
