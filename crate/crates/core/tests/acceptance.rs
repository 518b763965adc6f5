//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chatea::align::{read_results, AlignConfig, AlignmentResult, Aligner, RethinkMode};
use chatea::config::{BackendKind, RunConfig};
use chatea::eval::{hits_at_k, hits_from_ranks, mrr, mrr_from_ranks};
use chatea::features::{csls_topk, whiten, CslsConfig, CslsIndex, LossDistance};
use chatea::kg::EntityId;
use chatea::llm::{
    read_transcript, ChatClient, ChatMessage, ChatRequest, OracleBackend, OracleConfig, RetryPolicy, ScriptedBackend,
    TranscriptWriter, Usage,
};
use chatea::prompt::{
    self, parse_scores, request_scores, CardOptions, DescriptionCache, EntityCard, JudgedPair, SimilarityScores,
};
use chatea::run;
use chatea::synthetic::{SyntheticConfig, SyntheticPair};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

/// The 100-entity synthetic pair, written to disk with an oracle config and
/// preprocessed once for the criteria that need trained embeddings.
struct Bench {
    _dir: tempfile::TempDir,
    root: PathBuf,
    cfg: RunConfig,
    preprocess_time: Duration,
}

const CONFIG: &str = r#"output_dir = "out"

[data]
dir = "data"
temporal = true

[align]
workers = 4

[backend]
kind = "oracle"
"#;

fn write_bench(root: &Path) -> Result<RunConfig, String> {
    let pair = SyntheticPair::generate(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    pair.write(&root.join("data")).map_err(|e| e.to_string())?;
    std::fs::write(root.join("run.toml"), CONFIG).map_err(|e| e.to_string())?;
    RunConfig::load(&root.join("run.toml")).map_err(|e| e.to_string())
}

impl Bench {
    fn new() -> Result<Self, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let root = dir.path().to_path_buf();
        let cfg = write_bench(&root)?;
        let t = Instant::now();
        run::preprocess(&cfg).map_err(|e| format!("preprocess: {e}"))?;
        Ok(Self {
            _dir: dir,
            root,
            cfg,
            preprocess_time: t.elapsed(),
        })
    }

    fn trained(&self) -> Result<(run::Dataset, run::Checkpoint), String> {
        let ds = run::load_dataset(&self.cfg).map_err(|e| e.to_string())?;
        let ck = run::load_checkpoint(&self.cfg.output_dir, &ds).map_err(|e| e.to_string())?;
        Ok((ds, ck))
    }
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for instance in 0..50 {
        // The first instance is the largest allowed; the rest are random.
        let (n_src, n_tgt) = if instance == 0 {
            (200, 200)
        } else {
            (rng.random_range(2..=200), rng.random_range(2..=200))
        };
        let d = rng.random_range(2..=48);
        let k = 10.min(n_src).min(n_tgt - 1);
        let src = gaussian_rows(&mut rng, n_src, d);
        let tgt = gaussian_rows(&mut rng, n_tgt, d);
        let cfg = CslsConfig { neighborhood_k: k };
        let (ms, mt) = (matrix(&src), matrix(&tgt));
        let index = CslsIndex::new(&ms, &mt, &cfg).map_err(|e| e.to_string())?;
        let expect = brute_force_csls_all(&src, &tgt, k);
        let probes = [0, n_src / 2, n_src - 1];
        for (row, truth) in expect.iter().enumerate() {
            let got = index.ranked(row);
            let mut lists = vec![got];
            if probes.contains(&row) {
                let scope = rng.random_range(1..=n_tgt);
                lists.push(csls_topk(&ms, &mt, row, scope, &cfg).map_err(|e| e.to_string())?);
            }
            for list in lists {
                for (g, (j, s)) in list.iter().zip(truth) {
                    check(g.row == *j, || format!("instance {instance} row {row}: order differs"))?;
                    worst = worst.max((g.score - s).abs());
                }
            }
        }
    }
    let elapsed = started.elapsed();
    check(worst <= 1e-9, || format!("score error {worst:e} > 1e-9"))?;
    check(elapsed < Duration::from_secs(10), || format!("took {}", secs(elapsed)))?;
    Ok(format!("50 instances up to 200x200, max score error {worst:.1e}, {}", secs(elapsed)))
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for seed in 0..100 {
        for distance in [LossDistance::Euclidean, LossDistance::Csls] {
            let err = gradient_error(seed, distance);
            check(err.is_finite() && err <= 1e-4, || format!("seed {seed} {distance:?}: relative error {err:e}"))?;
            worst = worst.max(err);
            points += 1;
        }
    }
    Ok(format!("{points} points, max relative error {worst:.1e}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for d in 1..=32 {
        for extra in [0, 3 * d] {
            let n = 4 * d + extra;
            let base = gaussian_rows(&mut rng, n, d);
            let mix = gaussian_rows(&mut rng, d, d);
            let rows: Vec<Vec<f64>> = base
                .iter()
                .map(|r| (0..d).map(|j| (0..d).map(|i| r[i] * mix[i][j]).sum::<f64>() - 2.0).collect())
                .collect();
            let out = whiten(&matrix(&rows), d).map_err(|e| format!("d={d} n={n}: {e}"))?;
            let out: Vec<Vec<f64>> = out.iter_rows().map(<[f64]>::to_vec).collect();
            for (a, row) in covariance(&out).iter().enumerate() {
                for (b, v) in row.iter().enumerate() {
                    worst = worst.max((v - if a == b { 1.0 } else { 0.0 }).abs());
                }
            }
        }
    }
    check(worst <= 1e-6, || format!("max deviation from identity {worst:e}"))?;
    Ok(format!("dims 1..=32 with n = 4*dim and 7*dim, max deviation {worst:.1e}"))
}

fn criterion_4(bench: &Bench) -> Outcome {
    let (ds, ck) = bench.trained()?;
    let index = CslsIndex::new(&ck.left, &ck.right, &bench.cfg.csls).map_err(|e| e.to_string())?;
    let hits = ck
        .test
        .iter()
        .filter(|(t, g)| {
            let row = ds.kg1.index_of(*t).expect("test target in graph");
            ds.kg2.id_at(index.ranked(row)[0].row) == *g
        })
        .count() as f64
        / ck.test.len() as f64;
    check(hits >= 0.95, || format!("Hits@1 {hits:.4} < 0.95"))?;
    check(bench.preprocess_time < Duration::from_secs(60), || {
        format!("training took {}", secs(bench.preprocess_time))
    })?;
    Ok(format!(
        "embedding-only Hits@1 {hits:.4} on {} test pairs, training {}",
        ck.test.len(),
        secs(bench.preprocess_time)
    ))
}

fn oracle_run(
    kg1: &chatea::kg::KnowledgeGraph,
    kg2: &chatea::kg::KnowledgeGraph,
    gold: &[(EntityId, EntityId)],
    source: &dyn chatea::align::CandidateSource,
    rethink: RethinkMode,
) -> Result<Vec<AlignmentResult>, String> {
    let client = ChatClient::new(
        Arc::new(OracleBackend::new(gold.iter().copied(), OracleConfig::default())),
        RetryPolicy::no_wait(1),
        4,
    );
    let cache = DescriptionCache::new();
    let cfg = AlignConfig {
        rethink,
        workers: 4,
        ..Default::default()
    };
    let targets: Vec<EntityId> = gold.iter().map(|p| p.0).collect();
    Aligner::new(kg1, kg2, source, &client, &cache, &cfg)
        .and_then(|a| a.align_all(&targets))
        .map_err(|e| e.to_string())
}

fn criterion_5(bench: &Bench) -> Outcome {
    let (ds, ck) = bench.trained()?;
    let index = CslsIndex::new(&ck.left, &ck.right, &bench.cfg.csls).map_err(|e| e.to_string())?;
    let in_scope: Vec<(EntityId, EntityId)> = ck
        .test
        .iter()
        .copied()
        .filter(|(t, g)| {
            let row = ds.kg1.index_of(*t).expect("test target in graph");
            index.top(row, 20).iter().any(|c| ds.kg2.id_at(c.row) == *g)
        })
        .collect();
    check(!in_scope.is_empty(), || "no gold inside the top 20".into())?;
    for rethink in [RethinkMode::Llm, RethinkMode::Rule] {
        let results = oracle_run(&ds.kg1, &ds.kg2, &in_scope, &index, rethink)?;
        let hits = hits_at_k(&results, &in_scope, 1);
        check(hits == 1.0, || format!("{rethink:?}: Hits@1 {hits}"))?;
    }

    let pair = SyntheticPair::generate(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    for (rank, rounds) in [(1, 1), (7, 2), (15, 3)] {
        let source = candidates_with_gold_at(&pair.kg1, &pair.kg2, &pair.pairs, |_| rank, 50);
        for rethink in [RethinkMode::Llm, RethinkMode::Rule] {
            let results = oracle_run(&pair.kg1, &pair.kg2, &pair.pairs, &source, rethink)?;
            let bad = results.iter().find(|r| r.rounds_used != rounds || r.rank_of(pair_gold(&pair, r.target)) != Some(1));
            check(bad.is_none(), || {
                let r = bad.unwrap();
                format!("gold at rank {rank} ({rethink:?}): target {} used {} rounds", r.target, r.rounds_used)
            })?;
        }
    }
    Ok(format!(
        "oracle Hits@1 1.0 on {}/{} test targets with gold in the top 20; gold ranks 1/7/15 take 1/2/3 rounds",
        in_scope.len(),
        ck.test.len()
    ))
}

fn pair_gold(pair: &SyntheticPair, target: EntityId) -> EntityId {
    pair.pairs.iter().find(|p| p.0 == target).expect("target has gold").1
}

fn criterion_6(bench: &Bench) -> Outcome {
    let rows = run::sweep(&bench.cfg, &[0.0, 0.4, 0.8], &[1, 2, 3]).map_err(|e| e.to_string())?;
    let (clean, mid, heavy) = (&rows[0], &rows[1], &rows[2]);
    let emb_drop = clean.embedding_hits1 - mid.embedding_hits1;
    let full_drop = clean.full_hits1 - mid.full_hits1;
    check(full_drop < emb_drop, || {
        format!("0->40%: full-loop drop {full_drop:.4} not below embedding drop {emb_drop:.4}")
    })?;
    check(
        heavy.embedding_hits1 < clean.embedding_hits1 && heavy.full_hits1 < clean.full_hits1,
        || format!("80%: no degradation ({heavy:?})"),
    )?;
    // With an exact judge the loop misses exactly when gold is out of scope.
    for r in &rows {
        let failures = 1.0 - r.full_hits1;
        check((failures - r.gold_outside_scope).abs() <= 1e-9, || {
            format!("ratio {}: failures {failures:.4} vs gold outside top 20 {:.4}", r.ratio, r.gold_outside_scope)
        })?;
    }
    Ok(format!(
        "Hits@1 embedding {:.3}/{:.3}/{:.3}, full loop {:.3}/{:.3}/{:.3} at 0/40/80%; failures at 80% = gold outside top 20 ({:.3})",
        clean.embedding_hits1,
        mid.embedding_hits1,
        heavy.embedding_hits1,
        clean.full_hits1,
        mid.full_hits1,
        heavy.full_hits1,
        heavy.gold_outside_scope
    ))
}

fn criterion_7() -> Outcome {
    check(
        prompt::render_system_prompt(prompt::default_reasoning_case()) == fixture("case_system.txt"),
        || "system prompt differs from fixture".into(),
    )?;
    let (kg1, kg2) = case_graphs();
    let opts = CardOptions::default();
    let main = EntityCard::from_kg(&kg1, MONARCH, MONARCH_DESCRIPTION, &opts).map_err(|e| e.to_string())?;
    let cand = EntityCard::from_kg(&kg2, MONARCHY, MONARCHY_DESCRIPTION, &opts).map_err(|e| e.to_string())?;
    check(
        prompt::render_reasoning_prompt(&main, &cand, true) == fixture("case_reasoning.txt"),
        || "reasoning prompt differs from fixture".into(),
    )?;
    let pairs = [
        ("Monarchy_of_the_United_Kingdom", "23393", 5.0),
        ("United_Kingdom", "23394", 2.75),
        ("Elizabeth_II", "23395", 2.5),
    ]
    .map(|(name, id, aggregate)| JudgedPair {
        name: name.into(),
        id: id.into(),
        aggregate,
    });
    let rethink =
        prompt::render_rethinking_prompt("British Monarch", "7497", &pairs, prompt::default_rethinking_examples())
            .map_err(|e| e.to_string())?;
    check(rethink == fixture("case_rethinking.txt"), || "rethinking prompt differs from fixture".into())?;

    let parsed = |name: &str| parse_scores(&fixture(name)).map(|s| s.components());
    check(parsed("reply_perfect.txt") == Ok([5, 5, 5, 5]), || "perfect reply".into())?;
    check(parsed("reply_partial_match.txt") == Ok([4, 3, 4, 2]), || "partial reply".into())?;
    check(parsed("reply_unformatted.txt").is_err(), || "unformatted reply parsed".into())?;

    let bad = fixture("reply_unformatted.txt");
    let client = ChatClient::new(
        Arc::new(ScriptedBackend::sequence("scripted", [bad.clone(), bad])),
        RetryPolicy::no_wait(1),
        1,
    );
    let out = request_scores(&client, None, "system", "prompt").map_err(|e| e.to_string())?;
    check(out.scores == SimilarityScores::FLOOR && out.fallback && out.calls == 2, || {
        format!("fallback gave {:?} after {} calls", out.scores.components(), out.calls)
    })?;
    Ok("system, reasoning and rethinking prompts byte-identical; (5,5,5,5), (4,3,4,2), retry then (1,1,1,1)".into())
}

fn result_with_gold_at(target: u64, rank: usize) -> AlignmentResult {
    let ranking: Vec<EntityId> = (1..=10)
        .map(|p| EntityId(if p == rank { 1000 + target } else { 5000 + p as u64 }))
        .collect();
    AlignmentResult {
        target: EntityId(target),
        judged: Vec::new(),
        chosen: ranking.first().copied(),
        final_ranking: ranking,
        rounds_used: 1,
        usage: Usage::default(),
        failed: None,
    }
}

fn criterion_8() -> Outcome {
    let results: Vec<AlignmentResult> = [1, 2, 4]
        .iter()
        .enumerate()
        .map(|(i, &r)| result_with_gold_at(i as u64, r))
        .collect();
    let gold: Vec<(EntityId, EntityId)> = (0..3).map(|t| (EntityId(t), EntityId(1000 + t))).collect();
    let (h1, h10, m) = (hits_at_k(&results, &gold, 1), hits_at_k(&results, &gold, 10), mrr(&results, &gold));
    check((h1 - 1.0 / 3.0).abs() <= 1e-9, || format!("Hits@1 {h1}"))?;
    check((h10 - 1.0).abs() <= 1e-9, || format!("Hits@10 {h10}"))?;
    check((m - 7.0 / 12.0).abs() <= 1e-9, || format!("MRR {m}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..500 {
        let n = rng.random_range(0..60);
        let ranks: Vec<Option<usize>> = (0..n)
            .map(|_| rng.random_bool(0.8).then(|| rng.random_range(1..=50)))
            .collect();
        for k in 1..=60 {
            check(hits_from_ranks(&ranks, k) <= hits_from_ranks(&ranks, k + 1), || {
                format!("case {case}: Hits@{k} > Hits@{}", k + 1)
            })?;
        }
        let m = mrr_from_ranks(&ranks);
        check((0.0..=1.0).contains(&m), || format!("case {case}: MRR {m}"))?;
    }
    Ok(format!("Hits@1 {h1:.4}, Hits@10 {h10:.4}, MRR {m:.4}; Hits@k monotone on 500 fuzzed sets"))
}

/// Preprocesses a fresh copy of the bench and replays `transcript` into it.
fn replay_run(transcript: &Path) -> Result<(tempfile::TempDir, RunConfig, run::AlignOutcome), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = write_bench(dir.path())?;
    cfg.backend.kind = BackendKind::Replay;
    cfg.backend.transcript = Some(transcript.to_path_buf());
    run::preprocess(&cfg).map_err(|e| e.to_string())?;
    let out = run::align(&cfg).map_err(|e| e.to_string())?;
    Ok((dir, cfg, out))
}

fn criterion_9(bench: &Bench) -> Outcome {
    let live = run::align(&bench.cfg).map_err(|e| e.to_string())?;
    let recorded = bench.root.join("recorded.jsonl");
    std::fs::copy(&live.transcript_path, &recorded).map_err(|e| e.to_string())?;
    let (_a, cfg_a, run_a) = replay_run(&recorded)?;
    let (_b, cfg_b, run_b) = replay_run(&recorded)?;
    let bytes = |p: PathBuf| std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
    let mut compared = 0;
    for name in [
        run::EMBEDDINGS_1,
        run::EMBEDDINGS_2,
        run::RESULTS,
        "report.csv",
        "report.json",
        "report.txt",
    ] {
        let (a, b) = (bytes(cfg_a.output_dir.join(name))?, bytes(cfg_b.output_dir.join(name))?);
        check(a == b, || format!("{name} differs between runs"))?;
        compared += 1;
    }
    // Workers append to the transcript as calls finish, so only its set of
    // records is stable.
    let records = |cfg: &RunConfig| -> Result<Vec<String>, String> {
        let text = std::fs::read_to_string(cfg.output_dir.join(run::TRANSCRIPT)).map_err(|e| e.to_string())?;
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines.sort();
        Ok(lines)
    };
    check(records(&cfg_a)? == records(&cfg_b)?, || "transcript records differ".into())?;
    check(bytes(live.results_path.clone())? == bytes(run_a.results_path.clone())?, || {
        "replayed results differ from the live run".into()
    })?;
    check(run_a.report == run_b.report, || "reports differ".into())?;
    Ok(format!(
        "{compared} output files byte-identical and the same transcript records across two preprocess+replay runs; results equal the live run ({} targets)",
        run_a.results.len()
    ))
}

fn criterion_10(bench: &Bench) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let live_path = dir.path().join("live.jsonl");
    let replies: Vec<String> = (0..100).map(|i| "word ".repeat(1 + i * 7 % 23)).collect();
    let live = ChatClient::new(Arc::new(ScriptedBackend::sequence("m", replies)), RetryPolicy::no_wait(1), 4)
        .with_transcript(TranscriptWriter::create(&live_path).map_err(|e| e.to_string())?);
    let requests: Vec<(Option<EntityId>, ChatRequest)> = (0..100u64)
        .map(|i| {
            let target = (i % 9 != 0).then_some(EntityId(i % 7));
            let text = format!("question {i} {}", "x ".repeat(i as usize % 31));
            (target, live.request(vec![ChatMessage::system("s"), ChatMessage::user(text)]))
        })
        .collect();
    for (t, r) in &requests {
        live.chat(*t, r).map_err(|e| e.to_string())?;
    }
    drop(live);

    let replay_path = dir.path().join("replay.jsonl");
    let replay = ChatClient::new(
        Arc::new(ScriptedBackend::from_transcript("m", &live_path).map_err(|e| e.to_string())?),
        RetryPolicy::no_wait(1),
        4,
    )
    .with_transcript(TranscriptWriter::create(&replay_path).map_err(|e| e.to_string())?);
    for (t, r) in &requests {
        replay.chat(*t, r).map_err(|e| e.to_string())?;
    }
    let records = read_transcript(&replay_path).map_err(|e| e.to_string())?;
    check(records.len() == 100, || format!("{} transcript records", records.len()))?;
    let mut summed = Usage::default();
    for rec in &records {
        summed.add(&Usage::of(&rec.reply));
    }
    let total = replay.ledger().total();
    check(total == summed, || format!("ledger {total:?} vs transcript {summed:?}"))?;
    let mut per_target = Usage::default();
    for u in replay.ledger().per_target().values() {
        per_target.add(u);
    }
    check(per_target == summed, || "per-target slices do not add up to the total".into())?;

    // The same identity on a full alignment run: per-target usage in the
    // results plus the shared spend equals the transcript.
    let results = read_results(&bench.cfg.output_dir.join(run::RESULTS)).map_err(|e| e.to_string())?;
    let report: chatea::eval::EvalReport =
        serde_json::from_str(&std::fs::read_to_string(bench.cfg.output_dir.join("report.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let run_records = read_transcript(&bench.cfg.output_dir.join(run::TRANSCRIPT)).map_err(|e| e.to_string())?;
    let transcript_tokens: u64 = run_records.iter().map(|r| Usage::of(&r.reply).total_tokens()).sum();
    let booked: u64 = results.iter().map(|r| r.usage.total_tokens()).sum::<u64>() + report.shared_tokens;
    check(booked == transcript_tokens, || {
        format!("alignment run books {booked} tokens, transcript holds {transcript_tokens}")
    })?;
    Ok(format!(
        "100-call replay: ledger = transcript sums ({} calls, {} tokens); alignment run {} calls agree",
        total.calls,
        total.total_tokens(),
        run_records.len()
    ))
}

fn main() {
    let bench = Bench::new();
    let needs_bench = |f: fn(&Bench) -> Outcome| {
        let bench = &bench;
        move || match bench {
            Ok(b) => f(b),
            Err(e) => Err(format!("setup failed: {e}")),
        }
    };
    let criteria: Vec<Criterion> = vec![
        ("CSLS equals brute force", Box::new(criterion_1)),
        ("margin-loss gradient check", Box::new(criterion_2)),
        ("whitening gives identity covariance", Box::new(criterion_3)),
        ("embedding-only synthetic Hits@1", Box::new(needs_bench(criterion_4))),
        ("two-stage loop exactness", Box::new(needs_bench(criterion_5))),
        ("noise sweep", Box::new(needs_bench(criterion_6))),
        ("golden prompts and reply parsing", Box::new(criterion_7)),
        ("metrics", Box::new(criterion_8)),
        // Criterion 10 reads the run that criterion 9 leaves behind.
        ("reproducible runs", Box::new(needs_bench(criterion_9))),
        ("usage accounting", Box::new(needs_bench(criterion_10))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
