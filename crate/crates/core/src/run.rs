//! End-to-end stages over a [`RunConfig`]: preprocess, align, evaluate and
//! the noise sweep. The CLI is a thin layer over these functions.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{read_results, write_results, Aligner, AlignmentResult};
use crate::config::{BackendKind, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{noise_sweep, report, EvalReport, SweepRow};
use crate::features::{self, CslsIndex, EmbeddingMatrix, KeyedVectors, NameVectors};
use crate::kg::{load_kg_files, read_pairs, write_pairs, AnchorSet, EntityId, KnowledgeGraph};
use crate::llm::{ChatBackend, ChatClient, HttpBackend, OracleBackend, ScriptedBackend, TranscriptWriter};
use crate::prompt::DescriptionCache;

pub const EMBEDDINGS_1: &str = "embeddings_1.bin";
pub const EMBEDDINGS_2: &str = "embeddings_2.bin";
pub const TRAIN_PAIRS: &str = "train_pairs";
pub const TEST_PAIRS: &str = "test_pairs";
pub const LOSSES: &str = "losses.txt";
pub const MANIFEST: &str = "manifest.json";
pub const RESULTS: &str = "results.jsonl";
pub const TRANSCRIPT: &str = "transcript.jsonl";

pub struct Dataset {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    pub anchors: AnchorSet,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let d = &cfg.data;
    let kg1 = load_kg_files(&d.kg_files(1), d.temporal)?;
    let kg2 = load_kg_files(&d.kg_files(2), d.temporal)?;
    let anchors = AnchorSet::split(read_pairs(&d.pairs_path())?, d.split_seed, d.train_ratio)?;
    anchors.validate(&kg1, &kg2)?;
    Ok(Dataset { kg1, kg2, anchors })
}

/// Hashes of the checkpoint files written by [`preprocess`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_fingerprint: String,
    pub files: BTreeMap<String, String>,
    pub final_loss: Option<f64>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn name_vectors(cfg: &RunConfig, ds: &Dataset) -> Result<Option<NameVectors>> {
    let Some([p1, p2]) = &cfg.data.name_vectors else {
        return Ok(None);
    };
    if !p1.exists() || !p2.exists() {
        log::warn!(
            "name vector file {} or {} is missing; falling back to the hashing n-gram encoder",
            p1.display(),
            p2.display()
        );
        return Ok(None);
    }
    Ok(Some(NameVectors {
        left: KeyedVectors::read(p1)?.aligned_to(&ds.kg1),
        right: KeyedVectors::read(p2)?.aligned_to(&ds.kg2),
    }))
}

fn write_checkpoint(dir: &Path, ds: &Dataset, fused: &features::Fused) -> Result<()> {
    let ids1: Vec<EntityId> = ds.kg1.entity_ids().collect();
    let ids2: Vec<EntityId> = ds.kg2.entity_ids().collect();
    fused.left.write_binary(&dir.join(EMBEDDINGS_1), &ids1)?;
    fused.right.write_binary(&dir.join(EMBEDDINGS_2), &ids2)?;
    write_pairs(&dir.join(TRAIN_PAIRS), &ds.anchors.train)?;
    write_pairs(&dir.join(TEST_PAIRS), &ds.anchors.test)?;
    let losses: String = fused.losses.iter().map(|l| format!("{l:.12e}\n")).collect();
    let path = dir.join(LOSSES);
    fs::write(&path, losses).map_err(|e| Error::io(&path, e))
}

/// Trains the embeddings and writes them with a manifest of hashes into
/// the output directory. Files are staged in a scratch directory and only
/// moved into place once every stage has succeeded.
pub fn preprocess(cfg: &RunConfig) -> Result<Manifest> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let staging = out.join(".preprocess-partial");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;

    let staged = (|| -> Result<Manifest> {
        let ds = load_dataset(cfg)?;
        let names = name_vectors(cfg, &ds)?;
        let fused = features::preprocess(&ds.kg1, &ds.kg2, &ds.anchors.train, names.as_ref(), &cfg.features)?;
        write_checkpoint(&staging, &ds, &fused)?;
        let mut files = BTreeMap::new();
        for name in [EMBEDDINGS_1, EMBEDDINGS_2, TRAIN_PAIRS, TEST_PAIRS, LOSSES] {
            files.insert(name.to_string(), sha256_file(&staging.join(name))?);
        }
        let manifest = Manifest {
            config_fingerprint: cfg.fingerprint(),
            files,
            final_loss: fused.losses.last().copied(),
        };
        let path = staging.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    })();

    let result = staged.and_then(|manifest| {
        for name in manifest.files.keys().map(String::as_str).chain([MANIFEST]) {
            let (from, to) = (staging.join(name), out.join(name));
            fs::rename(&from, &to).map_err(|e| Error::io(&to, e))?;
        }
        Ok(manifest)
    });
    let _ = fs::remove_dir_all(&staging);
    if result.is_err() {
        for name in [EMBEDDINGS_1, EMBEDDINGS_2, TRAIN_PAIRS, TEST_PAIRS, LOSSES, MANIFEST] {
            let _ = fs::remove_file(out.join(name));
        }
    }
    result
}

/// Trained embeddings in graph row order plus the anchor split.
pub struct Checkpoint {
    pub left: EmbeddingMatrix,
    pub right: EmbeddingMatrix,
    pub train: Vec<(EntityId, EntityId)>,
    pub test: Vec<(EntityId, EntityId)>,
}

/// Reads the checkpoint and checks every file against the manifest.
pub fn load_checkpoint(dir: &Path, ds: &Dataset) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(&path, 0, e.to_string()))?;
    for (name, hash) in &manifest.files {
        let actual = sha256_file(&dir.join(name))?;
        if &actual != hash {
            return Err(Error::Integrity(format!("{name} does not match the manifest hash")));
        }
    }
    Ok(Checkpoint {
        left: KeyedVectors::read(&dir.join(EMBEDDINGS_1))?.aligned_to(&ds.kg1),
        right: KeyedVectors::read(&dir.join(EMBEDDINGS_2))?.aligned_to(&ds.kg2),
        train: read_pairs(&dir.join(TRAIN_PAIRS))?,
        test: read_pairs(&dir.join(TEST_PAIRS))?,
    })
}

/// Builds the configured backend. The oracle follows the aligner's accept
/// rule so its verdicts agree with the rule mode.
pub fn build_backend(cfg: &RunConfig, gold: &[(EntityId, EntityId)]) -> Result<Arc<dyn ChatBackend>> {
    let b = &cfg.backend;
    Ok(match b.kind {
        BackendKind::Http => Arc::new(HttpBackend::from_env(
            b.base_url.clone(),
            b.model.clone(),
            Duration::from_secs(b.timeout_secs),
        )),
        BackendKind::Replay => {
            let path = b
                .transcript
                .as_ref()
                .ok_or_else(|| Error::Config("the replay backend needs backend.transcript".into()))?;
            Arc::new(ScriptedBackend::from_transcript(b.model.clone(), path)?)
        }
        BackendKind::Oracle => {
            let mut oc = b.oracle.clone();
            oc.threshold = cfg.align.threshold;
            oc.min_gap = cfg.align.min_gap;
            Arc::new(OracleBackend::new(gold.iter().copied(), oc).with_model(b.model.clone()))
        }
    })
}

pub fn build_client(cfg: &RunConfig, backend: Arc<dyn ChatBackend>) -> ChatClient {
    ChatClient::new(backend, cfg.backend.retry, cfg.backend.max_in_flight)
        .with_decoding(cfg.backend.temperature, cfg.backend.max_tokens)
}

pub struct AlignOutcome {
    pub results: Vec<AlignmentResult>,
    pub report: EvalReport,
    pub results_path: PathBuf,
    pub transcript_path: PathBuf,
}

/// Runs the alignment loop over the test targets and writes results,
/// transcript, description cache and reports into the output directory.
pub fn align(cfg: &RunConfig) -> Result<AlignOutcome> {
    let ds = load_dataset(cfg)?;
    let ck = load_checkpoint(&cfg.output_dir, &ds)?;
    let index = CslsIndex::new(&ck.left, &ck.right, &cfg.csls)?;
    // The replay source is read in full before the new transcript is opened,
    // so both may name the same file.
    let backend = build_backend(cfg, &ds.anchors.pairs)?;
    backend.probe().map_err(|e| {
        log::error!("backend {} is unreachable: {e}", cfg.backend.base_url);
        Error::Backend(e)
    })?;
    let transcript_path = cfg.output_dir.join(TRANSCRIPT);
    let client = build_client(cfg, backend).with_transcript(TranscriptWriter::create(&transcript_path)?);
    let cache_path = cfg.description_cache_path();
    let cache = DescriptionCache::load(&cache_path)?;

    let aligner = Aligner::new(&ds.kg1, &ds.kg2, &index, &client, &cache, &cfg.align)?;
    let targets: Vec<EntityId> = ck.test.iter().map(|(t, _)| *t).collect();
    let results = aligner.align_all(&targets)?;

    cache.save(&cache_path)?;
    let results_path = cfg.output_dir.join(RESULTS);
    write_results(&results_path, &results)?;
    let mut rep = report(&results, &ck.test, cfg.align.effective_schedule().len(), &cfg.fingerprint());
    rep.shared_tokens = client.ledger().for_target(None).total_tokens();
    rep.write(&cfg.output_dir)?;
    Ok(AlignOutcome {
        results,
        report: rep,
        results_path,
        transcript_path,
    })
}

/// Rebuilds the report from a results file and a gold pair file.
pub fn evaluate(results: &Path, gold: &Path, rounds: Option<usize>, fingerprint: &str) -> Result<EvalReport> {
    let results = read_results(results)?;
    let gold = read_pairs(gold)?;
    let rounds = rounds.unwrap_or_else(|| results.iter().map(|r| r.rounds_used).max().unwrap_or(0));
    Ok(report(&results, &gold, rounds, fingerprint))
}

/// Noise sweep over the trained embeddings; the full loop uses a fresh
/// client per noise level so every level starts from the same state.
pub fn sweep(cfg: &RunConfig, ratios: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let ds = load_dataset(cfg)?;
    let ck = load_checkpoint(&cfg.output_dir, &ds)?;
    let targets: Vec<EntityId> = ck.test.iter().map(|(t, _)| *t).collect();
    let widest = *cfg.align.schedule.last().expect("validated schedule");
    let full_loop = |index: &CslsIndex| -> Result<Vec<AlignmentResult>> {
        let client = build_client(cfg, build_backend(cfg, &ds.anchors.pairs)?);
        let cache = DescriptionCache::new();
        Aligner::new(&ds.kg1, &ds.kg2, index, &client, &cache, &cfg.align)?.align_all(&targets)
    };
    noise_sweep(&ck.left, &ck.right, &ds.kg1, &ds.kg2, &ck.test, ratios, seeds, &cfg.csls, widest, &full_loop)
}
