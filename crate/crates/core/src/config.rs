//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::AlignConfig;
use crate::error::{Error, Result};
use crate::features::{CslsConfig, FeatureConfig};
use crate::kg::{KgFiles, DEFAULT_TRAIN_RATIO};
use crate::llm::{OracleConfig, RetryPolicy, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE};
use crate::prompt::templates;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory with `triples_N`, `ent_ids_N`, `rel_ids_N` and `ref_ent_ids`.
    pub dir: PathBuf,
    /// Triples carry start and end times.
    #[serde(default)]
    pub temporal: bool,
    /// Gold pairs; defaults to `ref_ent_ids` in `dir`.
    #[serde(default)]
    pub pairs: Option<PathBuf>,
    /// Pre-computed name vectors for the two graphs. Without them names are
    /// encoded with the hashing n-gram encoder.
    #[serde(default)]
    pub name_vectors: Option<[PathBuf; 2]>,
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
    #[serde(default = "default_train_ratio")]
    pub train_ratio: f64,
}

fn default_split_seed() -> u64 {
    1
}

fn default_train_ratio() -> f64 {
    DEFAULT_TRAIN_RATIO
}

impl DataConfig {
    pub fn kg_files(&self, side: u8) -> KgFiles {
        KgFiles::in_dir(&self.dir, side)
    }

    pub fn pairs_path(&self) -> PathBuf {
        self.pairs.clone().unwrap_or_else(|| self.dir.join("ref_ent_ids"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// OpenAI-style chat-completions server.
    Http,
    /// Replies replayed from a transcript file.
    Replay,
    /// Answers derived from the gold pairs; for testing the loop.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    /// Transcript replayed by the `replay` kind.
    pub transcript: Option<PathBuf>,
    pub oracle: OracleConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Oracle,
            base_url: "http://localhost:8000/v1".into(),
            model: "oracle".into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            max_in_flight: 4,
            timeout_secs: 120,
            retry: RetryPolicy::default(),
            transcript: None,
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub csls: CslsConfig,
    #[serde(default)]
    pub align: AlignConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    /// Where checkpoints, results and reports go.
    pub output_dir: PathBuf,
    /// Description cache file; defaults to `descriptions.csv` in `output_dir`.
    #[serde(default)]
    pub description_cache: Option<PathBuf>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and validates a config file. Relative paths are taken relative
    /// to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.data.dir);
        if let Some(p) = &mut self.data.pairs {
            resolve(base, p);
        }
        if let Some(ps) = &mut self.data.name_vectors {
            ps.iter_mut().for_each(|p| resolve(base, p));
        }
        if let Some(p) = &mut self.backend.transcript {
            resolve(base, p);
        }
        resolve(base, &mut self.output_dir);
        if let Some(p) = &mut self.description_cache {
            resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.data.train_ratio > 0.0 && self.data.train_ratio < 1.0) {
            return Err(Error::Config("data.train_ratio must lie in (0, 1)".into()));
        }
        self.features.validate()?;
        if self.csls.neighborhood_k == 0 {
            return Err(Error::Config("csls.neighborhood_k must be at least 1".into()));
        }
        self.align.validate()?;
        let b = &self.backend;
        if !(0.0..=2.0).contains(&b.temperature) {
            return Err(Error::Config("backend.temperature must lie in [0, 2]".into()));
        }
        if b.max_in_flight == 0 || b.max_tokens == 0 {
            return Err(Error::Config("backend.max_in_flight and backend.max_tokens must be at least 1".into()));
        }
        if b.kind == BackendKind::Replay && b.transcript.is_none() {
            return Err(Error::Config("the replay backend needs backend.transcript".into()));
        }
        Ok(())
    }

    pub fn description_cache_path(&self) -> PathBuf {
        self.description_cache
            .clone()
            .unwrap_or_else(|| self.output_dir.join("descriptions.csv"))
    }

    /// SHA-256 over every setting and the prompt templates. Paths are
    /// excluded so the same run in another directory has the same value.
    pub fn fingerprint(&self) -> String {
        let mut settings = self.clone();
        settings.data.dir = PathBuf::new();
        settings.data.pairs = None;
        settings.data.name_vectors = settings.data.name_vectors.as_ref().map(|_| [PathBuf::new(), PathBuf::new()]);
        settings.output_dir = PathBuf::new();
        settings.description_cache = None;
        settings.backend.transcript = None;
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&settings).expect("config serializes"));
        h.update(templates::templates_digest().as_bytes());
        hex::encode(h.finalize())
    }
}
