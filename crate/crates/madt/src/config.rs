//! Service and CLI configuration: a TOML or JSON file, then `MADT_*`
//! environment overrides, then command-line flags (applied by the caller).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use madt_core::adapters::ImageSearchConfig;
use madt_core::dedup::DedupConfig;
use madt_core::metadata::{JoinWeights, DEFAULT_TAU_ASR};
use madt_core::TrakeConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("invalid value for {key}: {value:?}")]
    Env { key: String, value: String },
}

/// Where query embeddings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderConfig {
    /// Hashed bag-of-words vectors, dimension taken from the corpus.
    Stub { seed: u64 },
    /// Vectors looked up by text (or `img:<sha256>` key) in a KFE file.
    Precomputed { file: PathBuf },
    Http { url: String },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Stub { seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerConfig {
    #[default]
    Stub,
    Http {
        url: String,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecomposerConfig {
    #[default]
    Rule,
    Http {
        url: String,
    },
    /// Raw queries are rejected; callers must pass events explicitly.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub corpus_dir: Option<PathBuf>,
    pub embedder: EmbedderConfig,
    pub scorer: ScorerConfig,
    pub decomposer: DecomposerConfig,
    pub image_search: ImageSearchConfig,
    /// `{dir}/{video}/{frame:04}.png|jpg`
    pub thumbnails_dir: Option<PathBuf>,
    pub trake: TrakeConfig,
    pub join: JoinWeights,
    pub dedup: DedupConfig,
    pub tau_asr: f64,
    /// Per-request timeout for external adapters, seconds.
    pub timeout_s: f64,
    /// Lifetime of image-search choice sets and selected images, seconds.
    pub session_ttl_s: u64,
    pub selection_limit: usize,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            corpus_dir: None,
            embedder: EmbedderConfig::default(),
            scorer: ScorerConfig::default(),
            decomposer: DecomposerConfig::default(),
            image_search: ImageSearchConfig::default(),
            thumbnails_dir: None,
            trake: TrakeConfig::default(),
            join: JoinWeights::default(),
            dedup: DedupConfig::default(),
            tau_asr: DEFAULT_TAU_ASR,
            timeout_s: 10.0,
            session_ttl_s: 30 * 60,
            selection_limit: 100,
        }
    }
}

fn parse_env<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::Env {
        key: key.to_string(),
        value: value.to_string(),
    })
}

impl AppConfig {
    /// Reads a `.toml` or `.json` file (decided by extension; TOML otherwise).
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |msg: String| ConfigError::Parse {
            path: path.to_path_buf(),
            msg,
        };
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))
        }
    }

    /// File (if any) plus overrides from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_env(std::env::vars())?;
        Ok(cfg)
    }

    /// Applies recognised `MADT_*` variables; others are ignored.
    pub fn apply_env(
        &mut self,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<(), ConfigError> {
        for (key, value) in vars {
            let k = key.as_str();
            let v = value.as_str();
            match k {
                "MADT_CORPUS_DIR" => self.corpus_dir = Some(PathBuf::from(v)),
                "MADT_THUMBNAILS_DIR" => self.thumbnails_dir = Some(PathBuf::from(v)),
                "MADT_EMBEDDER_SEED" => {
                    self.embedder = EmbedderConfig::Stub {
                        seed: parse_env(k, v)?,
                    }
                }
                "MADT_EMBEDDINGS_FILE" => {
                    self.embedder = EmbedderConfig::Precomputed {
                        file: PathBuf::from(v),
                    }
                }
                "MADT_EMBEDDER_URL" => {
                    self.embedder = EmbedderConfig::Http { url: v.to_string() }
                }
                "MADT_SCORER_URL" => self.scorer = ScorerConfig::Http { url: v.to_string() },
                "MADT_DECOMPOSER_URL" => {
                    self.decomposer = DecomposerConfig::Http { url: v.to_string() }
                }
                "MADT_IMAGE_SEARCH_DIR" => {
                    self.image_search = ImageSearchConfig::Fixture {
                        dir: PathBuf::from(v),
                    }
                }
                "MADT_IMAGE_SEARCH_URL" => {
                    self.image_search = ImageSearchConfig::Http { url: v.to_string() }
                }
                "MADT_TAU" => self.trake.tau_s = parse_env(k, v)?,
                "MADT_ALPHA" => self.trake.alpha = parse_env(k, v)?,
                "MADT_TOP_M" => self.trake.top_m = parse_env(k, v)?,
                "MADT_BEAM" => self.trake.beam_width = parse_env(k, v)?,
                "MADT_KNN_K" => self.trake.knn_k = parse_env(k, v)?,
                "MADT_MAX_INFLIGHT" => self.trake.max_inflight = parse_env(k, v)?,
                "MADT_PHASH_THRESHOLD" => self.dedup.phash_threshold = parse_env(k, v)?,
                "MADT_COS_THRESHOLD" => self.dedup.cos_threshold = parse_env(k, v)?,
                "MADT_TAU_ASR" => self.tau_asr = parse_env(k, v)?,
                "MADT_TIMEOUT_S" => self.timeout_s = parse_env(k, v)?,
                "MADT_SESSION_TTL_S" => self.session_ttl_s = parse_env(k, v)?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s.max(0.001))
    }

    pub fn session_ttl(&self) -> Duration {
        Duration::from_secs(self.session_ttl_s)
    }
}
