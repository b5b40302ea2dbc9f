//! Pluggable external services: the segment context scorer, the query
//! decomposer and the image search client. Each has a deterministic offline
//! implementation and a generic JSON-over-HTTP bridge.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Duration;

use base64::Engine as _;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DecomposedQuery;
use crate::metadata::MetaBundle;
use crate::text::tokenize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdapterError {
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("decomposition failed: {0}")]
    DecompositionFailed(String),
    #[error("no image search fixture directory configured and HTTP search disabled")]
    FixtureMissing,
    #[error("image search unavailable: {0}")]
    SearchUnavailable(String),
}

fn http_client(timeout: Duration) -> Result<reqwest::blocking::Client, String> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// Context scoring

/// Judges how well a segment's metadata fits the query context and events.
/// Returns a raw score nominally in 0..=100; callers clamp.
pub trait ContextScorer: Send + Sync {
    fn score(&self, meta: &MetaBundle, context: &str, events: &[String]) -> Result<i64, AdapterError>;
}

/// Token-overlap scorer: the percentage of distinct query tokens (context and
/// events) that appear in the segment's captions or speech.
pub fn stub_context_score(meta: &MetaBundle, context: &str, events: &[String]) -> i64 {
    let meta_tokens: BTreeSet<String> = [&meta.start_caption, &meta.end_caption, &meta.speech]
        .iter()
        .flat_map(|s| tokenize(s))
        .collect();
    let query_tokens: BTreeSet<String> = std::iter::once(context)
        .chain(events.iter().map(String::as_str))
        .flat_map(tokenize)
        .collect();
    let hits = query_tokens.intersection(&meta_tokens).count();
    (100.0 * hits as f64 / query_tokens.len().max(1) as f64).round() as i64
}

#[derive(Debug, Clone, Default)]
pub struct StubContextScorer;

impl ContextScorer for StubContextScorer {
    fn score(&self, meta: &MetaBundle, context: &str, events: &[String]) -> Result<i64, AdapterError> {
        Ok(stub_context_score(meta, context, events))
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    meta: &'a MetaBundle,
    context: &'a str,
    events: &'a [String],
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

/// `POST {"meta":{..},"context":"..","events":[..]} -> {"score": 0-100}`
pub struct HttpContextScorer {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpContextScorer {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self, AdapterError> {
        Ok(Self {
            url: url.into(),
            client: http_client(timeout).map_err(AdapterError::ScorerUnavailable)?,
        })
    }
}

impl ContextScorer for HttpContextScorer {
    fn score(&self, meta: &MetaBundle, context: &str, events: &[String]) -> Result<i64, AdapterError> {
        let resp: ScoreResponse = self
            .client
            .post(&self.url)
            .json(&ScoreRequest { meta, context, events })
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| AdapterError::ScorerUnavailable(e.to_string()))?;
        if !resp.score.is_finite() {
            return Err(AdapterError::ScorerUnavailable("non-finite score".into()));
        }
        Ok(resp.score.round() as i64)
    }
}

// ---------------------------------------------------------------------------
// Query decomposition

pub trait QueryDecomposer: Send + Sync {
    fn decompose(&self, raw: &str) -> Result<DecomposedQuery, AdapterError>;
}

pub const DEFAULT_MARKERS: &[&str] = &["then", "after that", "next", ";"];

/// Splits a query on ordered connectives. Text before the first `:` is the
/// context; the remaining clauses are the events in order. Numbered prefixes
/// such as `1.` or `2)` also start a new clause.
#[derive(Debug, Clone)]
pub struct RuleDecomposer {
    splitter: Regex,
}

impl Default for RuleDecomposer {
    fn default() -> Self {
        Self::with_markers(DEFAULT_MARKERS)
    }
}

impl RuleDecomposer {
    pub fn with_markers(markers: &[&str]) -> Self {
        let mut alts: Vec<String> = markers
            .iter()
            .map(|m| {
                let escaped = regex::escape(m.trim());
                if m.chars().all(|c| c.is_alphanumeric() || c.is_whitespace()) {
                    format!(r"\b{}\b", escaped.replace(' ', r"\s+"))
                } else {
                    escaped
                }
            })
            .collect();
        alts.push(r"(?:^|\s)\d+[.)](?:\s|$)".to_string());
        let splitter = Regex::new(&format!("(?i)(?:{})", alts.join("|"))).expect("valid marker regex");
        Self { splitter }
    }
}

fn clean_clause(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| c == ',' || c == '.' || c.is_whitespace())
        .trim()
        .to_string()
}

pub fn rule_decompose(raw: &str) -> Result<DecomposedQuery, AdapterError> {
    static DEFAULT: OnceLock<RuleDecomposer> = OnceLock::new();
    DEFAULT.get_or_init(RuleDecomposer::default).decompose(raw)
}

impl QueryDecomposer for RuleDecomposer {
    fn decompose(&self, raw: &str) -> Result<DecomposedQuery, AdapterError> {
        if raw.trim().is_empty() {
            return Err(AdapterError::DecompositionFailed("query is blank".into()));
        }
        let (context, body) = match raw.split_once(':') {
            Some((c, b)) => (clean_clause(c), b),
            None => (String::new(), raw),
        };
        let events: Vec<String> = self
            .splitter
            .split(body)
            .map(clean_clause)
            .filter(|s| !s.is_empty())
            .collect();
        if events.is_empty() {
            return Err(AdapterError::DecompositionFailed(format!(
                "no event clauses in {raw:?}"
            )));
        }
        DecomposedQuery::new(context, events).map_err(|e| AdapterError::DecompositionFailed(e.to_string()))
    }
}

#[derive(Serialize)]
struct DecomposeRequest<'a> {
    query: &'a str,
}

#[derive(Deserialize)]
struct DecomposeResponse {
    #[serde(default)]
    context: String,
    events: Vec<String>,
}

/// `POST {"query":".."} -> {"context":"..","events":[..]}`
pub struct HttpDecomposer {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpDecomposer {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self, AdapterError> {
        Ok(Self {
            url: url.into(),
            client: http_client(timeout).map_err(AdapterError::DecompositionFailed)?,
        })
    }
}

impl QueryDecomposer for HttpDecomposer {
    fn decompose(&self, raw: &str) -> Result<DecomposedQuery, AdapterError> {
        let resp: DecomposeResponse = self
            .client
            .post(&self.url)
            .json(&DecomposeRequest { query: raw })
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| AdapterError::DecompositionFailed(e.to_string()))?;
        DecomposedQuery::new(resp.context, resp.events)
            .map_err(|e| AdapterError::DecompositionFailed(e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Image search

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub image: Vec<u8>,
    pub source_url: String,
}

pub trait ImageSearchClient: Send + Sync {
    fn search(&self, text: &str, k: usize) -> Result<Vec<ImageResult>, AdapterError>;
}

/// Offline image search backed by a directory with one subdirectory per
/// query token, e.g. `bridge/01.png`. Results are the union over the query's
/// tokens in token order, files sorted by name within each token.
#[derive(Debug, Clone)]
pub struct FixtureImageSearch {
    dir: PathBuf,
}

impl FixtureImageSearch {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl ImageSearchClient for FixtureImageSearch {
    fn search(&self, text: &str, k: usize) -> Result<Vec<ImageResult>, AdapterError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for token in tokenize(text) {
            let sub = self.dir.join(&token);
            let Ok(entries) = fs::read_dir(&sub) else {
                continue;
            };
            let mut files: Vec<PathBuf> = entries
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for path in files {
                if out.len() >= k {
                    return Ok(out);
                }
                if !seen.insert(path.clone()) {
                    continue;
                }
                let image = fs::read(&path)
                    .map_err(|e| AdapterError::SearchUnavailable(format!("{}: {e}", path.display())))?;
                out.push(ImageResult {
                    image,
                    source_url: format!("fixture://{}/{}", token, path.file_name().unwrap().to_string_lossy()),
                });
            }
        }
        out.truncate(k);
        Ok(out)
    }
}

#[derive(Serialize)]
struct ImageSearchRequest<'a> {
    query: &'a str,
    k: usize,
}

#[derive(Deserialize)]
struct ImageSearchResponse {
    results: Vec<ImageSearchItem>,
}

#[derive(Deserialize)]
struct ImageSearchItem {
    image_b64: String,
    url: String,
}

/// `POST {"query":"..","k":n} -> {"results":[{"image_b64":"..","url":".."}]}`
pub struct HttpImageSearch {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpImageSearch {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self, AdapterError> {
        Ok(Self {
            url: url.into(),
            client: http_client(timeout).map_err(AdapterError::SearchUnavailable)?,
        })
    }
}

impl ImageSearchClient for HttpImageSearch {
    fn search(&self, text: &str, k: usize) -> Result<Vec<ImageResult>, AdapterError> {
        let resp: ImageSearchResponse = self
            .client
            .post(&self.url)
            .json(&ImageSearchRequest { query: text, k })
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| AdapterError::SearchUnavailable(e.to_string()))?;
        resp.results
            .into_iter()
            .take(k)
            .map(|r| {
                let image = base64::engine::general_purpose::STANDARD
                    .decode(r.image_b64)
                    .map_err(|e| AdapterError::SearchUnavailable(format!("bad base64: {e}")))?;
                Ok(ImageResult {
                    image,
                    source_url: r.url,
                })
            })
            .collect()
    }
}

/// How the image search client is chosen.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageSearchConfig {
    #[default]
    None,
    Fixture { dir: PathBuf },
    Http { url: String },
}

pub fn build_image_search(
    cfg: &ImageSearchConfig,
    timeout: Duration,
) -> Result<Box<dyn ImageSearchClient>, AdapterError> {
    match cfg {
        ImageSearchConfig::None => Err(AdapterError::FixtureMissing),
        ImageSearchConfig::Fixture { dir } => Ok(Box::new(FixtureImageSearch::new(dir))),
        ImageSearchConfig::Http { url } => Ok(Box::new(HttpImageSearch::new(url.clone(), timeout)?)),
    }
}
