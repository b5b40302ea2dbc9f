//! Request handling shared by the CLI and the HTTP service, so both surfaces
//! produce identical results for identical inputs.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use madt_core::adapters::{
    build_image_search, AdapterError, ContextScorer, HttpContextScorer, HttpDecomposer,
    ImageSearchClient, QueryDecomposer, RuleDecomposer, StubContextScorer,
};
use madt_core::embedding::{
    load_precomputed, EmbeddingError, EmbeddingProvider, HttpEmbedder, StubEmbedder,
};
use madt_core::index::IndexError;
use madt_core::ingest::IngestError;
use madt_core::metadata::{JoinWeights, MetadataError};
use madt_core::trake::{trake, TrakeDeps, TrakeError, TrakeQuery};
use madt_core::{
    Corpus, DecomposedQuery, Embedding, Execution, KeyframeId, MetadataFilter, TrakeConfig,
    TrakeResult, VideoId,
};
use serde::{Deserialize, Serialize};

use crate::config::{AppConfig, DecomposerConfig, EmbedderConfig, ScorerConfig};

/// Failure categories; each maps to one HTTP status and one exit code.
#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("{0}")]
    BadRequest(String),
    #[error("no corpus loaded")]
    NoCorpus,
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("unknown image_key {0:?}")]
    UnknownImageKey(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("expired or unknown: {0}")]
    Gone(String),
    #[error("adapter unavailable: {0}")]
    Unavailable(String),
    #[error("unprocessable: {0}")]
    Unprocessable(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl EngineError {
    pub fn http_status(&self) -> u16 {
        match self {
            EngineError::BadRequest(_) => 400,
            EngineError::NoCorpus => 409,
            EngineError::Corpus(_) => 400,
            EngineError::UnknownImageKey(_) | EngineError::Unprocessable(_) => 422,
            EngineError::NotFound(_) => 404,
            EngineError::Gone(_) => 410,
            EngineError::Unavailable(_) => 503,
            EngineError::Internal(_) => 500,
        }
    }

    /// 2: usage, 3: corpus, 4: adapter, 1: anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            EngineError::BadRequest(_)
            | EngineError::UnknownImageKey(_)
            | EngineError::NotFound(_)
            | EngineError::Gone(_)
            | EngineError::Unprocessable(_) => 2,
            EngineError::NoCorpus | EngineError::Corpus(_) => 3,
            EngineError::Unavailable(_) => 4,
            EngineError::Internal(_) => 1,
        }
    }
}

impl From<EmbeddingError> for EngineError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::Unavailable(_) => EngineError::Unavailable(e.to_string()),
            EmbeddingError::UnknownKey(_) => EngineError::Unprocessable(e.to_string()),
            _ => EngineError::Internal(e.to_string()),
        }
    }
}

impl From<AdapterError> for EngineError {
    fn from(e: AdapterError) -> Self {
        EngineError::Unavailable(e.to_string())
    }
}

impl From<IndexError> for EngineError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::InvalidK => EngineError::BadRequest("k must be positive".into()),
            IndexError::EmptyIndex => EngineError::NoCorpus,
            IndexError::UnknownVideo(_) | IndexError::UnknownKeyframe(_) => {
                EngineError::NotFound(e.to_string())
            }
            _ => EngineError::Internal(e.to_string()),
        }
    }
}

impl From<MetadataError> for EngineError {
    fn from(e: MetadataError) -> Self {
        match e {
            MetadataError::EmptyFilter | MetadataError::InvalidWeights(..) => {
                EngineError::BadRequest(e.to_string())
            }
            _ => EngineError::Internal(e.to_string()),
        }
    }
}

impl From<TrakeError> for EngineError {
    fn from(e: TrakeError) -> Self {
        match e {
            TrakeError::TooFewEvents(_) | TrakeError::InvalidConfig(_) | TrakeError::Query(_) => {
                EngineError::BadRequest(e.to_string())
            }
            TrakeError::DecomposerMissing | TrakeError::DecompositionFailed(_) => {
                EngineError::Unavailable(e.to_string())
            }
            TrakeError::EmptyIndex => EngineError::NoCorpus,
            TrakeError::Embedding(inner) => inner.into(),
            TrakeError::Index(inner) => inner.into(),
            TrakeError::NoFeasiblePath => EngineError::Internal(e.to_string()),
        }
    }
}

impl From<IngestError> for EngineError {
    fn from(e: IngestError) -> Self {
        EngineError::Corpus(e.to_string())
    }
}

pub fn build_embedder(
    cfg: &AppConfig,
    dim: usize,
) -> Result<Box<dyn EmbeddingProvider>, EngineError> {
    let provider: Box<dyn EmbeddingProvider> = match &cfg.embedder {
        EmbedderConfig::Stub { seed } => Box::new(StubEmbedder::new(dim, *seed)?),
        EmbedderConfig::Precomputed { file } => Box::new(load_precomputed(file)?),
        EmbedderConfig::Http { url } => Box::new(HttpEmbedder::new(url.clone(), dim, cfg.timeout())?),
    };
    if provider.dimension() != dim {
        return Err(EngineError::Corpus(format!(
            "embedder produces dimension {} but the corpus has {dim}",
            provider.dimension()
        )));
    }
    Ok(provider)
}

/// External collaborators that do not depend on the loaded corpus.
pub struct Adapters {
    pub scorer: Box<dyn ContextScorer>,
    pub decomposer: Option<Box<dyn QueryDecomposer>>,
    /// `Err` when image search is not configured or cannot be built.
    pub image_search: Result<Box<dyn ImageSearchClient>, AdapterError>,
}

impl Adapters {
    pub fn from_config(cfg: &AppConfig) -> Result<Self, EngineError> {
        let scorer: Box<dyn ContextScorer> = match &cfg.scorer {
            ScorerConfig::Stub => Box::new(StubContextScorer),
            ScorerConfig::Http { url } => Box::new(HttpContextScorer::new(url.clone(), cfg.timeout())?),
        };
        let decomposer: Option<Box<dyn QueryDecomposer>> = match &cfg.decomposer {
            DecomposerConfig::Rule => Some(Box::new(RuleDecomposer::default())),
            DecomposerConfig::Http { url } => {
                Some(Box::new(HttpDecomposer::new(url.clone(), cfg.timeout())?))
            }
            DecomposerConfig::None => None,
        };
        Ok(Self {
            scorer,
            decomposer,
            image_search: build_image_search(&cfg.image_search, cfg.timeout()),
        })
    }
}

/// An immutable loaded corpus together with the embedder matching its
/// dimension. Swapped as a whole on reload.
pub struct Snapshot {
    pub dir: PathBuf,
    pub corpus: Corpus,
    pub embedder: Box<dyn EmbeddingProvider>,
}

impl Snapshot {
    pub fn open(dir: impl AsRef<Path>, cfg: &AppConfig, exec: Execution) -> Result<Self, EngineError> {
        let dir = dir.as_ref();
        let mut corpus = Corpus::load(dir)?;
        corpus.index = corpus.index.with_execution(exec);
        let embedder = build_embedder(cfg, corpus.dim())?;
        Ok(Self {
            dir: dir.to_path_buf(),
            corpus,
            embedder,
        })
    }

    pub fn from_corpus(corpus: Corpus, embedder: Box<dyn EmbeddingProvider>) -> Self {
        Self {
            dir: PathBuf::new(),
            corpus,
            embedder,
        }
    }

    /// Stored embedding of a corpus keyframe given as a canonical id.
    pub fn keyframe_embedding(&self, key: &str) -> Option<Embedding> {
        let id = KeyframeId::parse(key).ok()?;
        self.corpus.index.embedding(&id)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Text,
    ImageRef,
}

fn default_k() -> usize {
    10
}

/// Keyframe search: free text or a reference image, with an optional hard
/// metadata filter, a soft metadata boost and include/exclude id sets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    #[serde(default)]
    pub mode: SearchMode,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub image_key: Option<String>,
    #[serde(default)]
    pub filter: Option<MetadataFilter>,
    #[serde(default)]
    pub boost: Option<MetadataFilter>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub include_ids: Option<Vec<KeyframeId>>,
    #[serde(default)]
    pub exclude_ids: Vec<KeyframeId>,
    #[serde(default)]
    pub weights: Option<JoinWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: KeyframeId,
    pub video: VideoId,
    pub frame_index: u32,
    pub timestamp_s: f64,
    pub similarity: f64,
    pub meta_relevance: f64,
    pub score: f64,
    /// Relative URL of the thumbnail, or `None` when only a placeholder exists.
    pub thumbnail: Option<String>,
}

pub fn thumbnail_url(thumbs: Option<&Path>, id: &KeyframeId) -> Option<String> {
    thumbnail_file(thumbs?, id).map(|_| format!("/thumbnails/{}/{}", id.video, id.frame_index))
}

pub fn thumbnail_file(dir: &Path, id: &KeyframeId) -> Option<PathBuf> {
    let vdir = dir.join(id.video.as_str());
    ["png", "jpg", "jpeg"]
        .iter()
        .map(|ext| vdir.join(format!("{:04}.{ext}", id.frame_index)))
        .find(|p| p.is_file())
}

/// Rows allowed by the filter and id sets; `None` means every row.
fn restriction(
    snap: &Snapshot,
    req: &SearchRequest,
) -> Result<Option<HashSet<KeyframeId>>, EngineError> {
    let index = &snap.corpus.index;
    let mut allowed: Option<HashSet<KeyframeId>> = match req.filter.as_ref().filter(|f| !f.is_empty()) {
        Some(f) => Some(
            snap.corpus
                .store
                .filter(index.keyframes().iter().map(|k| &k.id), f)?
                .into_iter()
                .collect(),
        ),
        None => None,
    };
    if let Some(include) = &req.include_ids {
        let include: HashSet<KeyframeId> = include.iter().cloned().collect();
        allowed = Some(match allowed {
            Some(a) => a.intersection(&include).cloned().collect(),
            None => include,
        });
    }
    if !req.exclude_ids.is_empty() {
        let mut a = allowed
            .unwrap_or_else(|| index.keyframes().iter().map(|k| k.id.clone()).collect());
        for id in &req.exclude_ids {
            a.remove(id);
        }
        allowed = Some(a);
    }
    Ok(allowed)
}

pub fn search(
    snap: &Snapshot,
    cfg: &AppConfig,
    req: &SearchRequest,
    session_image: &dyn Fn(&str) -> Option<Embedding>,
) -> Result<Vec<SearchHit>, EngineError> {
    if req.k == 0 {
        return Err(EngineError::BadRequest("k must be positive".into()));
    }
    let query = match req.mode {
        SearchMode::Text => {
            if req.image_key.is_some() {
                return Err(EngineError::BadRequest("text mode takes no image_key".into()));
            }
            let text = req.text.as_deref().map(str::trim).unwrap_or("");
            if text.is_empty() {
                return Err(EngineError::BadRequest("text mode requires non-empty text".into()));
            }
            snap.embedder.embed_text(text)?
        }
        SearchMode::ImageRef => {
            if req.text.is_some() {
                return Err(EngineError::BadRequest("image_ref mode takes no text".into()));
            }
            let key = req
                .image_key
                .as_deref()
                .ok_or_else(|| EngineError::BadRequest("image_ref mode requires image_key".into()))?;
            session_image(key)
                .or_else(|| snap.keyframe_embedding(key))
                .ok_or_else(|| EngineError::UnknownImageKey(key.to_string()))?
        }
    };
    let weights = match req.weights {
        Some(w) => JoinWeights::new(w.sim, w.meta)?,
        None => cfg.join,
    };
    let index = &snap.corpus.index;
    if index.is_empty() {
        return Err(EngineError::NoCorpus);
    }
    let allowed = restriction(snap, req)?;
    if allowed.as_ref().is_some_and(|a| a.is_empty()) {
        return Ok(Vec::new());
    }
    let hits = index.search(&query, req.k, allowed.as_ref())?;
    // the filter already restricted the scan; the join only scores
    let joined = snap
        .corpus
        .store
        .hybrid_join(&hits, None, req.boost.as_ref().or(req.filter.as_ref()), weights)?;
    let thumbs = thumbnails_dir(cfg, snap);
    Ok(joined
        .into_iter()
        .map(|h| {
            let timestamp_s = index.timestamp(&h.keyframe).unwrap_or(f64::NAN);
            SearchHit {
                thumbnail: thumbnail_url(thumbs.as_deref(), &h.keyframe),
                video: h.keyframe.video.clone(),
                frame_index: h.keyframe.frame_index,
                id: h.keyframe,
                timestamp_s,
                similarity: h.similarity,
                meta_relevance: h.meta_relevance,
                score: h.final_score,
            }
        })
        .collect())
}

/// Configured thumbnail directory, else `thumbnails/` inside the corpus.
pub fn thumbnails_dir(cfg: &AppConfig, snap: &Snapshot) -> Option<PathBuf> {
    cfg.thumbnails_dir.clone().or_else(|| {
        let d = snap.dir.join("thumbnails");
        d.is_dir().then_some(d)
    })
}

/// A temporal query: explicit context and events, or a raw query for the
/// decomposer. Unset parameters fall back to the configured defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrakeRequest {
    #[serde(default)]
    pub context: String,
    #[serde(default)]
    pub events: Vec<String>,
    #[serde(default)]
    pub query: Option<String>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub top_m: Option<usize>,
    #[serde(default)]
    pub beam: Option<usize>,
    #[serde(default)]
    pub knn_k: Option<usize>,
}

impl TrakeRequest {
    pub fn effective_config(&self, base: &TrakeConfig) -> Result<TrakeConfig, EngineError> {
        let mut c = *base;
        if let Some(v) = self.tau {
            c.tau_s = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.top_m {
            c.top_m = v;
        }
        if let Some(v) = self.beam {
            c.beam_width = v;
        }
        if let Some(v) = self.knn_k {
            c.knn_k = v;
        }
        c.validate()?;
        Ok(c)
    }

    fn query(&self) -> Result<TrakeQuery, EngineError> {
        if !self.events.is_empty() {
            let q = DecomposedQuery::new(self.context.clone(), self.events.clone())
                .map_err(|e| EngineError::BadRequest(e.to_string()))?;
            return Ok(TrakeQuery::Structured(q));
        }
        match self.query.as_deref().map(str::trim) {
            Some(raw) if !raw.is_empty() => Ok(TrakeQuery::Raw(raw.to_string())),
            _ => Err(EngineError::BadRequest(
                "at least one event (or a raw query) is required".into(),
            )),
        }
    }
}

pub fn run_trake(
    snap: &Snapshot,
    adapters: &Adapters,
    cfg: &AppConfig,
    req: &TrakeRequest,
) -> Result<TrakeResult, EngineError> {
    let tcfg = req.effective_config(&cfg.trake)?;
    let query = req.query()?;
    let deps = TrakeDeps {
        index: &snap.corpus.index,
        store: &snap.corpus.store,
        embedder: snap.embedder.as_ref(),
        scorer: adapters.scorer.as_ref(),
        decomposer: adapters.decomposer.as_deref(),
    };
    Ok(trake(query, &tcfg, &deps)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilmstripFrame {
    pub id: KeyframeId,
    pub frame_index: u32,
    pub timestamp_s: f64,
    pub thumbnail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Filmstrip {
    pub video: VideoId,
    pub frames: Vec<FilmstripFrame>,
}

/// Neighbouring keyframes of `around` (default: the first keyframe).
pub fn filmstrip(
    snap: &Snapshot,
    cfg: &AppConfig,
    video: &VideoId,
    around: Option<u32>,
    span: usize,
) -> Result<Filmstrip, EngineError> {
    let index = &snap.corpus.index;
    let rows = index
        .video_rows(video)
        .ok_or_else(|| EngineError::NotFound(format!("video {video}")))?;
    let around = around.unwrap_or_else(|| index.keyframe(rows[0]).id.frame_index);
    let thumbs = thumbnails_dir(cfg, snap);
    let frames = index
        .filmstrip(video, around, span)?
        .into_iter()
        .map(|k| FilmstripFrame {
            id: k.id.clone(),
            frame_index: k.id.frame_index,
            timestamp_s: k.timestamp_s,
            thumbnail: thumbnail_url(thumbs.as_deref(), &k.id),
        })
        .collect();
    Ok(Filmstrip {
        video: video.clone(),
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use madt_core::fixture::{demo_corpus, DEMO_DIM};
    use madt_core::ingest::{ingest, IngestConfig};

    fn snapshot() -> Snapshot {
        let demo = demo_corpus();
        let corpus = ingest(demo.embeddings, demo.metadata, &IngestConfig::default()).unwrap();
        let cfg = AppConfig::default();
        Snapshot::from_corpus(corpus, build_embedder(&cfg, DEMO_DIM).unwrap())
    }

    fn no_session(_: &str) -> Option<Embedding> {
        None
    }

    fn text(t: &str, k: usize) -> SearchRequest {
        SearchRequest {
            text: Some(t.into()),
            k,
            ..Default::default()
        }
    }

    #[test]
    fn text_search_finds_the_described_shot() {
        let s = snapshot();
        let hits = search(&s, &AppConfig::default(), &text("striker shoots at goal", 3), &no_session).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].id.render(), "V0001/0125");
        assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn mode_validation() {
        let s = snapshot();
        let cfg = AppConfig::default();
        let mut r = text("goal", 5);
        r.image_key = Some("V0001/0000".into());
        assert_eq!(search(&s, &cfg, &r, &no_session).unwrap_err().http_status(), 400);
        let r = SearchRequest {
            mode: SearchMode::ImageRef,
            ..Default::default()
        };
        assert_eq!(search(&s, &cfg, &r, &no_session).unwrap_err().http_status(), 400);
        let r = SearchRequest {
            mode: SearchMode::ImageRef,
            image_key: Some("img:nope".into()),
            k: 3,
            ..Default::default()
        };
        assert_eq!(search(&s, &cfg, &r, &no_session).unwrap_err().http_status(), 422);
        assert_eq!(search(&s, &cfg, &text("  ", 3), &no_session).unwrap_err().http_status(), 400);
        assert_eq!(search(&s, &cfg, &text("goal", 0), &no_session).unwrap_err().http_status(), 400);
    }

    #[test]
    fn image_ref_by_corpus_keyframe_ranks_itself_first() {
        let s = snapshot();
        let r = SearchRequest {
            mode: SearchMode::ImageRef,
            image_key: Some("V0003/0025".into()),
            k: 1,
            ..Default::default()
        };
        let hits = search(&s, &AppConfig::default(), &r, &no_session).unwrap();
        assert_eq!(hits[0].id.render(), "V0003/0025");
        assert!((hits[0].similarity - 1.0).abs() < 1e-6);
    }

    #[test]
    fn filter_include_exclude_compose() {
        let s = snapshot();
        let cfg = AppConfig::default();
        let mut r = text("goal", 50);
        r.filter = Some(MetadataFilter {
            objects_any: Some(vec!["ball".into()]),
            ..Default::default()
        });
        let with_ball = search(&s, &cfg, &r, &no_session).unwrap();
        assert!(!with_ball.is_empty());
        for h in &with_ball {
            let rec = &s.corpus.store.get(&h.id).unwrap().record;
            assert!(rec.objects.iter().any(|o| o == "ball"));
        }
        let first = with_ball[0].id.clone();
        r.exclude_ids = vec![first.clone()];
        let excluded = search(&s, &cfg, &r, &no_session).unwrap();
        assert_eq!(excluded.len(), with_ball.len() - 1);
        assert!(excluded.iter().all(|h| h.id != first));
        r.exclude_ids.clear();
        r.include_ids = Some(vec![first.clone(), KeyframeId::new("V0002", 0)]);
        let included = search(&s, &cfg, &r, &no_session).unwrap();
        // V0002/0000 has no ball, so the filter removes it
        assert_eq!(included.iter().map(|h| &h.id).collect::<Vec<_>>(), vec![&first]);
    }

    #[test]
    fn trake_request_routing() {
        let s = snapshot();
        let cfg = AppConfig::default();
        let adapters = Adapters::from_config(&cfg).unwrap();
        let empty = TrakeRequest::default();
        assert_eq!(run_trake(&s, &adapters, &cfg, &empty).unwrap_err().http_status(), 400);

        let raw = TrakeRequest {
            query: Some("football: kickoff at the centre circle then goal scored".into()),
            ..Default::default()
        };
        let r = run_trake(&s, &adapters, &cfg, &raw).unwrap();
        assert_eq!(r.query.events.len(), 2);

        let mut no_decomposer = cfg.clone();
        no_decomposer.decomposer = DecomposerConfig::None;
        let bare = Adapters::from_config(&no_decomposer).unwrap();
        assert_eq!(run_trake(&s, &bare, &no_decomposer, &raw).unwrap_err().http_status(), 503);

        let bad_alpha = TrakeRequest {
            events: vec!["a".into(), "b".into()],
            alpha: Some(1.5),
            ..Default::default()
        };
        assert_eq!(run_trake(&s, &adapters, &cfg, &bad_alpha).unwrap_err().http_status(), 400);
    }

    #[test]
    fn trake_finds_the_scripted_sequence() {
        let s = snapshot();
        let cfg = AppConfig::default();
        let adapters = Adapters::from_config(&cfg).unwrap();
        let req = TrakeRequest {
            context: "a football match".into(),
            events: vec![
                "kickoff at the centre circle".into(),
                "striker shoots at goal".into(),
                "goal scored the net ripples".into(),
            ],
            ..Default::default()
        };
        let r = run_trake(&s, &adapters, &cfg, &req).unwrap();
        let top = &r.segments[0];
        assert_eq!(top.video.as_str(), "V0001");
        let path = top.best_path.as_ref().unwrap();
        let ids: Vec<String> = path.keyframes().iter().map(|k| k.render()).collect();
        assert_eq!(ids, ["V0001/0050", "V0001/0125", "V0001/0175"]);
    }

    #[test]
    fn filmstrip_window() {
        let s = snapshot();
        let cfg = AppConfig::default();
        let f = filmstrip(&s, &cfg, &VideoId::new("V0002"), Some(75), 1).unwrap();
        let frames: Vec<u32> = f.frames.iter().map(|k| k.frame_index).collect();
        assert_eq!(frames.len(), 3);
        assert!(frames.contains(&75));
        assert_eq!(
            filmstrip(&s, &cfg, &VideoId::new("V9999"), None, 2).unwrap_err().http_status(),
            404
        );
        assert_eq!(
            filmstrip(&s, &cfg, &VideoId::new("V0002"), Some(3), 2).unwrap_err().http_status(),
            404
        );
    }
}
