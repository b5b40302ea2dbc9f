//! HTTP service. Handlers parse JSON themselves so malformed bodies map to
//! 400, then run engine calls on the blocking pool (adapters use blocking
//! HTTP clients).

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use madt_core::adapters::ImageResult;
use madt_core::embedding::image_key;
use madt_core::{Embedding, Execution, KeyframeId, VideoId};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::oneshot;

use crate::config::AppConfig;
use crate::engine::{self, Adapters, EngineError, SearchRequest, Snapshot, TrakeRequest};

struct Timed<T> {
    at: Instant,
    value: T,
}

/// Short-lived per-user state: image-search choice sets, images selected
/// from them, and keyframe selection boxes.
#[derive(Default)]
struct Sessions {
    choice_sets: HashMap<String, Timed<Vec<ImageResult>>>,
    images: HashMap<String, Timed<Embedding>>,
    selections: HashMap<String, Timed<Vec<KeyframeId>>>,
}

impl Sessions {
    fn expire(&mut self, ttl: std::time::Duration) {
        let now = Instant::now();
        let live = |at: Instant| now.duration_since(at) <= ttl;
        self.choice_sets.retain(|_, t| live(t.at));
        self.images.retain(|_, t| live(t.at));
        self.selections.retain(|_, t| live(t.at));
    }
}

pub struct AppState {
    config: AppConfig,
    exec: Execution,
    adapters: Adapters,
    snapshot: RwLock<Option<Arc<Snapshot>>>,
    sessions: Mutex<Sessions>,
}

impl AppState {
    pub fn new(config: AppConfig, adapters: Adapters, exec: Execution) -> Self {
        Self {
            config,
            exec,
            adapters,
            snapshot: RwLock::new(None),
            sessions: Mutex::new(Sessions::default()),
        }
    }

    /// Loads the configured corpus directory, if any.
    pub fn from_config(config: AppConfig, exec: Execution) -> Result<Self, EngineError> {
        let adapters = Adapters::from_config(&config)?;
        let state = Self::new(config, adapters, exec);
        if let Some(dir) = state.config.corpus_dir.clone() {
            state.load_corpus(&dir)?;
        }
        Ok(state)
    }

    pub fn config(&self) -> &AppConfig {
        &self.config
    }

    /// Replaces the served corpus atomically; in-flight requests keep the
    /// snapshot they started with.
    pub fn load_corpus(&self, dir: &std::path::Path) -> Result<usize, EngineError> {
        let snap = Snapshot::open(dir, &self.config, self.exec)?;
        let n = snap.corpus.len();
        self.install(snap);
        Ok(n)
    }

    pub fn install(&self, snap: Snapshot) {
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(snap));
    }

    pub fn snapshot(&self) -> Result<Arc<Snapshot>, EngineError> {
        self.snapshot
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
            .ok_or(EngineError::NoCorpus)
    }

    fn sessions(&self) -> std::sync::MutexGuard<'_, Sessions> {
        let mut s = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        s.expire(self.config.session_ttl());
        s
    }

    fn session_image(&self, key: &str) -> Option<Embedding> {
        self.sessions().images.get(key).map(|t| t.value.clone())
    }
}

pub struct ApiError(EngineError);

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.0.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(json!({"error": self.0.to_string()}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = Arc<AppState>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, EngineError> {
    serde_json::from_slice(body).map_err(|e| EngineError::BadRequest(format!("invalid body: {e}")))
}

async fn blocking<T, F>(f: F) -> Result<T, EngineError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, EngineError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| EngineError::Internal(e.to_string()))?
}

fn new_session_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/search", post(search))
        .route("/trake", post(trake))
        .route("/image-search", post(image_search))
        .route("/image-select", post(image_select))
        .route("/videos/:video/filmstrip", get(filmstrip))
        .route("/keyframes/:video/:frame", get(keyframe))
        .route("/thumbnails/:video/:frame", get(thumbnail))
        .route("/selection", post(selection_update))
        .route("/selection/export", post(selection_export))
        .route("/selection/:session", get(selection_get))
        .route("/corpus/reload", post(reload))
        .route("/dedup-report", get(dedup_report))
        .with_state(state)
}

async fn health(State(st): State<Shared>) -> Json<serde_json::Value> {
    let n = st.snapshot().map(|s| s.corpus.len()).unwrap_or(0);
    Json(json!({"status": "ok", "corpus_size": n}))
}

#[derive(Serialize)]
struct SearchResponse {
    count: usize,
    hits: Vec<engine::SearchHit>,
}

async fn search(State(st): State<Shared>, body: Bytes) -> ApiResult<Json<SearchResponse>> {
    let req: SearchRequest = parse_body(&body)?;
    let hits = blocking(move || {
        let snap = st.snapshot()?;
        engine::search(&snap, &st.config, &req, &|k| st.session_image(k))
    })
    .await?;
    Ok(Json(SearchResponse {
        count: hits.len(),
        hits,
    }))
}

async fn trake(State(st): State<Shared>, body: Bytes) -> ApiResult<Json<madt_core::TrakeResult>> {
    let req: TrakeRequest = parse_body(&body)?;
    let result = blocking(move || {
        let snap = st.snapshot()?;
        engine::run_trake(&snap, &st.adapters, &st.config, &req)
    })
    .await?;
    Ok(Json(result))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageSearchRequest {
    query: String,
    #[serde(default = "default_choices")]
    k: usize,
}

fn default_choices() -> usize {
    8
}

#[derive(Serialize)]
struct Choice {
    index: usize,
    url: String,
    image_b64: String,
}

async fn image_search(State(st): State<Shared>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let req: ImageSearchRequest = parse_body(&body)?;
    if req.query.trim().is_empty() || req.k == 0 {
        return Err(EngineError::BadRequest("query and a positive k are required".into()).into());
    }
    let st2 = st.clone();
    let results = blocking(move || {
        let client = st2
            .adapters
            .image_search
            .as_ref()
            .map_err(|e| EngineError::Unavailable(e.to_string()))?;
        Ok(client.search(&req.query, req.k)?)
    })
    .await?;
    let candidates: Vec<Choice> = results
        .iter()
        .enumerate()
        .map(|(index, r)| Choice {
            index,
            url: r.source_url.clone(),
            image_b64: base64::engine::general_purpose::STANDARD.encode(&r.image),
        })
        .collect();
    let id = new_session_id();
    st.sessions().choice_sets.insert(
        id.clone(),
        Timed {
            at: Instant::now(),
            value: results,
        },
    );
    Ok(Json(json!({"choice_set": id, "candidates": candidates})))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageSelectRequest {
    choice_set: String,
    choice_index: usize,
}

async fn image_select(State(st): State<Shared>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let req: ImageSelectRequest = parse_body(&body)?;
    let image = {
        let s = st.sessions();
        let set = s
            .choice_sets
            .get(&req.choice_set)
            .ok_or_else(|| EngineError::Gone(format!("choice set {}", req.choice_set)))?;
        let chosen = set.value.get(req.choice_index).ok_or_else(|| {
            EngineError::BadRequest(format!(
                "choice_index {} out of range (0..{})",
                req.choice_index,
                set.value.len()
            ))
        })?;
        chosen.image.clone()
    };
    let st2 = st.clone();
    let key = image_key(&image);
    let embedding = blocking(move || {
        let snap = st2.snapshot()?;
        Ok(snap.embedder.embed_image(&image)?)
    })
    .await?;
    st.sessions().images.insert(
        key.clone(),
        Timed {
            at: Instant::now(),
            value: embedding,
        },
    );
    Ok(Json(json!({"image_key": key})))
}

#[derive(Deserialize)]
struct FilmstripQuery {
    around: Option<u32>,
    #[serde(default = "default_span")]
    span: usize,
}

fn default_span() -> usize {
    5
}

async fn filmstrip(
    State(st): State<Shared>,
    Path(video): Path<String>,
    Query(q): Query<FilmstripQuery>,
) -> ApiResult<Json<engine::Filmstrip>> {
    let snap = st.snapshot()?;
    Ok(Json(engine::filmstrip(
        &snap,
        &st.config,
        &VideoId::new(video),
        q.around,
        q.span,
    )?))
}

async fn keyframe(
    State(st): State<Shared>,
    Path((video, frame)): Path<(String, u32)>,
) -> ApiResult<Json<serde_json::Value>> {
    let snap = st.snapshot()?;
    let id = KeyframeId::new(video, frame);
    let stored = snap
        .corpus
        .store
        .get(&id)
        .ok_or_else(|| EngineError::NotFound(format!("keyframe {id}")))?;
    let thumbs = engine::thumbnails_dir(&st.config, &snap);
    Ok(Json(json!({
        "id": id,
        "timestamp_s": stored.timestamp_s,
        "ocr": stored.record.ocr_text,
        "caption": stored.record.caption,
        "objects": stored.record.objects,
        "thumbnail": engine::thumbnail_url(thumbs.as_deref(), &id),
    })))
}

/// Serves the stored image, or 404 with `{"placeholder": true}` so clients
/// can draw a placeholder tile.
async fn thumbnail(
    State(st): State<Shared>,
    Path((video, frame)): Path<(String, u32)>,
) -> Response {
    let id = KeyframeId::new(video, frame);
    let file = st
        .snapshot()
        .ok()
        .and_then(|snap| engine::thumbnails_dir(&st.config, &snap))
        .and_then(|dir| engine::thumbnail_file(&dir, &id));
    let placeholder = || {
        (
            StatusCode::NOT_FOUND,
            Json(json!({"placeholder": true, "id": id.render()})),
        )
            .into_response()
    };
    let Some(path) = file else {
        return placeholder();
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => {
            let mime = if path.extension().is_some_and(|e| e == "png") {
                "image/png"
            } else {
                "image/jpeg"
            };
            ([(header::CONTENT_TYPE, mime)], bytes).into_response()
        }
        Err(_) => placeholder(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectionUpdate {
    #[serde(default)]
    session: Option<String>,
    #[serde(default)]
    add: Vec<KeyframeId>,
    #[serde(default)]
    remove: Vec<KeyframeId>,
}

#[derive(Serialize)]
struct SelectionView {
    session: String,
    ids: Vec<KeyframeId>,
}

/// Creates (without `session`) or edits a selection box. Adding an id that
/// is already present is a no-op; the box is capped at the configured limit.
async fn selection_update(State(st): State<Shared>, body: Bytes) -> ApiResult<Json<SelectionView>> {
    let req: SelectionUpdate = parse_body(&body)?;
    let snap = st.snapshot()?;
    if let Some(unknown) = req.add.iter().find(|id| snap.corpus.index.row(id).is_none()) {
        return Err(EngineError::Unprocessable(format!("unknown keyframe {unknown}")).into());
    }
    let limit = st.config.selection_limit;
    let mut s = st.sessions();
    let session = match req.session {
        Some(id) => {
            if !s.selections.contains_key(&id) {
                return Err(EngineError::Gone(format!("selection {id}")).into());
            }
            id
        }
        None => {
            let id = new_session_id();
            s.selections.insert(
                id.clone(),
                Timed {
                    at: Instant::now(),
                    value: Vec::new(),
                },
            );
            id
        }
    };
    let entry = s.selections.get_mut(&session).expect("present");
    let mut ids = entry.value.clone();
    ids.retain(|id| !req.remove.contains(id));
    for id in req.add {
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    if ids.len() > limit {
        return Err(EngineError::BadRequest(format!("selection is limited to {limit} keyframes")).into());
    }
    entry.value = ids.clone();
    entry.at = Instant::now();
    Ok(Json(SelectionView { session, ids }))
}

async fn selection_get(
    State(st): State<Shared>,
    Path(session): Path<String>,
) -> ApiResult<Json<SelectionView>> {
    let s = st.sessions();
    let sel = s
        .selections
        .get(&session)
        .ok_or_else(|| EngineError::Gone(format!("selection {session}")))?;
    Ok(Json(SelectionView {
        ids: sel.value.clone(),
        session,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportRequest {
    session: String,
}

/// `video,frame_index` CSV in selection order.
pub fn selection_csv(ids: &[KeyframeId]) -> String {
    let mut out = String::from("video,frame_index\n");
    for id in ids {
        out.push_str(&format!("{},{}\n", id.video, id.frame_index));
    }
    out
}

async fn selection_export(State(st): State<Shared>, body: Bytes) -> ApiResult<Response> {
    let req: ExportRequest = parse_body(&body)?;
    let s = st.sessions();
    let sel = s
        .selections
        .get(&req.session)
        .ok_or_else(|| EngineError::Gone(format!("selection {}", req.session)))?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], selection_csv(&sel.value)).into_response())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ReloadRequest {
    #[serde(default)]
    dir: Option<PathBuf>,
}

async fn reload(State(st): State<Shared>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let req: ReloadRequest = if body.is_empty() {
        ReloadRequest::default()
    } else {
        parse_body(&body)?
    };
    let n = blocking(move || {
        let dir = match req.dir {
            Some(d) => d,
            None => match st.snapshot() {
                Ok(s) => s.dir.clone(),
                Err(_) => st
                    .config
                    .corpus_dir
                    .clone()
                    .ok_or_else(|| EngineError::BadRequest("no corpus directory given".into()))?,
            },
        };
        st.load_corpus(&dir)
    })
    .await?;
    Ok(Json(json!({"status": "ok", "corpus_size": n})))
}

async fn dedup_report(State(st): State<Shared>) -> ApiResult<Json<madt_core::dedup::DedupReport>> {
    Ok(Json(st.snapshot()?.corpus.report.clone()))
}

/// Binds `addr` and serves until the returned future's shutdown signal.
pub async fn serve(
    state: Shared,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server running on its own thread and runtime; stops when dropped.
pub struct RunningServer {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl RunningServer {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn spawn(state: AppState, addr: SocketAddr) -> std::io::Result<RunningServer> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let state = Arc::new(state);
    let thread = std::thread::spawn(move || {
        rt.block_on(serve(state, listener, async {
            let _ = rx.await;
        }))
    });
    Ok(RunningServer {
        addr,
        stop: Some(tx),
        thread: Some(thread),
    })
}
