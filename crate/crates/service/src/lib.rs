//! HTTP session service: asynchronous training, status polling, on-demand
//! renders and session archive import/export.

use std::collections::{HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use inrst_core::archive::{read_archive, write_archive};
use inrst_core::error::Error as CoreError;
use inrst_core::imaging::{decode, encode, EncodeFormat};
use inrst_core::latent::AlphaSpecJson;
use inrst_core::perceptual::{open_extractor, FeatureExtractor, LayerPreset};
use inrst_core::renderer::{render, RenderRequest, DEFAULT_CHUNK_ROWS};
use inrst_core::trainer::{train_with_observer, LossRecord, Session, Snapshot, TrainConfig, TrainObserver};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;
use tower_http::cors::CorsLayer;

pub const DEFAULT_UPLOAD_LIMIT: usize = 16 * 1024 * 1024;
const ARCHIVE_LIMIT: usize = 512 * 1024 * 1024;
const RECENT_LOSSES: usize = 100;
const PREVIEW_COUNT: usize = 10;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Weight file path or `synthetic:<seed>`.
    pub vgg: String,
    /// Archives of ready sessions are written here when set.
    pub data_dir: Option<PathBuf>,
    pub workers: usize,
    pub upload_limit: usize,
    /// Upper bound on `width · height` of one render.
    pub max_render_pixels: usize,
}

impl ServiceConfig {
    pub fn new(vgg: impl Into<String>) -> Self {
        Self {
            vgg: vgg.into(),
            data_dir: None,
            workers: default_workers(),
            upload_limit: DEFAULT_UPLOAD_LIMIT,
            max_render_pixels: 8192 * 8192,
        }
    }
}

/// Half the physical cores, at least one.
pub fn default_workers() -> usize {
    (num_cpus::get_physical() / 2).max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Queued,
    Training,
    Ready,
    Failed,
}

struct Progress {
    state: SessionState,
    iteration: usize,
    losses: VecDeque<LossRecord>,
    previews: Vec<(f32, Bytes)>,
    session: Option<Arc<Session>>,
    error: Option<String>,
}

struct SessionRecord {
    id: String,
    created_at: u64,
    total_iterations: usize,
    config: TrainConfig,
    progress: RwLock<Progress>,
}

impl SessionRecord {
    fn new(id: String, config: TrainConfig) -> Self {
        Self {
            id,
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            total_iterations: config.iterations,
            config,
            progress: RwLock::new(Progress {
                state: SessionState::Queued,
                iteration: 0,
                losses: VecDeque::new(),
                previews: Vec::new(),
                session: None,
                error: None,
            }),
        }
    }

    fn ready(id: String, session: Session) -> Self {
        let rec = Self::new(id, session.config.clone());
        {
            let mut p = rec.progress.write();
            p.state = SessionState::Ready;
            p.iteration = session.loss_history.len();
            p.losses = recent(&session.loss_history);
            p.session = Some(Arc::new(session));
        }
        rec
    }

    fn session(&self) -> Option<Arc<Session>> {
        self.progress.read().session.clone()
    }
}

fn recent(history: &[LossRecord]) -> VecDeque<LossRecord> {
    history[history.len().saturating_sub(RECENT_LOSSES)..].iter().copied().collect()
}

struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<SessionRecord>>>,
    pool: Arc<Semaphore>,
    extractors: Mutex<HashMap<LayerPreset, Arc<FeatureExtractor>>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        let workers = config.workers.max(1);
        AppState(Arc::new(Inner {
            config,
            sessions: RwLock::new(HashMap::new()),
            pool: Arc::new(Semaphore::new(workers)),
            extractors: Mutex::new(HashMap::new()),
        }))
    }

    /// Loads every `.inrs` archive in the data directory as a ready session.
    pub fn load_data_dir(&self) -> std::io::Result<usize> {
        let Some(dir) = &self.0.config.data_dir else {
            return Ok(0);
        };
        std::fs::create_dir_all(dir)?;
        let mut loaded = 0;
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("inrs") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else {
                continue;
            };
            match std::fs::read(&path).map_err(CoreError::from).and_then(|b| read_archive(&b)) {
                Ok(session) => {
                    self.insert(Arc::new(SessionRecord::ready(id, session)));
                    loaded += 1;
                }
                Err(e) => tracing::warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(loaded)
    }

    fn insert(&self, rec: Arc<SessionRecord>) {
        self.0.sessions.write().insert(rec.id.clone(), rec);
    }

    fn get(&self, id: &str) -> Result<Arc<SessionRecord>, ApiError> {
        self.0
            .sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))
    }

    fn extractor(&self, preset: LayerPreset) -> Result<Arc<FeatureExtractor>, CoreError> {
        // Held across the load so concurrent sessions do not read the weights twice.
        let mut cache = self.0.extractors.lock();
        if let Some(ex) = cache.get(&preset) {
            return Ok(ex.clone());
        }
        if let Some(ex) = cache.values().next() {
            let ex = Arc::new(ex.with_taps(preset.taps())?);
            cache.insert(preset, ex.clone());
            return Ok(ex);
        }
        let ex = Arc::new(open_extractor(&self.0.config.vgg, preset)?);
        cache.insert(preset, ex.clone());
        Ok(ex)
    }

    fn persist(&self, id: &str, session: &Session) {
        if let Some(dir) = &self.0.config.data_dir {
            let path = dir.join(format!("{id}.inrs"));
            if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, write_archive(session))) {
                tracing::warn!("cannot write {}: {e}", path.display());
            }
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.0.config.upload_limit;
    Router::new()
        .route(
            "/api/sessions",
            post(create_session).layer(DefaultBodyLimit::max(limit.saturating_mul(2).saturating_add(1 << 20))),
        )
        .route("/api/sessions/import", post(import_session).layer(DefaultBodyLimit::max(ARCHIVE_LIMIT)))
        .route("/api/sessions/{id}", get(session_status))
        .route("/api/sessions/{id}/render", post(render_session))
        .route("/api/sessions/{id}/archive", get(export_session))
        .route("/api/sessions/{id}/previews/{index}", get(preview))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

struct Observer {
    record: Arc<SessionRecord>,
}

impl TrainObserver for Observer {
    fn on_iteration(&mut self, r: &LossRecord) {
        let mut p = self.record.progress.write();
        p.iteration = r.iteration + 1;
        if p.losses.len() == RECENT_LOSSES {
            p.losses.pop_front();
        }
        p.losses.push_back(*r);
    }

    fn on_snapshot(&mut self, snapshot: &Snapshot) {
        let previews: Vec<(f32, Bytes)> = snapshot
            .previews
            .iter()
            .filter_map(|(a, img)| encode(img, EncodeFormat::Png).ok().map(|b| (*a, Bytes::from(b))))
            .collect();
        self.record.progress.write().previews = previews;
    }
}

async fn read_field(field: axum::extract::multipart::Field<'_>, limit: usize) -> Result<Vec<u8>, ApiError> {
    let name = field.name().unwrap_or("").to_owned();
    let mut field = field;
    let mut data = Vec::new();
    while let Some(chunk) = field
        .chunk()
        .await
        .map_err(|e| ApiError::new(e.status(), format!("field {name}: {}", e.body_text())))?
    {
        data.extend_from_slice(&chunk);
        if data.len() > limit {
            return Err(ApiError::new(
                StatusCode::PAYLOAD_TOO_LARGE,
                format!("field {name} exceeds the {limit}-byte limit"),
            ));
        }
    }
    Ok(data)
}

async fn create_session(State(state): State<AppState>, mut multipart: Multipart) -> Result<Response, ApiError> {
    let limit = state.0.config.upload_limit;
    let (mut content, mut style, mut config) = (None, None, None);
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::new(e.status(), e.body_text()))?
    {
        match field.name() {
            Some("content") => content = Some(read_field(field, limit).await?),
            Some("style") => style = Some(read_field(field, limit).await?),
            Some("config") => config = Some(read_field(field, limit).await?),
            other => return Err(ApiError::bad_request(format!("unexpected field {other:?}"))),
        }
    }
    let decode_field = |name: &str, bytes: Option<Vec<u8>>| {
        let bytes = bytes.ok_or_else(|| ApiError::bad_request(format!("missing field {name}")))?;
        decode(&bytes).map_err(|e| ApiError::bad_request(format!("{name}: {e}")))
    };
    let content = decode_field("content", content)?;
    let style = decode_field("style", style)?;
    let mut cfg: TrainConfig = match config.as_deref().map(|c| std::str::from_utf8(c).unwrap_or("").trim()) {
        None | Some("") => TrainConfig::default(),
        Some(text) => serde_json::from_str(text).map_err(|e| ApiError::bad_request(format!("config: {e}")))?,
    };
    if cfg.snapshot_interval == 0 {
        cfg.snapshot_interval = cfg.iterations.div_ceil(PREVIEW_COUNT).max(1);
    }
    cfg.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;

    let id = uuid::Uuid::new_v4().simple().to_string();
    let record = Arc::new(SessionRecord::new(id.clone(), cfg.clone()));
    state.insert(record.clone());
    tokio::spawn(run_training(state, record, content, style));
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({ "id": id, "state": SessionState::Queued, "config": cfg })),
    )
        .into_response())
}

async fn run_training(
    state: AppState,
    record: Arc<SessionRecord>,
    content: inrst_core::imaging::Image,
    style: inrst_core::imaging::Image,
) {
    let Ok(_permit) = state.0.pool.clone().acquire_owned().await else {
        return;
    };
    record.progress.write().state = SessionState::Training;
    let worker_state = state.clone();
    let worker_record = record.clone();
    let result = tokio::task::spawn_blocking(move || {
        let ex = worker_state.extractor(worker_record.config.preset)?;
        let mut observer = Observer {
            record: worker_record.clone(),
        };
        train_with_observer(&content, &style, &worker_record.config, &ex, &mut observer)
    })
    .await;
    let mut p = record.progress.write();
    match result {
        Ok(Ok(session)) => {
            state.persist(&record.id, &session);
            p.iteration = session.loss_history.len();
            p.session = Some(Arc::new(session));
            p.state = SessionState::Ready;
        }
        Ok(Err(e)) => {
            tracing::warn!("session {} failed: {e}", record.id);
            p.error = Some(e.to_string());
            p.state = SessionState::Failed;
        }
        Err(e) => {
            p.error = Some(format!("training task panicked: {e}"));
            p.state = SessionState::Failed;
        }
    }
}

async fn session_status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let rec = state.get(&id)?;
    let p = rec.progress.read();
    let previews: Vec<_> = p
        .previews
        .iter()
        .enumerate()
        .map(|(k, (a, _))| json!({ "alpha": a, "url": format!("/api/sessions/{id}/previews/{k}") }))
        .collect();
    let mut body = json!({
        "id": rec.id,
        "state": p.state,
        "iteration": p.iteration,
        "total_iterations": rec.total_iterations,
        "losses": p.losses,
        "previews": previews,
        "created_at": rec.created_at,
        "config": rec.config,
    });
    if let Some(session) = &p.session {
        body["train_dims"] = json!({ "height": session.train_dims.0, "width": session.train_dims.1 });
    }
    if let Some(e) = &p.error {
        body["error"] = json!(e);
    }
    Ok(Json(body).into_response())
}

async fn preview(State(state): State<AppState>, Path((id, index)): Path<(String, usize)>) -> Result<Response, ApiError> {
    let rec = state.get(&id)?;
    let png = rec
        .progress
        .read()
        .previews
        .get(index)
        .map(|(_, b)| b.clone())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no preview {index}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

fn ready_session(rec: &SessionRecord) -> Result<Arc<Session>, ApiError> {
    rec.session()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, format!("session {} is not ready", rec.id)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderBody {
    width: usize,
    height: usize,
    alpha: AlphaSpecJson,
    chunk_rows: Option<usize>,
}

fn core_status(e: &CoreError) -> StatusCode {
    match e {
        CoreError::Range { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::BAD_REQUEST,
    }
}

async fn render_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let rec = state.get(&id)?;
    let session = ready_session(&rec)?;
    let body: RenderBody =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("render request: {e}")))?;
    let spec = body.alpha.into_spec().map_err(|e| ApiError::new(core_status(&e), e.to_string()))?;
    let pixels = body.width.saturating_mul(body.height);
    if pixels > state.0.config.max_render_pixels {
        return Err(ApiError::bad_request(format!(
            "{}x{} exceeds the {}-pixel render limit",
            body.width, body.height, state.0.config.max_render_pixels
        )));
    }
    let req = RenderRequest::new(body.width, body.height, spec).with_chunk_rows(body.chunk_rows.unwrap_or(DEFAULT_CHUNK_ROWS));
    let png = tokio::task::spawn_blocking(move || render(&session, &req).and_then(|img| encode(&img, EncodeFormat::Png)))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::new(core_status(&e), e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn export_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let rec = state.get(&id)?;
    let session = ready_session(&rec)?;
    let bytes = write_archive(&session);
    Ok((
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{id}.inrs\"")),
        ],
        bytes,
    )
        .into_response())
}

async fn import_session(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let session = read_archive(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    state.persist(&id, &session);
    state.insert(Arc::new(SessionRecord::ready(id.clone(), session)));
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "state": SessionState::Ready }))).into_response())
}
