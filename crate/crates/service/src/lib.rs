//! HTTP inspection service: operator sessions, live inspections with manual
//! resolution of unclear results, and profile training.
//!
//! Every route requires `Authorization: Bearer <token>` matching one static
//! token. Request and response bodies are JSON except frame uploads, which are
//! multipart PNG parts.

pub mod registry;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use wirecheck_core::orientation::{EmbeddingExtractor, GridDescriptor};
use wirecheck_core::{inspect, train, Error as CoreError, RgbImage, TrainingConfig, TrainingSample};

use crate::registry::ProfileRegistry;
use crate::store::{OperatorAction, SessionStore, StoreError};

pub const MAX_UPLOAD_BYTES: usize = 256 * 1024 * 1024;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub profiles_dir: PathBuf,
    pub sessions_db: PathBuf,
    pub token: String,
}

pub struct AppState {
    pub store: SessionStore,
    pub profiles: ProfileRegistry,
    pub extractor: Arc<dyn EmbeddingExtractor>,
    token: String,
}

impl AppState {
    pub fn open(config: &ServiceConfig) -> Result<Arc<Self>, StoreError> {
        Ok(Arc::new(Self {
            store: SessionStore::open(&config.sessions_db)?,
            profiles: ProfileRegistry::new(&config.profiles_dir),
            extractor: Arc::new(GridDescriptor::default()),
            token: config.token.clone(),
        }))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::SessionNotFound(_) | StoreError::EventNotFound(_) => StatusCode::NOT_FOUND,
            StoreError::Closed(_) | StoreError::Conflict(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match &e {
            CoreError::SampleCountTooLow(_)
            | CoreError::WireCountInconsistent { .. }
            | CoreError::TrainingSampleUnclear { .. }
            | CoreError::ProfileVersionMismatch(_) => StatusCode::UNPROCESSABLE_ENTITY,
            CoreError::ViewCountMismatch { .. }
            | CoreError::InvalidConfig(_)
            | CoreError::RoiOutOfBounds { .. }
            | CoreError::Image { .. }
            | CoreError::EmptyImage
            | CoreError::Json(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn require_token(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    match presented {
        Some(t) if constant_time_eq(t.trim().as_bytes(), state.token.as_bytes()) => next.run(req).await,
        _ => ApiError::new(StatusCode::UNAUTHORIZED, "missing or invalid bearer token").into_response(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/inspect", post(submit_inspection))
        .route("/sessions/{id}/events/{eid}/resolve", post(resolve_event))
        .route("/sessions/{id}/close", post(close_session))
        .route("/profiles", post(train_profile).get(list_profiles))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Deserialize)]
struct CreateSession {
    operator: String,
    harness_type: String,
    profile_id: String,
}

async fn create_session(State(state): State<Arc<AppState>>, Json(body): Json<CreateSession>) -> ApiResult<Response> {
    if body.operator.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "operator must not be empty"));
    }
    if !state.profiles.exists(&body.harness_type, &body.profile_id) {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("unknown profile {}/{}", body.harness_type, body.profile_id),
        ));
    }
    let rec = blocking(move || Ok(state.store.create(&body.operator, &body.harness_type, &body.profile_id)?)).await?;
    Ok((StatusCode::CREATED, Json(rec)).into_response())
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    Json(state.store.list())
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(state.store.get(&id)?))
}

struct Upload {
    name: String,
    file_name: Option<String>,
    bytes: Vec<u8>,
}

async fn read_parts(mut mp: Multipart) -> ApiResult<Vec<Upload>> {
    let bad = |e: axum::extract::multipart::MultipartError| ApiError::new(StatusCode::BAD_REQUEST, e.body_text());
    let mut out = Vec::new();
    while let Some(field) = mp.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().map(str::to_string);
        let bytes = field.bytes().await.map_err(bad)?.to_vec();
        out.push(Upload { name, file_name, bytes });
    }
    Ok(out)
}

async fn submit_inspection(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    mp: Multipart,
) -> ApiResult<impl IntoResponse> {
    let session = state.store.get(&id)?;
    if !session.is_open() {
        return Err(StoreError::Closed(id).into());
    }
    let profile = state
        .profiles
        .get(&session.harness_type, &session.profile_id)?
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "session profile no longer exists"))?;
    let parts = read_parts(mp).await?;
    if parts.len() != profile.view_count() {
        return Err(CoreError::ViewCountMismatch { expected: profile.view_count(), found: parts.len() }.into());
    }
    let event = blocking(move || {
        let mut frames = Vec::with_capacity(parts.len());
        let mut digests = Vec::with_capacity(parts.len());
        for p in &parts {
            frames.push(RgbImage::decode_png(&p.bytes)?);
            digests.push(state.store.put_blob(&p.bytes)?);
        }
        let result = inspect(&profile, &frames, state.extractor.as_ref())?;
        // the session may have closed while the inspection ran; append re-checks under its guard
        Ok(state.store.append_event(&id, digests, result)?)
    })
    .await?;
    Ok(Json(event))
}

#[derive(Deserialize)]
struct Resolve {
    action: OperatorAction,
}

async fn resolve_event(
    State(state): State<Arc<AppState>>,
    Path((id, eid)): Path<(String, String)>,
    Json(body): Json<Resolve>,
) -> ApiResult<impl IntoResponse> {
    let event = blocking(move || Ok(state.store.resolve(&id, &eid, body.action)?)).await?;
    Ok(Json(event))
}

async fn close_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let rec = blocking(move || Ok(state.store.close(&id)?)).await?;
    Ok(Json(rec))
}

#[derive(Serialize)]
struct Trained {
    harness_type: String,
    profile_id: String,
    sample_count: usize,
}

/// Multipart: a `config` part holding the training config JSON, then for each
/// view `i` one `view_<i>` part per sample, samples in the same order for every view.
async fn train_profile(State(state): State<Arc<AppState>>, mp: Multipart) -> ApiResult<Response> {
    let parts = read_parts(mp).await?;
    let config_part = parts
        .iter()
        .find(|p| p.name == "config")
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing config part"))?;
    let config: TrainingConfig = serde_json::from_slice(&config_part.bytes)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("config: {e}")))?;
    config.validate()?;
    let views = config.views.len();
    let mut per_view: Vec<Vec<&Upload>> = vec![Vec::new(); views];
    for p in &parts {
        if let Some(i) = p.name.strip_prefix("view_").and_then(|s| s.parse::<usize>().ok()) {
            per_view
                .get_mut(i)
                .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("part {} has no matching view", p.name)))?
                .push(p);
        } else if p.name != "config" {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unexpected part {}", p.name)));
        }
    }
    let n = per_view[0].len();
    if per_view.iter().any(|v| v.len() != n) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "every view needs the same number of sample frames"));
    }
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let frames = per_view.iter().map(|v| RgbImage::decode_png(&v[k].bytes)).collect::<Result<Vec<_>, _>>()?;
        let name = per_view[0][k].file_name.clone().unwrap_or_else(|| format!("sample-{k}"));
        samples.push(TrainingSample { name, frames });
    }
    if state.profiles.exists(&config.harness_type, &config.profile_id) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("profile {}/{} already exists", config.harness_type, config.profile_id),
        ));
    }
    let trained = blocking(move || {
        let profile = train(&config, &samples, state.extractor.as_ref())?;
        let out = Trained {
            harness_type: profile.harness_type.clone(),
            profile_id: profile.profile_id.clone(),
            sample_count: profile.sample_count,
        };
        state.profiles.insert(profile).map_err(|e| match e {
            CoreError::InvalidConfig(m) => ApiError::new(StatusCode::CONFLICT, m),
            other => other.into(),
        })?;
        Ok(out)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(trained)).into_response())
}

async fn list_profiles(State(state): State<Arc<AppState>>) -> ApiResult<impl IntoResponse> {
    Ok(Json(state.profiles.list()?))
}

/// Serves until ctrl-c or SIGTERM. Session appends are fsynced per request,
/// so shutdown has nothing left to flush beyond in-flight requests.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let state = AppState::open(&config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown_signal()).await
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
