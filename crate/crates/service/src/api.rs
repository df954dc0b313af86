use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use iconsim_core::data::{decode_image, eval_view};
use iconsim_core::index::{Neighbor, Projection, Query as KnnQuery};
use iconsim_core::setopt::{lock_and_reoptimize, pools_for_keywords, SearchMode, DEFAULT_EXHAUSTIVE_CAP};
use iconsim_core::Error;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::ServiceState;

pub const PAGE_SIZE: usize = 48;
pub const MAX_K: usize = 100;
pub const DEFAULT_K: usize = 10;
pub const MAX_UPLOAD_BYTES: usize = 1 << 20;
pub const DEFAULT_TOP_N: usize = 5;
pub const DEFAULT_BEAM_WIDTH: usize = 200;

type AppState = Arc<ServiceState>;

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

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io { .. } | Error::Image(_) | Error::NonFiniteLoss { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        let message = match &e {
            Error::ExhaustiveCapExceeded { .. } => format!("{e} (set \"mode\": \"beam\")"),
            _ => e.to_string(),
        };
        Self::new(status, message)
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: &self.message })).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

pub fn thumbnail_url(id: &str) -> String {
    let mut out = String::from("/thumbnails/");
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || b"-_.~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out.push_str(".png");
    out
}

#[derive(Deserialize)]
struct IconsQuery {
    keyword: Option<String>,
    page: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct IconEntry {
    pub id: String,
    pub keyword: Option<String>,
    pub collection: String,
    pub thumbnail_url: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct IconsPage {
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub icons: Vec<IconEntry>,
}

async fn icons(State(state): State<AppState>, Query(q): Query<IconsQuery>) -> Json<IconsPage> {
    let page = q.page.unwrap_or(0);
    let matching: Vec<_> = state
        .records_by_id()
        .filter(|r| q.keyword.as_deref().is_none_or(|k| r.keyword.as_deref() == Some(k)))
        .collect();
    let icons = matching
        .iter()
        .skip(page.saturating_mul(PAGE_SIZE))
        .take(PAGE_SIZE)
        .map(|r| IconEntry {
            id: r.id.clone(),
            keyword: r.keyword.clone(),
            collection: r.collection.clone(),
            thumbnail_url: thumbnail_url(&r.id),
        })
        .collect();
    Json(IconsPage {
        page,
        page_size: PAGE_SIZE,
        total: matching.len(),
        icons,
    })
}

#[derive(Deserialize)]
struct SearchQuery {
    id: Option<String>,
    k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Hit {
    pub id: String,
    pub distance: f64,
    pub thumbnail_url: String,
}

fn hits(neighbors: Vec<Neighbor>) -> Vec<Hit> {
    neighbors
        .into_iter()
        .map(|n| Hit {
            thumbnail_url: thumbnail_url(&n.id),
            id: n.id,
            distance: n.distance,
        })
        .collect()
}

fn check_k(k: Option<usize>) -> ApiResult<usize> {
    match k.unwrap_or(DEFAULT_K) {
        k @ 1..=MAX_K => Ok(k),
        k => Err(ApiError::bad_request(format!("k must be between 1 and {MAX_K}, got {k}"))),
    }
}

async fn search_by_id(State(state): State<AppState>, Query(q): Query<SearchQuery>) -> ApiResult<Json<Vec<Hit>>> {
    let k = check_k(q.k)?;
    let id = q.id.ok_or_else(|| ApiError::bad_request("missing id"))?;
    if state.index.position(&id).is_err() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown icon id: {id}")));
    }
    Ok(Json(hits(state.index.knn(KnnQuery::Id(&id), k)?)))
}

async fn search_by_upload(State(state): State<AppState>, Query(q): Query<SearchQuery>, body: Bytes) -> ApiResult<Json<Vec<Hit>>> {
    let k = check_k(q.k)?;
    let image = decode_image(&body)
        .map_err(|e| ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, format!("cannot decode image: {e}")))?;
    blocking(move || {
        let view = eval_view(&image, state.model.config().input_size)
            .map_err(|e| ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, e.to_string()))?;
        let embedding = state.model.embed_images(&[&view], 1)?.remove(0);
        Ok(Json(hits(state.index.knn(KnnQuery::Vector(&embedding), k)?)))
    })
    .await
}

#[derive(Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ModeName {
    #[default]
    Exhaustive,
    Beam,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetsRequest {
    keywords: Vec<String>,
    #[serde(default)]
    locked: HashMap<String, String>,
    #[serde(default)]
    mode: ModeName,
    beam_width: Option<usize>,
    top_n: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SetEntry {
    pub ids: Vec<String>,
    pub keywords: Vec<String>,
    pub score: f64,
    pub thumbnails: Vec<String>,
}

async fn sets(State(state): State<AppState>, Json(req): Json<SetsRequest>) -> ApiResult<Json<Vec<SetEntry>>> {
    if req.keywords.len() < 2 {
        return Err(ApiError::bad_request("at least two keywords are needed"));
    }
    let mode = match req.mode {
        ModeName::Exhaustive => SearchMode::Exhaustive {
            cap: DEFAULT_EXHAUSTIVE_CAP,
        },
        ModeName::Beam => SearchMode::Beam {
            width: req.beam_width.unwrap_or(DEFAULT_BEAM_WIDTH),
        },
    };
    let top_n = req.top_n.unwrap_or(DEFAULT_TOP_N);
    blocking(move || {
        let pools = pools_for_keywords(&state.index, &req.keywords)?;
        let found = lock_and_reoptimize(&pools, &req.locked, &state.index, mode, top_n)?;
        Ok(Json(
            found
                .into_iter()
                .map(|s| SetEntry {
                    thumbnails: s.ids.iter().map(|id| thumbnail_url(id)).collect(),
                    ids: s.ids,
                    keywords: s.keywords,
                    score: s.score,
                })
                .collect(),
        ))
    })
    .await
}

#[derive(Deserialize)]
struct KernelQuery {
    ids: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct KernelResponse {
    pub ids: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

async fn kernel(State(state): State<AppState>, Query(q): Query<KernelQuery>) -> ApiResult<Json<KernelResponse>> {
    let ids: Vec<String> = q
        .ids
        .as_deref()
        .unwrap_or("")
        .split(',')
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect();
    let matrix = state.index.kernel_matrix(&ids)?;
    Ok(Json(KernelResponse { ids, matrix }))
}

async fn projection(State(state): State<AppState>) -> ApiResult<Json<Projection>> {
    blocking(move || match state.projection() {
        Ok(p) => Ok(Json(p.clone())),
        Err(e) => Err(ApiError::bad_request(e)),
    })
    .await
}

async fn thumbnail(State(state): State<AppState>, Path(file): Path<String>) -> ApiResult<Response> {
    let id = file
        .strip_suffix(".png")
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not found"))?
        .to_owned();
    if state.record(&id).is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown icon id: {id}")));
    }
    let png = blocking(move || Ok(state.thumbnail(&id)?)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png.as_ref().clone()).into_response())
}

/// API routes, plus the UI directory served at `/` when given.
pub fn router(state: Arc<ServiceState>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/icons", get(icons))
        .route(
            "/api/search",
            get(search_by_id).post(search_by_upload).layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES)),
        )
        .route("/api/sets", post(sets))
        .route("/api/kernel", get(kernel))
        .route("/api/projection", get(projection))
        .route("/thumbnails/{file}", get(thumbnail))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
