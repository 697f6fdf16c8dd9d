use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lusnet_core::ingest::{ClassCounts, CropWindow, DatasetManifest, Probe};
use lusnet_core::{Class, CLASS_ORDER};
use serde::Serialize;
use serde_json::json;

use crate::config::ServiceConfig;
use crate::ensemble::{load_ensemble, Ensemble};
use crate::error::{ApiError, ServiceError};
use crate::store::{
    ClaimedLabel, ContributionRecord, ContributionStore, NewContribution, ReviewDecision, ReviewStatus, StoreError,
    Submission,
};
use crate::API_VERSION;

/// Multipart framing and metadata allowance on top of the media limit.
const FORM_OVERHEAD_BYTES: usize = 1 << 20;

#[derive(Clone)]
pub struct AppState {
    pub ensemble: Arc<Ensemble>,
    pub store: Arc<ContributionStore>,
    /// Dataset counts before any contributions.
    pub base_counts: Arc<BTreeMap<Class, ClassCounts>>,
    pub max_upload_bytes: usize,
    pub admin_token: Option<Arc<str>>,
}

impl AppState {
    pub fn new(ensemble: Ensemble, store: ContributionStore) -> Self {
        AppState {
            ensemble: Arc::new(ensemble),
            store: Arc::new(store),
            base_counts: Arc::new(BTreeMap::new()),
            max_upload_bytes: crate::config::DEFAULT_MAX_UPLOAD_BYTES,
            admin_token: None,
        }
    }

    /// Loads models, opens storage and reads the optional manifest.
    pub fn from_config(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let ensemble = load_ensemble(&config.model_dir)?;
        let store = ContributionStore::open(&config.storage_root).map_err(|e| ServiceError::Config(e.to_string()))?;
        let mut state = AppState::new(ensemble, store);
        if let Some(path) = &config.manifest {
            state.base_counts = Arc::new(DatasetManifest::load(path)?.counts);
        }
        state.max_upload_bytes = config.max_upload_bytes;
        state.admin_token = config.admin_token.as_deref().map(Arc::from);
        Ok(state)
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.max_upload_bytes.saturating_add(FORM_OVERHEAD_BYTES);
    Router::new()
        .route("/api/health", get(health))
        .route("/api/stats", get(stats))
        .route("/api/predict", post(predict))
        .route("/api/contribute", post(contribute))
        .route("/api/admin/review/:id", post(review))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Binds `config.bind` and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let state = AppState::from_config(&config)?;
    log::info!(
        "serving {} model(s), version {}, on {}",
        state.ensemble.len(),
        state.ensemble.model_version(),
        config.bind
    );
    let listener = tokio::net::TcpListener::bind(config.bind).await.map_err(|source| ServiceError::Io {
        path: config.bind.to_string().into(),
        source,
    })?;
    axum::serve(listener, router(state)).await.map_err(|source| ServiceError::Io {
        path: config.bind.to_string().into(),
        source,
    })
}

#[derive(Serialize)]
struct Versioned<T> {
    version: &'static str,
    #[serde(flatten)]
    body: T,
}

fn versioned<T: Serialize>(body: T) -> Json<Versioned<T>> {
    Json(Versioned {
        version: API_VERSION,
        body,
    })
}

async fn health(State(state): State<AppState>) -> impl IntoResponse {
    Json(json!({
        "version": API_VERSION,
        "status": "ok",
        "models": state.ensemble.len(),
        "folds": state.ensemble.folds(),
        "model_version": state.ensemble.model_version(),
        "input_side": state.ensemble.input_side(),
    }))
}

async fn stats(State(state): State<AppState>) -> Result<impl IntoResponse, ApiError> {
    let store = state.store.clone();
    let (approved, records) = tokio::task::spawn_blocking(move || Ok::<_, StoreError>((store.approved_counts()?, store.list()?)))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(store_error)?;
    let mut classes = BTreeMap::new();
    let mut total = ClassCounts::default();
    for class in CLASS_ORDER {
        let base = state.base_counts.get(&class).copied().unwrap_or_default();
        let extra = approved.get(&class).copied().unwrap_or_default();
        let c = ClassCounts {
            videos: base.videos + extra.videos,
            frames: base.frames + extra.frames,
        };
        total.videos += c.videos;
        total.frames += c.frames;
        classes.insert(class, c);
    }
    let count = |s: ReviewStatus| records.iter().filter(|r| r.status == s).count();
    Ok(Json(json!({
        "version": API_VERSION,
        "classes": classes,
        "total": total,
        "contributions": {
            "pending_review": count(ReviewStatus::PendingReview),
            "approved": count(ReviewStatus::Approved),
            "rejected": count(ReviewStatus::Rejected),
        },
    })))
}

struct Upload {
    name: Option<String>,
    bytes: Vec<u8>,
}

#[derive(Default)]
struct Form {
    files: Vec<Upload>,
    fields: BTreeMap<String, Vec<String>>,
}

impl Form {
    fn field(&self, name: &str) -> Option<&str> {
        self.fields.get(name).and_then(|v| v.first()).map(|s| s.as_str())
    }
}

const FILE_FIELDS: &[&str] = &["file", "files", "media", "image", "video"];

async fn read_form(mut multipart: Multipart, limit: usize) -> Result<Form, ApiError> {
    let mut form = Form::default();
    let fail = |e: axum::extract::multipart::MultipartError| ApiError::new(e.status(), e.body_text());
    while let Some(field) = multipart.next_field().await.map_err(fail)? {
        let name = field.name().unwrap_or_default().to_string();
        if FILE_FIELDS.contains(&name.as_str()) || field.file_name().is_some() {
            let file_name = field.file_name().map(String::from);
            let bytes = field.bytes().await.map_err(fail)?;
            if bytes.len() > limit {
                return Err(ApiError::too_large(limit));
            }
            form.files.push(Upload {
                name: file_name,
                bytes: bytes.to_vec(),
            });
        } else {
            let text = field.text().await.map_err(fail)?;
            form.fields.entry(name).or_default().push(text);
        }
    }
    Ok(form)
}

fn crop_from(form: &Form) -> Result<Option<CropWindow>, ApiError> {
    let parse = |k: &str| {
        form.field(k)
            .filter(|v| !v.trim().is_empty())
            .map(|v| v.trim().parse::<u32>().map_err(|_| ApiError::bad_request(format!("{k} must be a non-negative integer"))))
            .transpose()
    };
    match (parse("crop_x")?, parse("crop_y")?, parse("crop_side")?) {
        (Some(x), Some(y), Some(side)) => Ok(Some(CropWindow::new(x, y, side))),
        (None, None, None) => Ok(None),
        _ => Err(ApiError::bad_request("crop_x, crop_y and crop_side must be given together")),
    }
}

async fn predict(State(state): State<AppState>, multipart: Multipart) -> Result<Response, ApiError> {
    let mut form = read_form(multipart, state.max_upload_bytes).await?;
    let crop = crop_from(&form)?;
    if form.files.len() != 1 {
        return Err(ApiError::bad_request(format!("expected one file, got {}", form.files.len())));
    }
    let bytes = form.files.pop().expect("one file").bytes;
    let ensemble = state.ensemble.clone();
    let result = tokio::task::spawn_blocking(move || ensemble.predict_upload(&bytes, crop))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(result).into_response())
}

fn store_error(e: StoreError) -> ApiError {
    match e {
        StoreError::UnsupportedMedia(m) => ApiError::unsupported(m),
        StoreError::Invalid(m) => ApiError::unprocessable(m),
        StoreError::NotFound(id) => ApiError::new(StatusCode::NOT_FOUND, format!("no contribution with id {id:?}")),
        other => {
            log::error!("{other}");
            ApiError::internal(other.to_string())
        }
    }
}

#[derive(Serialize)]
struct Receipt {
    #[serde(flatten)]
    record: ContributionRecord,
    duplicate: bool,
}

impl From<Submission> for Receipt {
    fn from(s: Submission) -> Self {
        Receipt {
            record: s.record,
            duplicate: s.duplicate,
        }
    }
}

/// One file answers with its record; several files (bulk) with `records`.
/// Dedup keys pair with files in order; a single key for a bulk upload is
/// suffixed with the file's position.
async fn contribute(State(state): State<AppState>, multipart: Multipart) -> Result<Response, ApiError> {
    let form = read_form(multipart, state.max_upload_bytes).await?;
    if form.files.is_empty() {
        return Err(ApiError::bad_request("no file in upload"));
    }
    let label = form
        .field("label")
        .or(form.field("claimed_label"))
        .map(|l| l.parse::<ClaimedLabel>().map_err(ApiError::unprocessable))
        .transpose()?;
    let probe = form
        .field("probe")
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.parse::<Probe>().map_err(|e| ApiError::unprocessable(e.to_string())))
        .transpose()?;
    let keys = form.fields.get("dedup_key").cloned().unwrap_or_default();
    let n = form.files.len();
    if keys.len() > 1 && keys.len() != n {
        return Err(ApiError::bad_request(format!("{} dedup keys for {n} files", keys.len())));
    }
    if label.is_none() {
        return Err(ApiError::unprocessable("a label (or \"unknown\") is required"));
    }
    // reject the whole batch before anything is stored
    if let Some(bad) = form.files.iter().find(|f| crate::media::sniff(&f.bytes).is_none()) {
        return Err(ApiError::unsupported(format!(
            "{}: unsupported media type",
            bad.name.as_deref().unwrap_or("upload")
        )));
    }

    let uploads: Vec<NewContribution> = form
        .files
        .iter()
        .enumerate()
        .map(|(i, f)| NewContribution {
            media: f.bytes.clone(),
            original_name: f.name.clone(),
            uploader: form.field("uploader").unwrap_or_default().to_string(),
            claimed_label: label,
            probe,
            notes: form.field("notes").unwrap_or_default().to_string(),
            dedup_key: match keys.len() {
                0 => None,
                1 if n == 1 => Some(keys[0].clone()),
                1 => Some(format!("{}#{i}", keys[0])),
                _ => Some(keys[i].clone()),
            },
        })
        .collect();
    let store = state.store.clone();
    let receipts: Vec<Receipt> = tokio::task::spawn_blocking(move || {
        uploads
            .into_iter()
            .map(|u| store.submit(u).map(Receipt::from))
            .collect::<Result<Vec<_>, _>>()
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(store_error)?;

    let status = if receipts.iter().any(|r| !r.duplicate) {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    if n == 1 {
        let receipt = receipts.into_iter().next().expect("one receipt");
        Ok((status, versioned(receipt)).into_response())
    } else {
        Ok((status, Json(json!({ "version": API_VERSION, "records": receipts }))).into_response())
    }
}

fn authorize(headers: &HeaderMap, token: Option<&str>) -> Result<(), ApiError> {
    let Some(expected) = token else {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "review is disabled: no admin token configured"));
    };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    match given {
        Some(t) if constant_time_eq(t.trim().as_bytes(), expected.as_bytes()) => Ok(()),
        _ => Err(ApiError::new(StatusCode::UNAUTHORIZED, "missing or invalid bearer token")),
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn review(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<ReviewDecision>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ApiError> {
    authorize(&headers, state.admin_token.as_deref())?;
    let Json(decision) = body.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
    let store = state.store.clone();
    let record = tokio::task::spawn_blocking(move || store.review(&id, decision))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(store_error)?;
    Ok(versioned(record).into_response())
}
