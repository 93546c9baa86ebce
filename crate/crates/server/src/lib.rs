//! HTTP inference service over a loaded checkpoint.
//!
//! Endpoints:
//!
//! - `GET /health` returns `{"status":"ok","model":"<id>"}`
//! - `GET /vocab` returns `{"answers":[...]}`
//! - `POST /predict` takes `{"image": base64, "question": str, "top_k": int?}`
//!
//! Errors are `{"error": "..."}` with status 400, 413 or 500.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use medvqa_core::corpus::AnswerVocabulary;
use medvqa_core::encoders::{Checkpoint, ImageTensor};
use medvqa_core::fusion::Prediction;
use medvqa_core::VqaModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::net::TcpListener;

/// Largest accepted decoded image.
pub const MAX_IMAGE_BYTES: usize = 8 * 1024 * 1024;
/// Request body limit; leaves room for base64 expansion of an oversize image
/// so that it is reported as such.
pub const MAX_BODY_BYTES: usize = 16 * 1024 * 1024;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("cannot load `{path}`: {source}")]
    Load {
        path: PathBuf,
        source: medvqa_core::Error,
    },
    #[error("checkpoint has {model} answer classes but the vocabulary has {vocab}")]
    VocabularyMismatch { model: usize, vocab: usize },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable model state shared by all requests.
#[derive(Debug)]
pub struct Service {
    pub model: VqaModel,
    pub answers: AnswerVocabulary,
    pub model_id: String,
}

/// `{file stem}-{first 12 hex digits of the checkpoint's SHA-256}`.
pub fn model_id(path: &Path, bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    format!("{stem}-{hex}")
}

impl Service {
    pub fn new(model: VqaModel, answers: AnswerVocabulary, model_id: String) -> Result<Self, ServerError> {
        if model.n_answers() != answers.len() {
            return Err(ServerError::VocabularyMismatch {
                model: model.n_answers(),
                vocab: answers.len(),
            });
        }
        Ok(Self {
            model,
            answers,
            model_id,
        })
    }

    pub fn load(checkpoint: &Path, vocab: &Path) -> Result<Self, ServerError> {
        let load_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ServerError::Load { path, source }
        };
        let bytes = std::fs::read(checkpoint)
            .map_err(|e| load_err(checkpoint)(medvqa_core::Error::Io(e)))?;
        let model = Checkpoint::from_bytes(&bytes)
            .and_then(|ck| VqaModel::from_checkpoint(&ck))
            .map_err(load_err(checkpoint))?;
        let answers = AnswerVocabulary::load(vocab).map_err(load_err(vocab))?;
        Self::new(model, answers, model_id(checkpoint, &bytes))
    }

    /// Decodes and resizes an encoded image to the model's input shape.
    pub fn decode_image(&self, bytes: &[u8]) -> medvqa_core::Result<ImageTensor> {
        ImageTensor::decode(bytes, self.model.config.image_side, self.model.config.image_channels)
    }

    pub fn predict(&self, image: &ImageTensor, question: &str, top_k: usize) -> medvqa_core::Result<Prediction> {
        self.model
            .predict(image, question, &self.answers, top_k.clamp(1, self.answers.len()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictRequest {
    pub image: String,
    pub question: String,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub answer: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub answer: String,
    pub confidence: f64,
    pub top_k: Vec<Scored>,
    pub model_id: String,
    pub latency_ms: f64,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

/// Accepts plain base64 or a `data:` URL.
fn decode_base64(text: &str) -> Result<Vec<u8>, ApiError> {
    let payload = match text.split_once(";base64,") {
        Some((prefix, rest)) if prefix.starts_with("data:") => rest,
        _ => text,
    };
    base64::engine::general_purpose::STANDARD
        .decode(payload.trim())
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("image is not valid base64: {e}")))
}

/// Request handling without the HTTP layer.
pub fn handle_predict(service: &Service, req: &PredictRequest) -> Result<PredictResponse, ApiError> {
    let start = Instant::now();
    let top_k = req.top_k.unwrap_or(DEFAULT_TOP_K);
    if top_k == 0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "top_k must be at least 1"));
    }
    let bytes = decode_base64(&req.image)?;
    if bytes.len() > MAX_IMAGE_BYTES {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("image is {} bytes, limit is {MAX_IMAGE_BYTES}", bytes.len()),
        ));
    }
    let image = service
        .decode_image(&bytes)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let pred = service
        .predict(&image, &req.question, top_k)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(PredictResponse {
        answer: pred.answer,
        confidence: pred.confidence,
        top_k: pred
            .top_k
            .into_iter()
            .map(|(answer, prob)| Scored { answer, prob })
            .collect(),
        model_id: service.model_id.clone(),
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

async fn health(State(s): State<Arc<Service>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "model": s.model_id }))
}

async fn vocab(State(s): State<Arc<Service>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "answers": s.answers.answers() }))
}

async fn predict(
    State(s): State<Arc<Service>>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<PredictResponse>, ApiError> {
    let body = body.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
    let req: PredictRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))?;
    tokio::task::spawn_blocking(move || handle_predict(&s, &req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map(Json)
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/vocab", get(vocab))
        .route("/predict", post(predict))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(service)
}

/// Binds `addr`; fails if the port is taken.
pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServerError::Bind { addr, source })
}

/// Serves until the process is stopped.
pub async fn serve(service: Arc<Service>, listener: TcpListener) -> Result<(), ServerError> {
    log::info!(
        "serving {} on {}",
        service.model_id,
        listener.local_addr()?
    );
    axum::serve(listener, router(service)).await?;
    Ok(())
}
