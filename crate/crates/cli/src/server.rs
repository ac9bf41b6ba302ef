//! HTTP prediction service.
//!
//! `POST /predict` takes a multipart form with an `image` file and a
//! `prompt` text field and answers with the heatmap as a base64 16-bit PNG
//! plus the logit range needed to undo its min-max scaling. `GET /health`
//! reports the loaded model.

use std::sync::Arc;

use affordance_core::data::imageio;
use affordance_core::model::AffordanceModel;
use affordance_core::Error;
use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_BODY_BYTES: usize = 16 * 1024 * 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub width: usize,
    pub height: usize,
    /// Base64 of a 16-bit grayscale PNG of the min-max scaled logits.
    pub heatmap: String,
    pub min_logit: f64,
    pub max_logit: f64,
    pub model_tag: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_tag: String,
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    Status(StatusCode, String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::BadRequest(msg) => (StatusCode::BAD_REQUEST, Json(serde_json::json!({ "error": msg }))).into_response(),
            ApiError::Status(code, msg) => (code, Json(serde_json::json!({ "error": msg }))).into_response(),
            ApiError::Internal(detail) => {
                let id = uuid::Uuid::new_v4().to_string();
                tracing::error!(%id, %detail, "request failed");
                (
                    StatusCode::INTERNAL_SERVER_ERROR,
                    Json(serde_json::json!({ "error": "internal error", "id": id })),
                )
                    .into_response()
            }
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            ApiError::BadRequest(e.to_string())
        } else {
            ApiError::Internal(e.to_string())
        }
    }
}

/// Runs the model on encoded image bytes. Shared by the CLI and the
/// service so both emit identical heatmaps.
pub fn predict_bytes(model: &AffordanceModel, image: &[u8], prompt: &str) -> Result<PredictResponse, Error> {
    let decoded = imageio::decode(image)?;
    let rgb = imageio::rgb_from_dynamic(&decoded);
    let pred = model.predict(&rgb, prompt)?;
    let (min_logit, max_logit) = pred.min_max();
    let png = imageio::encode_gray16(&pred.normalized())?;
    Ok(PredictResponse {
        width: rgb.dim().1,
        height: rgb.dim().0,
        heatmap: base64::engine::general_purpose::STANDARD.encode(png),
        min_logit,
        max_logit,
        model_tag: model.tag().to_string(),
    })
}

async fn health(State(model): State<Arc<AffordanceModel>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model_tag: model.tag().to_string(),
    })
}

async fn predict(State(model): State<Arc<AffordanceModel>>, mut form: Multipart) -> Result<Json<PredictResponse>, ApiError> {
    let (mut image, mut prompt) = (None, None);
    loop {
        let field = match form.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => return Err(ApiError::Status(e.status(), e.body_text())),
        };
        let name = field.name().unwrap_or_default().to_string();
        match name.as_str() {
            "image" => image = Some(field.bytes().await.map_err(|e| ApiError::Status(e.status(), e.body_text()))?),
            "prompt" => prompt = Some(field.text().await.map_err(|e| ApiError::Status(e.status(), e.body_text()))?),
            _ => {}
        }
    }
    let image = image.ok_or_else(|| ApiError::BadRequest("missing form field \"image\"".into()))?;
    let prompt = prompt.ok_or_else(|| ApiError::BadRequest("missing form field \"prompt\"".into()))?;
    if prompt.trim().is_empty() {
        return Err(ApiError::BadRequest("prompt is empty".into()));
    }
    let result = tokio::task::spawn_blocking(move || predict_bytes(&model, &image, &prompt))
        .await
        .map_err(|e| ApiError::Internal(format!("inference task failed: {e}")))?;
    Ok(Json(result?))
}

pub fn router(model: Arc<AffordanceModel>, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/predict", post(predict))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(model)
}

pub async fn serve(model: Arc<AffordanceModel>, addr: std::net::SocketAddr, max_body_bytes: usize) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, tag = model.tag(), "serving");
    axum::serve(listener, router(model, max_body_bytes))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
