//! Serves a [`GenerationBackend`] and [`Embedder`] over the `/v1/*` wire protocol.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};

use super::ApiError;
use crate::backend::wire::{EmbedResponse, TokenizeRequest, TokenizeResponse, WireRecord};
use crate::backend::{BackendInfo, EmbedRequest, Embedder, GenerationBackend, GenerationRequest};
use crate::error::Error;

#[derive(Clone)]
struct Backends {
    generator: Arc<dyn GenerationBackend>,
    embedder: Option<Arc<dyn Embedder>>,
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> crate::Result<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| match e {
            Error::MissingConfigEntry { .. } | Error::MissingRecord(_) => ApiError(StatusCode::NOT_FOUND, e.to_string()),
            other => other.into(),
        })
}

async fn info(State(b): State<Backends>) -> Result<Json<BackendInfo>, ApiError> {
    blocking(move || b.generator.info()).await.map(Json)
}

async fn generate(State(b): State<Backends>, Json(req): Json<GenerationRequest>) -> Result<Json<WireRecord>, ApiError> {
    blocking(move || {
        req.validate()?;
        b.generator.generate(&req).map(|r| WireRecord::from(&r))
    })
    .await
    .map(Json)
}

async fn tokenize(State(b): State<Backends>, Json(req): Json<TokenizeRequest>) -> Result<Json<TokenizeResponse>, ApiError> {
    blocking(move || b.generator.token_len(&req.text).map(|count| TokenizeResponse { count }))
        .await
        .map(Json)
}

async fn embed(State(b): State<Backends>, Json(req): Json<EmbedRequest>) -> Result<Json<EmbedResponse>, ApiError> {
    blocking(move || {
        let e = b
            .embedder
            .as_ref()
            .ok_or_else(|| Error::UnsupportedMode("this server has no embedder".into()))?;
        req.validate()?;
        let vectors = e.embed_texts(&req)?;
        let raw: Vec<Vec<f32>> = vectors.iter().map(|v| v.to_f32()).collect();
        Ok(EmbedResponse::from_vectors(&raw))
    })
    .await
    .map(Json)
}

pub fn router(generator: Arc<dyn GenerationBackend>, embedder: Option<Arc<dyn Embedder>>) -> Router {
    Router::new()
        .route("/v1/info", get(info))
        .route("/v1/generate", post(generate))
        .route("/v1/tokenize", post(tokenize))
        .route("/v1/embed", post(embed))
        .with_state(Backends { generator, embedder })
}
