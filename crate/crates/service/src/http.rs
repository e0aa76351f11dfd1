//! HTTP/1.1 routes over [`Service`]. Bodies are JSON except the binary
//! vector upload and export, which use the `FDMS` layout.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};

use crate::api::{
    parse_json, render, ApiError, ApiResult, IngestRequest, QueryRequest, Service, UploadManifest, DIGEST_HEADER,
    MANIFEST_HEADER,
};

type Shared = State<Arc<Service>>;

pub fn router(service: Arc<Service>) -> Router {
    let limit = service.config().max_request_bytes;
    Router::new()
        .route("/v1/query", post(query))
        .route("/v1/data", post(data))
        .route("/v1/models", post(register_model))
        .route("/v1/models/rank", get(rank))
        .route("/v1/admin/update", post(update))
        .route("/v1/status", get(status))
        .route("/v1/export", get(export))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(service)
}

/// Serves until ctrl-c.
pub async fn serve(service: Arc<Service>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(&service.config().listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        json_response(status, &self.body())
    }
}

fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], render(value)).into_response()
}

fn body(bytes: Result<Bytes, BytesRejection>, limit: usize) -> ApiResult<Bytes> {
    bytes.map_err(|r| match r.status() {
        StatusCode::PAYLOAD_TOO_LARGE => ApiError::PayloadTooLarge { size: limit + 1, limit },
        _ => ApiError::BadRequest(r.body_text()),
    })
}

/// Runs a blocking handler off the async workers.
async fn blocking<T, F>(service: Arc<Service>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| ApiError::Core(dms_core::Error::StorageFailure(std::io::Error::other(e.to_string()))))?
}

async fn query(State(service): Shared, bytes: Result<Bytes, BytesRejection>) -> Result<Response, ApiError> {
    let req: QueryRequest = parse_json(&body(bytes, service.config().max_request_bytes)?)?;
    let resp = blocking(service, move |s| s.query(req)).await?;
    Ok(json_response(StatusCode::OK, &resp))
}

/// JSON `{"records": [...]}`, or an `FDMS` body described by the manifest header.
async fn data(State(service): Shared, headers: HeaderMap, bytes: Result<Bytes, BytesRejection>) -> Result<Response, ApiError> {
    let bytes = body(bytes, service.config().max_request_bytes)?;
    let resp = match headers.get(MANIFEST_HEADER) {
        Some(value) => {
            let value = value
                .to_str()
                .map_err(|_| ApiError::BadRequest(format!("{MANIFEST_HEADER} is not ASCII")))?;
            let manifest = UploadManifest::from_header(value)?;
            blocking(service, move |s| s.ingest_binary(manifest, &bytes)).await?
        }
        None => {
            let req: IngestRequest = parse_json(&bytes)?;
            blocking(service, move |s| s.ingest(req)).await?
        }
    };
    Ok(json_response(StatusCode::OK, &resp))
}

async fn register_model(State(service): Shared, bytes: Result<Bytes, BytesRejection>) -> Result<Response, ApiError> {
    let reg = parse_json(&body(bytes, service.config().max_request_bytes)?)?;
    let record = blocking(service, move |s| s.register_model(reg)).await?;
    Ok(json_response(StatusCode::CREATED, &record))
}

async fn update(State(service): Shared) -> Result<Response, ApiError> {
    let summary = blocking(service, |s| s.force_update()).await?;
    Ok(json_response(StatusCode::OK, &summary))
}

async fn status(State(service): Shared) -> Result<Response, ApiError> {
    let status = blocking(service, |s| s.status()).await?;
    Ok(json_response(StatusCode::OK, &status))
}

#[derive(Debug, Deserialize)]
struct RankParams {
    dataset: String,
}

async fn rank(State(service): Shared, params: Result<Query<RankParams>, QueryRejection>) -> Result<Response, ApiError> {
    let Query(params) = params.map_err(|_| ApiError::BadRequest("missing `dataset` query parameter".into()))?;
    let resp = blocking(service, move |s| s.rank(&params.dataset)).await?;
    Ok(json_response(StatusCode::OK, &resp))
}

#[derive(Debug, Deserialize)]
struct ExportParams {
    source: Option<String>,
}

async fn export(State(service): Shared, Query(params): Query<ExportParams>) -> Result<Response, ApiError> {
    let export = blocking(service, move |s| s.export(params.source.as_deref())).await?;
    let header_value = |v: String| HeaderValue::from_str(&v).map_err(|e| ApiError::BadRequest(e.to_string()));
    let mut resp = (StatusCode::OK, export.vectors).into_response();
    let headers = resp.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    headers.insert(MANIFEST_HEADER, header_value(export.manifest.to_header())?);
    headers.insert(DIGEST_HEADER, header_value(export.sha256)?);
    headers.insert("x-dms-generation", header_value(export.generation.to_string())?);
    Ok(resp)
}
