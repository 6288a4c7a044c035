use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use teidscope_core::gtpu::Teid;
use teidscope_core::ml::{MlError, TrainedModel};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::config::ServiceConfig;
use crate::service::{AnalyticsService, ServiceOptions, SmfNotifier};
use crate::session::LatencyReport;
use crate::AnalyticsError;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: String,
        source: std::io::Error,
    },
    #[error("cannot load model {path}: {source}")]
    ModelLoadFailure { path: PathBuf, source: MlError },
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

impl IntoResponse for AnalyticsError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            AnalyticsError::MalformedReport(_) => (StatusCode::BAD_REQUEST, "malformed_report"),
            AnalyticsError::UnknownTeid(_) => (StatusCode::NOT_FOUND, "unknown_teid"),
            AnalyticsError::InsufficientData { .. } => (StatusCode::CONFLICT, "insufficient_data"),
            AnalyticsError::Unclassified(_) => (StatusCode::CONFLICT, "unclassified"),
            AnalyticsError::NoModelLoaded => (StatusCode::SERVICE_UNAVAILABLE, "no_model_loaded"),
            AnalyticsError::FeatureMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "feature_mismatch"),
            AnalyticsError::InvalidPolicy(_) | AnalyticsError::Model(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        (status, Json(json!({ "error": kind, "message": self.to_string() }))).into_response()
    }
}

fn parse_teid(raw: &str) -> Result<Teid, AnalyticsError> {
    raw.parse()
        .map_err(|_| AnalyticsError::MalformedReport(format!("{raw:?} is not a TEID")))
}

async fn post_report(State(svc): State<Arc<AnalyticsService>>, body: Bytes) -> Result<impl IntoResponse, AnalyticsError> {
    let report: LatencyReport =
        serde_json::from_slice(&body).map_err(|e| AnalyticsError::MalformedReport(e.to_string()))?;
    let outcome = svc.ingest_report(report).await?;
    Ok((StatusCode::ACCEPTED, Json(outcome)))
}

async fn get_session(State(svc): State<Arc<AnalyticsService>>, Path(raw): Path<String>) -> Result<impl IntoResponse, AnalyticsError> {
    let teid = parse_teid(&raw)?;
    let summary = svc.session_summary(teid).await.ok_or(AnalyticsError::UnknownTeid(teid))?;
    Ok(Json(summary))
}

async fn dump_sessions(State(svc): State<Arc<AnalyticsService>>) -> impl IntoResponse {
    Json(svc.dump().await)
}

async fn classify(State(svc): State<Arc<AnalyticsService>>, Path(raw): Path<String>) -> Result<impl IntoResponse, AnalyticsError> {
    let teid = parse_teid(&raw)?;
    Ok(Json(svc.classify_session(teid).await?))
}

async fn detect(State(svc): State<Arc<AnalyticsService>>, Path(raw): Path<String>) -> Result<impl IntoResponse, AnalyticsError> {
    let teid = parse_teid(&raw)?;
    Ok(Json(svc.detect_degradation(teid).await?))
}

async fn stats(State(svc): State<Arc<AnalyticsService>>) -> impl IntoResponse {
    Json(svc.stats())
}

async fn healthz(State(svc): State<Arc<AnalyticsService>>) -> impl IntoResponse {
    Json(json!({ "status": "ok", "model_loaded": svc.model().is_some() }))
}

pub fn router(service: Arc<AnalyticsService>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/reports", post(post_report))
        .route("/v1/sessions", get(dump_sessions))
        .route("/v1/sessions/{teid}", get(get_session))
        .route("/v1/classify/{teid}", post(classify))
        .route("/v1/detect/{teid}", post(detect))
        .route("/v1/stats", get(stats))
        .with_state(service)
}

/// Builds the service described by `config`, loading the model if one is
/// configured.
pub fn build_service(config: &ServiceConfig) -> Result<AnalyticsService, ServeError> {
    let model = match &config.model_path {
        Some(path) => Some(TrainedModel::load(path).map_err(|source| ServeError::ModelLoadFailure {
            path: path.clone(),
            source,
        })?),
        None => None,
    };
    let notifier = config
        .smf_endpoint
        .as_ref()
        .map(|e| SmfNotifier::new(e.clone(), Duration::from_millis(config.notify_timeout_ms)));
    Ok(AnalyticsService::new(ServiceOptions {
        model,
        policy: config.policy.clone(),
        ring_capacity: config.ring_capacity,
        auto_evaluate: config.auto_evaluate,
        notifier,
    })?)
}

pub async fn bind(addr: &str) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|source| ServeError::BindFailure {
        addr: addr.to_owned(),
        source,
    })
}

/// A server running on a background task.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting connections and waits for in-flight requests.
    pub async fn shutdown(mut self) -> Result<(), ServeError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.task
            .await
            .map_err(|e| ServeError::Io(std::io::Error::other(e)))??;
        Ok(())
    }
}

pub fn spawn_router(listener: TcpListener, app: Router) -> Result<ServerHandle, ServeError> {
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        task,
    })
}

/// Loads the model, binds `config.listen_addr` and serves on a background
/// task.
pub async fn start(config: &ServiceConfig) -> Result<(ServerHandle, Arc<AnalyticsService>), ServeError> {
    let service = Arc::new(build_service(config)?);
    let listener = bind(&config.listen_addr).await?;
    let handle = spawn_router(listener, router(service.clone()))?;
    tracing::info!(addr = %handle.local_addr(), model = service.model().is_some(), "analytics service listening");
    Ok((handle, service))
}

/// Serves until `signal` resolves, then drains in-flight requests.
pub async fn serve<F>(config: &ServiceConfig, signal: F) -> Result<(), ServeError>
where
    F: Future<Output = ()> + Send + 'static,
{
    let (handle, _) = start(config).await?;
    signal.await;
    tracing::info!("shutting down");
    handle.shutdown().await
}
