//! Stand-in SMF that records every notification it receives.

use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::post;
use axum::{Json, Router};

use crate::http::{bind, spawn_router, ServeError, ServerHandle};
use crate::service::NOTIFICATION_PATH;
use crate::session::Decision;

#[derive(Debug, Clone)]
pub struct SmfStubOptions {
    /// Status returned for every notification.
    pub status: u16,
    /// Each received decision is appended here as one JSON line.
    pub log_path: Option<PathBuf>,
}

impl Default for SmfStubOptions {
    fn default() -> Self {
        SmfStubOptions {
            status: 204,
            log_path: None,
        }
    }
}

#[derive(Clone)]
struct StubState {
    received: Arc<Mutex<Vec<Decision>>>,
    status: StatusCode,
    log_path: Option<PathBuf>,
}

async fn receive(State(st): State<StubState>, Json(decision): Json<Decision>) -> impl IntoResponse {
    tracing::info!(teid = %decision.teid, game = %decision.game, "SMF stub received notification");
    if let Some(path) = &st.log_path {
        let line = serde_json::to_string(&decision).expect("decision serializes");
        let written = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = written {
            tracing::error!(error = %e, "SMF stub cannot write its log");
            return StatusCode::INTERNAL_SERVER_ERROR;
        }
    }
    st.received.lock().expect("stub log poisoned").push(decision);
    st.status
}

async fn list(State(st): State<StubState>) -> impl IntoResponse {
    Json(st.received.lock().expect("stub log poisoned").clone())
}

pub struct SmfStub {
    server: ServerHandle,
    received: Arc<Mutex<Vec<Decision>>>,
}

impl SmfStub {
    pub async fn start(addr: &str, opts: SmfStubOptions) -> Result<Self, ServeError> {
        let status = StatusCode::from_u16(opts.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let received = Arc::new(Mutex::new(Vec::new()));
        let state = StubState {
            received: received.clone(),
            status,
            log_path: opts.log_path,
        };
        let app = Router::new()
            .route(NOTIFICATION_PATH, post(receive).get(list))
            .with_state(state);
        let server = spawn_router(bind(addr).await?, app)?;
        Ok(SmfStub { server, received })
    }

    pub fn endpoint(&self) -> String {
        self.server.base_url()
    }

    pub fn received(&self) -> Vec<Decision> {
        self.received.lock().expect("stub log poisoned").clone()
    }

    pub async fn shutdown(self) -> Result<(), ServeError> {
        self.server.shutdown().await
    }
}
