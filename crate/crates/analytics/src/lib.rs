//! Latency analytics service.
//!
//! Measurement points push per-TEID [`LatencyReport`]s. The service keeps a
//! bounded history per TEID, classifies the session's game with a trained
//! model, turns the history into a [`Decision`] under a
//! [`DegradationPolicy`] and notifies an SMF endpoint of degradations.

pub mod config;
pub mod features;
pub mod http;
pub mod service;
pub mod session;
pub mod smf_stub;

use teidscope_core::gtpu::Teid;
use teidscope_core::ml::MlError;
use thiserror::Error;

pub use config::{ConfigError, ServiceConfig};
pub use http::{build_service, router, serve, start, ServeError, ServerHandle};
pub use service::{AnalyticsService, IngestOutcome, Notification, NotifyError, ServiceOptions, ServiceStats, SmfNotifier};
pub use session::{
    detect_degradation, Classification, Decision, DegradationPolicy, Evidence, LatencyReport, SessionState,
    SessionSummary, Verdict,
};
pub use smf_stub::{SmfStub, SmfStubOptions};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("malformed report: {0}")]
    MalformedReport(String),
    #[error("unknown TEID {0}")]
    UnknownTeid(Teid),
    #[error("TEID {teid}: {have} usable windows, {need} required")]
    InsufficientData { teid: Teid, have: usize, need: usize },
    #[error("no model loaded")]
    NoModelLoaded,
    #[error("TEID {0} has not been classified")]
    Unclassified(Teid),
    #[error("feature vector has {got} values, model expects {expected}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("invalid policy: {0}")]
    InvalidPolicy(&'static str),
    #[error(transparent)]
    Model(#[from] MlError),
}
