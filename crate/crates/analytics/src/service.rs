use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use teidscope_core::gtpu::Teid;
use teidscope_core::ml::{argmax, TrainedModel};
use thiserror::Error;
use tokio::sync::Mutex;

use crate::features::latency_features;
use crate::session::{
    detect_degradation, Classification, Decision, DegradationPolicy, LatencyReport, SessionState,
    SessionSummary, Verdict,
};
use crate::AnalyticsError;

pub const NOTIFICATION_PATH: &str = "/v1/notifications";

#[derive(Debug, Error)]
pub enum NotifyError {
    #[error("SMF endpoint {endpoint} unreachable: {reason}")]
    EndpointUnreachable { endpoint: String, reason: String },
    #[error("SMF endpoint answered {status}")]
    Non2xxResponse { status: u16 },
}

/// Posts decisions to `{endpoint}/v1/notifications`, once, without retry.
#[derive(Debug, Clone)]
pub struct SmfNotifier {
    client: reqwest::Client,
    endpoint: String,
}

impl SmfNotifier {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("static client configuration");
        SmfNotifier {
            client,
            endpoint: endpoint.into().trim_end_matches('/').to_owned(),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Returns the HTTP status on a 2xx answer.
    pub async fn notify(&self, decision: &Decision) -> Result<u16, NotifyError> {
        let url = format!("{}{}", self.endpoint, NOTIFICATION_PATH);
        let resp = self
            .client
            .post(&url)
            .json(decision)
            .send()
            .await
            .map_err(|e| NotifyError::EndpointUnreachable {
                endpoint: url.clone(),
                reason: e.to_string(),
            })?;
        let status = resp.status();
        if status.is_success() {
            Ok(status.as_u16())
        } else {
            Err(NotifyError::Non2xxResponse {
                status: status.as_u16(),
            })
        }
    }
}

/// What happened to a decision on its way to the SMF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Notification {
    Sent { status: u16 },
    /// Inside the cooldown of the previous delivery.
    Suppressed { since_last_s: f64 },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub teid: Teid,
    pub ring_len: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<Classification>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notification: Option<Notification>,
    /// Set when automatic evaluation was attempted and failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectOutcome {
    pub decision: Decision,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notification: Option<Notification>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceStats {
    pub sessions: u64,
    pub reports_accepted: u64,
    pub reports_rejected: u64,
    pub decisions: u64,
    pub degraded_decisions: u64,
    pub notifications_sent: u64,
    pub notifications_suppressed: u64,
    pub notifications_failed: u64,
}

#[derive(Default)]
struct Counters {
    reports_accepted: AtomicU64,
    reports_rejected: AtomicU64,
    decisions: AtomicU64,
    degraded_decisions: AtomicU64,
    notifications_sent: AtomicU64,
    notifications_suppressed: AtomicU64,
    notifications_failed: AtomicU64,
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

pub struct ServiceOptions {
    pub model: Option<TrainedModel>,
    pub policy: DegradationPolicy,
    pub ring_capacity: usize,
    pub auto_evaluate: bool,
    pub notifier: Option<SmfNotifier>,
}

/// In-memory analytics state. Work on one TEID is serialized by that
/// session's lock; distinct TEIDs proceed independently.
pub struct AnalyticsService {
    sessions: RwLock<HashMap<Teid, Arc<Mutex<SessionState>>>>,
    model: Option<Arc<TrainedModel>>,
    policy: DegradationPolicy,
    ring_capacity: usize,
    auto_evaluate: bool,
    notifier: Option<SmfNotifier>,
    counters: Counters,
}

impl AnalyticsService {
    pub fn new(opts: ServiceOptions) -> Result<Self, AnalyticsError> {
        opts.policy.validate()?;
        Ok(AnalyticsService {
            sessions: RwLock::new(HashMap::new()),
            model: opts.model.map(Arc::new),
            policy: opts.policy,
            ring_capacity: opts.ring_capacity.max(1),
            auto_evaluate: opts.auto_evaluate,
            notifier: opts.notifier,
            counters: Counters::default(),
        })
    }

    pub fn model(&self) -> Option<&TrainedModel> {
        self.model.as_deref()
    }

    pub fn policy(&self) -> &DegradationPolicy {
        &self.policy
    }

    fn session(&self, teid: Teid) -> Option<Arc<Mutex<SessionState>>> {
        self.sessions.read().expect("session map poisoned").get(&teid).cloned()
    }

    fn session_or_create(&self, teid: Teid) -> Arc<Mutex<SessionState>> {
        if let Some(s) = self.session(teid) {
            return s;
        }
        let mut map = self.sessions.write().expect("session map poisoned");
        map.entry(teid)
            .or_insert_with(|| Arc::new(Mutex::new(SessionState::new(teid, self.ring_capacity))))
            .clone()
    }

    /// Appends a report to its TEID's ring, creating the session on first
    /// contact. With automatic evaluation on and a model loaded, the session
    /// is then classified, judged and, if degraded, reported to the SMF.
    pub async fn ingest_report(&self, report: LatencyReport) -> Result<IngestOutcome, AnalyticsError> {
        if let Err(e) = report.validate() {
            bump(&self.counters.reports_rejected);
            return Err(e);
        }
        let session = self.session_or_create(report.teid);
        let mut state = session.lock().await;
        state.push(report);
        bump(&self.counters.reports_accepted);

        let mut outcome = IngestOutcome {
            teid: state.teid,
            ring_len: state.reports.len(),
            classification: None,
            decision: None,
            notification: None,
            evaluation_error: None,
        };
        if !self.auto_evaluate || self.model.is_none() || state.reports.len() < self.policy.min_windows {
            return Ok(outcome);
        }
        match self.classify_locked(&mut state) {
            Ok(c) => outcome.classification = Some(c),
            Err(e) => {
                outcome.evaluation_error = Some(e.to_string());
                return Ok(outcome);
            }
        }
        match self.detect_locked(&mut state) {
            Ok(d) => {
                outcome.notification = self.notify_locked(&mut state, &d).await;
                outcome.decision = Some(d);
            }
            Err(e) => outcome.evaluation_error = Some(e.to_string()),
        }
        Ok(outcome)
    }

    pub async fn classify_session(&self, teid: Teid) -> Result<Classification, AnalyticsError> {
        let session = self.session(teid).ok_or(AnalyticsError::UnknownTeid(teid))?;
        let mut state = session.lock().await;
        self.classify_locked(&mut state)
    }

    /// Judges the session and forwards a degraded verdict to the SMF,
    /// subject to the cooldown.
    pub async fn detect_degradation(&self, teid: Teid) -> Result<DetectOutcome, AnalyticsError> {
        let session = self.session(teid).ok_or(AnalyticsError::UnknownTeid(teid))?;
        let mut state = session.lock().await;
        let decision = self.detect_locked(&mut state)?;
        let notification = self.notify_locked(&mut state, &decision).await;
        Ok(DetectOutcome {
            decision,
            notification,
        })
    }

    /// Session feature vector: the mean of the reporter-supplied vectors when
    /// enough reports carry one, otherwise latency statistics of the ring.
    fn session_features(&self, state: &SessionState, d: usize) -> Result<Vec<f64>, AnalyticsError> {
        let need = self.policy.min_windows;
        let have = state.reports.len();
        if have < need {
            return Err(AnalyticsError::InsufficientData {
                teid: state.teid,
                have,
                need,
            });
        }
        let supplied: Vec<&Vec<f64>> = state.reports.iter().filter_map(|r| r.features.as_ref()).collect();
        if supplied.is_empty() {
            return latency_features(&state.reports, d);
        }
        if supplied.len() < need {
            return Err(AnalyticsError::InsufficientData {
                teid: state.teid,
                have: supplied.len(),
                need,
            });
        }
        if let Some(bad) = supplied.iter().find(|f| f.len() != d) {
            return Err(AnalyticsError::FeatureMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        let mut mean = vec![0.0; d];
        for f in &supplied {
            for (m, v) in mean.iter_mut().zip(f.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= supplied.len() as f64);
        Ok(mean)
    }

    fn classify_locked(&self, state: &mut SessionState) -> Result<Classification, AnalyticsError> {
        let model = self.model.as_ref().ok_or(AnalyticsError::NoModelLoaded)?;
        let x = self.session_features(state, model.n_features)?;
        let probs = model.predict_proba(&[x])?.remove(0);
        let best = argmax(&probs);
        let c = Classification {
            game: model.class_names[best].clone(),
            class_index: best,
            confidence: probs[best],
        };
        state.classification = Some(c.clone());
        Ok(c)
    }

    fn detect_locked(&self, state: &mut SessionState) -> Result<Decision, AnalyticsError> {
        let d = detect_degradation(state, &self.policy)?;
        bump(&self.counters.decisions);
        if d.verdict == Verdict::Degraded {
            bump(&self.counters.degraded_decisions);
        }
        state.last_decision = Some(d.clone());
        Ok(d)
    }

    async fn notify_locked(&self, state: &mut SessionState, decision: &Decision) -> Option<Notification> {
        if decision.verdict != Verdict::Degraded {
            return None;
        }
        let notifier = self.notifier.as_ref()?;
        if let Some(last) = state.last_notified_at {
            let since = decision.issued_at - last;
            if since < self.policy.cooldown_s {
                bump(&self.counters.notifications_suppressed);
                return Some(Notification::Suppressed { since_last_s: since });
            }
        }
        match notifier.notify(decision).await {
            Ok(status) => {
                bump(&self.counters.notifications_sent);
                state.last_notified_at = Some(decision.issued_at);
                tracing::info!(teid = %decision.teid, status, "SMF notified");
                Some(Notification::Sent { status })
            }
            Err(e) => {
                bump(&self.counters.notifications_failed);
                tracing::warn!(teid = %decision.teid, error = %e, "SMF notification failed");
                Some(Notification::Failed { error: e.to_string() })
            }
        }
    }

    pub async fn session_summary(&self, teid: Teid) -> Option<SessionSummary> {
        let session = self.session(teid)?;
        let state = session.lock().await;
        Some(state.summary())
    }

    /// Every session, ordered by TEID.
    pub async fn dump(&self) -> Vec<SessionState> {
        let mut all: Vec<(Teid, Arc<Mutex<SessionState>>)> = self
            .sessions
            .read()
            .expect("session map poisoned")
            .iter()
            .map(|(t, s)| (*t, s.clone()))
            .collect();
        all.sort_by_key(|(t, _)| *t);
        let mut out = Vec::with_capacity(all.len());
        for (_, s) in all {
            out.push(s.lock().await.clone());
        }
        out
    }

    pub fn stats(&self) -> ServiceStats {
        let c = &self.counters;
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        ServiceStats {
            sessions: self.sessions.read().expect("session map poisoned").len() as u64,
            reports_accepted: get(&c.reports_accepted),
            reports_rejected: get(&c.reports_rejected),
            decisions: get(&c.decisions),
            degraded_decisions: get(&c.degraded_decisions),
            notifications_sent: get(&c.notifications_sent),
            notifications_suppressed: get(&c.notifications_suppressed),
            notifications_failed: get(&c.notifications_failed),
        }
    }
}
