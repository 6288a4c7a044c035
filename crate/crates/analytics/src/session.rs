use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use teidscope_core::gtpu::Teid;
use teidscope_core::tracker::WindowStat;

use crate::AnalyticsError;

/// Aggregated latency of one TEID over one window, as pushed by the
/// measurement point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub teid: Teid,
    /// Window start, seconds on the reporter's clock.
    pub window_start: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub sample_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

impl LatencyReport {
    pub fn from_window(teid: Teid, w: &WindowStat) -> Self {
        LatencyReport {
            teid,
            window_start: w.start,
            mean_ms: w.mean_ms.clamp(w.min_ms, w.max_ms),
            min_ms: w.min_ms,
            max_ms: w.max_ms,
            sample_count: w.count as u64,
            features: None,
        }
    }

    pub fn validate(&self) -> Result<(), AnalyticsError> {
        let malformed = |msg: String| Err(AnalyticsError::MalformedReport(msg));
        if !self.window_start.is_finite() {
            return malformed("window_start must be finite".into());
        }
        for (name, v) in [("mean_ms", self.mean_ms), ("min_ms", self.min_ms), ("max_ms", self.max_ms)] {
            if !v.is_finite() || v < 0.0 {
                return malformed(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !(self.min_ms <= self.mean_ms && self.mean_ms <= self.max_ms) {
            return malformed(format!(
                "expected min_ms <= mean_ms <= max_ms, got {} / {} / {}",
                self.min_ms, self.mean_ms, self.max_ms
            ));
        }
        if self.sample_count == 0 {
            return malformed("sample_count must be >= 1".into());
        }
        if let Some(f) = &self.features {
            if f.is_empty() || f.iter().any(|v| !v.is_finite()) {
                return malformed("features must be a non-empty vector of finite numbers".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub game: String,
    pub class_index: usize,
    /// Model probability of `game`.
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Healthy,
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    /// Share of ring windows whose mean exceeded the budget.
    pub breach_fraction: f64,
    /// Policy threshold the share was compared against.
    pub threshold: f64,
    pub budget_ms: f64,
    pub windows: usize,
    pub breaches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub teid: Teid,
    pub verdict: Verdict,
    pub game: String,
    pub evidence: Evidence,
    /// Start of the newest window considered, on the reporter's clock.
    pub issued_at: f64,
}

/// Thresholds turning a window history into a verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationPolicy {
    /// Budget for classes without an entry in `budgets_ms`.
    pub default_budget_ms: f64,
    pub budgets_ms: BTreeMap<String, f64>,
    pub breach_fraction: f64,
    pub min_windows: usize,
    pub cooldown_s: f64,
}

impl Default for DegradationPolicy {
    fn default() -> Self {
        DegradationPolicy {
            default_budget_ms: 100.0,
            budgets_ms: BTreeMap::new(),
            breach_fraction: 0.5,
            min_windows: 4,
            cooldown_s: 30.0,
        }
    }
}

impl DegradationPolicy {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if !(self.default_budget_ms > 0.0) || self.budgets_ms.values().any(|b| !(*b > 0.0)) {
            return Err(AnalyticsError::InvalidPolicy("budgets must be > 0"));
        }
        if !(self.breach_fraction > 0.0 && self.breach_fraction <= 1.0) {
            return Err(AnalyticsError::InvalidPolicy("breach_fraction must be in (0, 1]"));
        }
        if self.min_windows == 0 {
            return Err(AnalyticsError::InvalidPolicy("min_windows must be >= 1"));
        }
        if !(self.cooldown_s >= 0.0) {
            return Err(AnalyticsError::InvalidPolicy("cooldown_s must be >= 0"));
        }
        Ok(())
    }

    pub fn budget_for(&self, game: &str) -> f64 {
        self.budgets_ms.get(game).copied().unwrap_or(self.default_budget_ms)
    }
}

/// Everything the service knows about one TEID.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub teid: Teid,
    pub capacity: usize,
    /// Oldest first.
    pub reports: VecDeque<LatencyReport>,
    pub classification: Option<Classification>,
    pub last_decision: Option<Decision>,
    /// `issued_at` of the last decision delivered to the SMF.
    pub last_notified_at: Option<f64>,
    pub reports_seen: u64,
}

impl SessionState {
    pub fn new(teid: Teid, capacity: usize) -> Self {
        SessionState {
            teid,
            capacity: capacity.max(1),
            reports: VecDeque::with_capacity(capacity.max(1)),
            classification: None,
            last_decision: None,
            last_notified_at: None,
            reports_seen: 0,
        }
    }

    pub fn push(&mut self, report: LatencyReport) {
        if self.reports.len() == self.capacity {
            self.reports.pop_front();
        }
        self.reports.push_back(report);
        self.reports_seen += 1;
    }

    pub fn summary(&self) -> SessionSummary {
        let latest = self.reports.back();
        SessionSummary {
            teid: self.teid,
            ring_len: self.reports.len(),
            capacity: self.capacity,
            reports_seen: self.reports_seen,
            latest_window_start: latest.map(|r| r.window_start),
            latest_mean_ms: latest.map(|r| r.mean_ms),
            classification: self.classification.clone(),
            last_decision: self.last_decision.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub teid: Teid,
    pub ring_len: usize,
    pub capacity: usize,
    pub reports_seen: u64,
    pub latest_window_start: Option<f64>,
    pub latest_mean_ms: Option<f64>,
    pub classification: Option<Classification>,
    pub last_decision: Option<Decision>,
}

/// Degraded iff the share of ring windows with `mean_ms > budget` reaches
/// `policy.breach_fraction`. A window exactly at the budget is not a breach.
pub fn detect_degradation(session: &SessionState, policy: &DegradationPolicy) -> Result<Decision, AnalyticsError> {
    let have = session.reports.len();
    if have < policy.min_windows {
        return Err(AnalyticsError::InsufficientData {
            teid: session.teid,
            have,
            need: policy.min_windows,
        });
    }
    let class = session
        .classification
        .as_ref()
        .ok_or(AnalyticsError::Unclassified(session.teid))?;
    let budget = policy.budget_for(&class.game);
    let breaches = session.reports.iter().filter(|r| r.mean_ms > budget).count();
    let fraction = breaches as f64 / have as f64;
    let verdict = if fraction >= policy.breach_fraction {
        Verdict::Degraded
    } else {
        Verdict::Healthy
    };
    Ok(Decision {
        teid: session.teid,
        verdict,
        game: class.game.clone(),
        evidence: Evidence {
            breach_fraction: fraction,
            threshold: policy.breach_fraction,
            budget_ms: budget,
            windows: have,
            breaches,
        },
        issued_at: session.reports.back().map_or(0.0, |r| r.window_start),
    })
}
