use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use teidscope_analytics::features::LatencySessionConfig;
use teidscope_analytics::ServiceConfig;
use teidscope_core::sim::{SimConfig, SinusoidalProfile};
use teidscope_core::tracker::TrackerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    pub match_timeout_ms: f64,
    pub max_pending_per_teid: usize,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let d = TrackerConfig::default();
        TrackerSection {
            match_timeout_ms: d.match_timeout_ms,
            max_pending_per_teid: d.max_pending_per_teid,
        }
    }
}

impl TrackerSection {
    pub fn tracker_config(&self) -> Result<TrackerConfig> {
        Ok(TrackerConfig::new(self.match_timeout_ms, self.max_pending_per_teid)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    /// Width of the per-TEID report windows.
    pub window_ms: f64,
    /// Bin width of the estimation-error histogram.
    pub histogram_bin_ms: f64,
}

impl Default for EstimateSection {
    fn default() -> Self {
        EstimateSection {
            window_ms: 1_000.0,
            histogram_bin_ms: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// At least one SMF notification.
    Degraded,
    /// No SMF notification at all.
    Healthy,
}

impl Expectation {
    pub fn holds(self, notifications: usize) -> bool {
        match self {
            Expectation::Degraded => notifications >= 1,
            Expectation::Healthy => notifications == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    pub expect: Expectation,
    /// Training set for the fallback-schema model used when
    /// `service.model_path` is unset.
    #[serde(default)]
    pub latency_model: LatencySessionConfig,
}

/// A teidscope config file. Every subcommand reads the tables it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub sim: SimConfig,
    pub profile: SinusoidalProfile,
    pub tracker: TrackerSection,
    pub estimate: EstimateSection,
    pub service: ServiceConfig,
    pub scenario: Option<ScenarioSection>,
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}
