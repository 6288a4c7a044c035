//! Fallback session features derived from latency windows alone, and a
//! synthetic training set in the same schema.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use teidscope_core::ml::{Dataset, MlError, DEFAULT_CLASS_NAMES};

use crate::session::LatencyReport;
use crate::AnalyticsError;

pub const LATENCY_FEATURE_NAMES: [&str; 8] = [
    "lat_mean", "lat_var", "lat_min", "lat_max", "lat_p25", "lat_p50", "lat_p75", "lat_p90",
];

/// Linear interpolation between closest ranks; `sorted` must be ascending
/// and non-empty.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Mean, variance and quartiles of the window means plus the extreme
/// min/max, in [`LATENCY_FEATURE_NAMES`] order, zero-padded to `d`.
pub fn latency_features<'a, I>(reports: I, d: usize) -> Result<Vec<f64>, AnalyticsError>
where
    I: IntoIterator<Item = &'a LatencyReport>,
{
    if d < LATENCY_FEATURE_NAMES.len() {
        return Err(AnalyticsError::FeatureMismatch {
            expected: d,
            got: LATENCY_FEATURE_NAMES.len(),
        });
    }
    let mut means = Vec::new();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in reports {
        means.push(r.mean_ms);
        lo = lo.min(r.min_ms);
        hi = hi.max(r.max_ms);
    }
    if means.is_empty() {
        return Err(AnalyticsError::MalformedReport("no reports to derive features from".into()));
    }
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
    means.sort_by(f64::total_cmp);
    let mut f = vec![
        mean,
        var,
        lo,
        hi,
        percentile(&means, 0.25),
        percentile(&means, 0.50),
        percentile(&means, 0.75),
        percentile(&means, 0.90),
    ];
    f.resize(d, 0.0);
    Ok(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyClassProfile {
    pub name: String,
    /// Typical window-mean latency of a session of this class.
    pub base_ms: f64,
    /// Window-to-window standard deviation.
    pub spread_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencySessionConfig {
    pub sessions_per_class: usize,
    pub windows_per_session: usize,
    /// Feature dimension; at least the number of latency features.
    pub d: usize,
    pub seed: u64,
    pub classes: Vec<LatencyClassProfile>,
}

impl Default for LatencySessionConfig {
    fn default() -> Self {
        let profile = |name: &str, base_ms, spread_ms| LatencyClassProfile {
            name: name.into(),
            base_ms,
            spread_ms,
        };
        LatencySessionConfig {
            sessions_per_class: 300,
            windows_per_session: 8,
            d: LATENCY_FEATURE_NAMES.len(),
            seed: 11,
            classes: vec![
                profile(DEFAULT_CLASS_NAMES[0], 45.0, 10.0),
                profile(DEFAULT_CLASS_NAMES[1], 90.0, 30.0),
                profile(DEFAULT_CLASS_NAMES[2], 25.0, 5.0),
            ],
        }
    }
}

/// Simulated report histories, one row of [`latency_features`] per session.
pub fn latency_session_dataset(cfg: &LatencySessionConfig) -> Result<Dataset, MlError> {
    if cfg.classes.is_empty() || cfg.sessions_per_class == 0 || cfg.windows_per_session == 0 {
        return Err(MlError::InvalidSpec("latency sessions need classes, sessions and windows".into()));
    }
    if cfg.d < LATENCY_FEATURE_NAMES.len() {
        return Err(MlError::InvalidSpec(format!(
            "d must be >= {}",
            LATENCY_FEATURE_NAMES.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (c, class) in cfg.classes.iter().enumerate() {
        for _ in 0..cfg.sessions_per_class {
            let level: f64 = class.base_ms * (0.15 * rng.sample::<f64, _>(StandardNormal)).exp();
            let reports: Vec<LatencyReport> = (0..cfg.windows_per_session)
                .map(|w| {
                    let mean = (level + class.spread_ms * rng.sample::<f64, _>(StandardNormal)).max(0.1);
                    LatencyReport {
                        teid: teidscope_core::gtpu::Teid(0),
                        window_start: w as f64,
                        mean_ms: mean,
                        min_ms: mean * (1.0 - rng.random_range(0.0..0.3)),
                        max_ms: mean * (1.0 + rng.random_range(0.0..0.5)),
                        sample_count: 10,
                        features: None,
                    }
                })
                .collect();
            features.push(latency_features(&reports, cfg.d).expect("d checked above"));
            labels.push(c);
        }
    }
    let mut ds = Dataset::new(features, labels, cfg.classes.iter().map(|c| c.name.clone()).collect())?;
    ds.feature_names = (0..cfg.d)
        .map(|i| LATENCY_FEATURE_NAMES.get(i).map_or_else(|| format!("pad{i}"), |s| s.to_string()))
        .collect();
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use teidscope_core::gtpu::Teid;

    fn report(mean: f64, min: f64, max: f64) -> LatencyReport {
        LatencyReport {
            teid: Teid(1),
            window_start: 0.0,
            mean_ms: mean,
            min_ms: min,
            max_ms: max,
            sample_count: 1,
            features: None,
        }
    }

    #[test]
    fn hand_computed_features() {
        let rs = [report(10.0, 5.0, 12.0), report(20.0, 15.0, 30.0), report(30.0, 25.0, 31.0), report(40.0, 1.0, 41.0)];
        let f = latency_features(&rs, 10).unwrap();
        assert_eq!(f.len(), 10);
        assert_eq!(f[0], 25.0);
        assert_eq!(f[1], 125.0);
        assert_eq!(f[2], 1.0);
        assert_eq!(f[3], 41.0);
        assert_eq!(f[4], 17.5);
        assert_eq!(f[5], 25.0);
        assert_eq!(f[6], 32.5);
        assert!((f[7] - 37.0).abs() < 1e-12);
        assert_eq!(&f[8..], &[0.0, 0.0]);
    }

    #[test]
    fn too_small_dimension_is_rejected() {
        assert!(matches!(
            latency_features(&[report(1.0, 1.0, 1.0)], 4),
            Err(AnalyticsError::FeatureMismatch { .. })
        ));
    }

    #[test]
    fn session_dataset_shape() {
        let cfg = LatencySessionConfig {
            sessions_per_class: 20,
            d: 10,
            ..Default::default()
        };
        let ds = latency_session_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 60);
        assert_eq!(ds.dim(), 10);
        assert_eq!(ds.class_counts(), vec![20, 20, 20]);
        assert_eq!(ds.feature_names[0], "lat_mean");
        assert_eq!(ds.feature_names[9], "pad9");
        assert_eq!(latency_session_dataset(&cfg).unwrap(), ds);
    }
}
