use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use anyhow::{bail, ensure, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use teidscope_core::gtpu::Teid;
use teidscope_core::metrics::{error_histogram, regression_report, Histogram, RegressionReport};
use teidscope_core::sim::{estimate_trace, GroundTruth, ReplaySummary, TraceRecord, GROUND_TRUTH_FORMAT_VERSION, TRACE_FORMAT_VERSION};
use teidscope_core::tracker::{window_aggregate, LatencySample, LatencySeries, TrackerStats};

use crate::config::FileConfig;
use crate::manifest::ManifestBuilder;
use crate::sim::{read_trace_file, read_truth_file};

pub const SAMPLES_FILE: &str = "samples.csv";
pub const HISTOGRAM_FILE: &str = "error_histogram.csv";
pub const WINDOWS_FILE: &str = "windows.csv";
pub const REPORT_FILE: &str = "estimate_report.json";
pub const ESTIMATE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub format_version: u32,
    pub regression: RegressionReport,
    /// Delivered requests with no estimate.
    pub unmatched_truth: usize,
    /// Estimates whose request is unknown or marked lost in the ground truth.
    pub unmatched_estimates: usize,
    pub histogram: Histogram,
    pub histogram_mode_center_ms: f64,
    pub tracker: TrackerStats,
    pub replay: ReplaySummary,
    pub overflow_events: u64,
}

/// One estimate joined with its ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub corr: u64,
    pub teid: Teid,
    pub send_ts: f64,
    pub completed_at: f64,
    pub request_leg_ms: f64,
    pub response_leg_ms: f64,
    pub estimate_ms: f64,
    pub truth_ms: f64,
    pub error_ms: f64,
}

pub struct Estimation {
    pub report: EstimateReport,
    pub rows: Vec<SampleRow>,
    pub samples: Vec<LatencySample>,
}

pub fn join_with_truth(samples: &[LatencySample], truth: &GroundTruth) -> (Vec<SampleRow>, usize) {
    let by_corr: HashMap<u64, _> = truth.entries.iter().map(|e| (e.correlation_id, e)).collect();
    let mut unmatched = 0;
    let mut rows: Vec<SampleRow> = samples
        .iter()
        .filter_map(|s| match by_corr.get(&s.correlation_id) {
            Some(e) if !e.lost => Some(SampleRow {
                corr: s.correlation_id,
                teid: s.teid,
                send_ts: e.request_send_time,
                completed_at: s.completed_at,
                request_leg_ms: s.request_leg_ms,
                response_leg_ms: s.response_leg_ms,
                estimate_ms: s.total_ms,
                truth_ms: e.injected_total_ms,
                error_ms: s.total_ms - e.injected_total_ms,
            }),
            _ => {
                unmatched += 1;
                None
            }
        })
        .collect();
    rows.sort_by_key(|r| r.corr);
    (rows, unmatched)
}

/// Runs the tracker over `trace` and scores it against `truth`.
pub fn estimate(trace: &[TraceRecord], truth: &GroundTruth, cfg: &FileConfig) -> Result<Estimation> {
    let outcome = estimate_trace(trace, cfg.tracker.tracker_config()?);
    let (rows, unmatched_estimates) = join_with_truth(&outcome.samples, truth);
    if rows.is_empty() {
        bail!("no estimate could be paired with the ground truth");
    }
    let t: Vec<f64> = rows.iter().map(|r| r.truth_ms).collect();
    let e: Vec<f64> = rows.iter().map(|r| r.estimate_ms).collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.error_ms).collect();
    let regression = regression_report(&t, &e)?;
    let histogram = error_histogram(&errors, cfg.estimate.histogram_bin_ms)?;
    let mode = histogram.mode_index().expect("non-empty errors");
    let delivered = truth.delivered().count();
    Ok(Estimation {
        report: EstimateReport {
            format_version: ESTIMATE_FORMAT_VERSION,
            regression,
            unmatched_truth: delivered - rows.len(),
            unmatched_estimates,
            histogram_mode_center_ms: histogram.center(mode),
            histogram,
            tracker: outcome.stats,
            replay: outcome.replay,
            overflow_events: outcome.overflow_events,
        },
        rows,
        samples: outcome.samples,
    })
}

/// Per-TEID window series of the estimates.
pub fn windows_by_teid(samples: &[LatencySample], window_ms: f64) -> Result<BTreeMap<Teid, LatencySeries>> {
    let mut by_teid: BTreeMap<Teid, Vec<LatencySample>> = BTreeMap::new();
    for s in samples {
        by_teid.entry(s.teid).or_default().push(*s);
    }
    by_teid
        .into_iter()
        .map(|(t, v)| Ok((t, window_aggregate(&v, window_ms)?)))
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct BinRow {
    bin_center_ms: f64,
    count: u64,
}

#[derive(Serialize)]
struct WindowRow {
    teid: Teid,
    start_s: f64,
    mean_ms: f64,
    min_ms: f64,
    max_ms: f64,
    count: usize,
}

pub fn run_estimate(trace_path: &Path, truth_path: &Path, cfg: &FileConfig, out: &Path) -> Result<EstimateReport> {
    let trace = read_trace_file(trace_path)?;
    let truth = read_truth_file(truth_path)?;
    std::fs::create_dir_all(out)?;
    let mut manifest = ManifestBuilder::new("estimate", out, &json!({ "tracker": cfg.tracker, "estimate": cfg.estimate }))?;
    manifest.input(trace_path, "trace-jsonl", TRACE_FORMAT_VERSION)?;
    manifest.input(truth_path, "ground-truth-csv", GROUND_TRUTH_FORMAT_VERSION)?;

    let est = estimate(&trace, &truth, cfg)?;
    ensure!(est.report.tracker.is_conserved(), "tracker accounting is not conserved: {:?}", est.report.tracker);

    write_csv(&out.join(SAMPLES_FILE), &est.rows)?;
    let h = &est.report.histogram;
    write_csv(
        &out.join(HISTOGRAM_FILE),
        h.bins.iter().map(|&(i, count)| BinRow { bin_center_ms: h.center(i), count }),
    )?;
    let series = windows_by_teid(&est.samples, cfg.estimate.window_ms)?;
    write_csv(
        &out.join(WINDOWS_FILE),
        series.iter().flat_map(|(teid, s)| {
            s.windows.iter().map(move |w| WindowRow {
                teid: *teid,
                start_s: w.start,
                mean_ms: w.mean_ms,
                min_ms: w.min_ms,
                max_ms: w.max_ms,
                count: w.count,
            })
        }),
    )?;
    std::fs::write(out.join(REPORT_FILE), serde_json::to_string_pretty(&est.report)? + "\n")?;

    manifest.output(SAMPLES_FILE, "samples-csv", ESTIMATE_FORMAT_VERSION)?;
    manifest.output(HISTOGRAM_FILE, "error-histogram-csv", ESTIMATE_FORMAT_VERSION)?;
    manifest.output(WINDOWS_FILE, "windows-csv", ESTIMATE_FORMAT_VERSION)?;
    manifest.output(REPORT_FILE, "estimate-report-json", ESTIMATE_FORMAT_VERSION)?;
    manifest.finish()?;
    Ok(est.report)
}
