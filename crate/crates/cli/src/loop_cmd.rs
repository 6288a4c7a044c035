use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use teidscope_analytics::features::{latency_session_dataset, LatencySessionConfig};
use teidscope_analytics::{start, Decision, LatencyReport, ServiceStats, SmfStub, SmfStubOptions};
use teidscope_core::gtpu::Teid;
use teidscope_core::ml::{fit, ModelKind, ModelSpec, MODEL_FORMAT_VERSION};
use teidscope_core::sim::{estimate_trace, generate_trace};

use crate::config::{Expectation, FileConfig};
use crate::estimate::windows_by_teid;
use crate::manifest::ManifestBuilder;
use crate::train::MODEL_FILE;

pub const LOOP_REPORT_FILE: &str = "loop_report.json";
pub const SMF_LOG_FILE: &str = "smf_notifications.jsonl";
pub const LOOP_REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostCounts {
    pub posted: u64,
    pub accepted: u64,
    pub rejected: u64,
}

/// Outcome of one closed-loop run. Contains nothing that varies between
/// identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub format_version: u32,
    pub scenario: Option<String>,
    pub expect: Option<Expectation>,
    pub expectation_held: bool,
    pub model_trained: bool,
    pub trace_records: usize,
    pub latency_samples: usize,
    pub windows_per_teid: BTreeMap<Teid, usize>,
    pub posts_per_teid: BTreeMap<Teid, PostCounts>,
    pub service: ServiceStats,
    pub notifications_received: usize,
    /// Sorted by TEID, then report time.
    pub notifications: Vec<Decision>,
}

async fn post_series(client: reqwest::Client, url: String, reports: Vec<LatencyReport>) -> Result<PostCounts> {
    let mut c = PostCounts::default();
    for r in &reports {
        let resp = client
            .post(&url)
            .json(r)
            .send()
            .await
            .with_context(|| format!("cannot reach analytics service at {url}"))?;
        c.posted += 1;
        if resp.status().is_success() {
            c.accepted += 1;
        } else {
            c.rejected += 1;
            tracing::warn!(teid = %r.teid, status = %resp.status(), "report rejected");
        }
    }
    Ok(c)
}

/// Sim, estimate, report, decide and notify, end to end on loopback.
pub async fn run_loop(cfg: &FileConfig, out: &Path, expect_override: Option<Expectation>) -> Result<LoopReport> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create output dir {}", out.display()))?;
    let mut manifest = ManifestBuilder::new("loop", out, cfg)?;
    manifest.seed("sim", cfg.sim.seed);
    let expect = expect_override.or(cfg.scenario.as_ref().map(|s| s.expect));

    let log_path = out.join(SMF_LOG_FILE);
    if log_path.exists() {
        std::fs::remove_file(&log_path)?;
    }
    let stub = SmfStub::start(
        "127.0.0.1:0",
        SmfStubOptions {
            log_path: Some(log_path.clone()),
            ..SmfStubOptions::default()
        },
    )
    .await?;

    let mut svc_cfg = cfg.service.clone();
    svc_cfg.smf_endpoint = Some(stub.endpoint());
    let model_trained = svc_cfg.model_path.is_none();
    if model_trained {
        let lat_cfg = cfg
            .scenario
            .as_ref()
            .map_or_else(LatencySessionConfig::default, |s| s.latency_model.clone());
        manifest.seed("latency_model", lat_cfg.seed);
        let model = fit(&ModelSpec::default_for(ModelKind::DecisionTree), &latency_session_dataset(&lat_cfg)?)?;
        let path = out.join(MODEL_FILE);
        model.save(&path)?;
        svc_cfg.model_path = Some(path);
    } else if let Some(p) = &svc_cfg.model_path {
        manifest.input(p, "model-json", MODEL_FORMAT_VERSION)?;
    }
    svc_cfg.validate()?;
    let (server, _svc) = start(&svc_cfg).await?;
    let url = format!("{}/v1/reports", server.base_url());

    let (trace, _truth) = generate_trace(&cfg.sim, &cfg.profile)?;
    let est = estimate_trace(&trace, cfg.tracker.tracker_config()?);
    let series = windows_by_teid(&est.samples, cfg.estimate.window_ms)?;

    let client = reqwest::Client::builder().timeout(Duration::from_secs(10)).build()?;
    let mut tasks = Vec::new();
    for (teid, s) in &series {
        let reports = s.windows.iter().map(|w| LatencyReport::from_window(*teid, w)).collect();
        tasks.push((*teid, tokio::spawn(post_series(client.clone(), url.clone(), reports))));
    }
    let mut posts_per_teid = BTreeMap::new();
    let mut failure = None;
    for (teid, t) in tasks {
        match t.await? {
            Ok(c) => {
                posts_per_teid.insert(teid, c);
            }
            Err(e) => failure = failure.or(Some(e)),
        }
    }

    let service = {
        let stats = reqwest::get(format!("{}/v1/stats", server.base_url())).await?.json::<ServiceStats>().await?;
        server.shutdown().await?;
        stats
    };
    let mut notifications = stub.received();
    stub.shutdown().await?;
    if let Some(e) = failure {
        return Err(e);
    }
    notifications.sort_by(|a, b| (a.teid, a.issued_at).partial_cmp(&(b.teid, b.issued_at)).expect("finite times"));

    let expectation_held = expect.is_none_or(|e| e.holds(notifications.len()));
    let report = LoopReport {
        format_version: LOOP_REPORT_FORMAT_VERSION,
        scenario: cfg.scenario.as_ref().map(|s| s.name.clone()),
        expect,
        expectation_held,
        model_trained,
        trace_records: trace.len(),
        latency_samples: est.samples.len(),
        windows_per_teid: series.iter().map(|(t, s)| (*t, s.windows.len())).collect(),
        posts_per_teid,
        service,
        notifications_received: notifications.len(),
        notifications,
    };
    std::fs::write(out.join(LOOP_REPORT_FILE), serde_json::to_string_pretty(&report)? + "\n")?;

    if model_trained {
        manifest.output(MODEL_FILE, "model-json", MODEL_FORMAT_VERSION)?;
    }
    manifest.output(LOOP_REPORT_FILE, "loop-report-json", LOOP_REPORT_FORMAT_VERSION)?;
    if report.notifications_received > 0 {
        manifest.output(SMF_LOG_FILE, "decision-jsonl", 1)?;
    }
    manifest.finish()?;
    if series.is_empty() {
        bail!("the simulated trace produced no latency windows");
    }
    Ok(report)
}
