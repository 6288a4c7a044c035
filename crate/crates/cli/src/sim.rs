use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use teidscope_core::sim::{
    generate_trace, read_ground_truth_csv, read_trace_jsonl, write_ground_truth_csv, write_trace_jsonl,
    GroundTruth, TraceRecord, GROUND_TRUTH_FORMAT_VERSION, TRACE_FORMAT_VERSION,
};

use crate::config::FileConfig;
use crate::manifest::ManifestBuilder;

pub const TRACE_FILE: &str = "trace.jsonl";
pub const TRUTH_FILE: &str = "ground_truth.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimSummary {
    pub requests: usize,
    pub responses: usize,
    pub lost: usize,
    pub trace_records: usize,
}

pub fn write_trace_file(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    write_trace_jsonl(trace, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_truth_file(path: &Path, truth: &GroundTruth) -> Result<()> {
    let w = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    write_ground_truth_csv(truth, w)?;
    Ok(())
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceRecord>> {
    let f = File::open(path).with_context(|| format!("cannot open trace {}", path.display()))?;
    read_trace_jsonl(BufReader::new(f)).with_context(|| format!("cannot parse trace {}", path.display()))
}

pub fn read_truth_file(path: &Path) -> Result<GroundTruth> {
    let f = File::open(path).with_context(|| format!("cannot open ground truth {}", path.display()))?;
    read_ground_truth_csv(BufReader::new(f)).with_context(|| format!("cannot parse ground truth {}", path.display()))
}

/// Generates a trace and its ground truth into `out`.
pub fn run_sim(cfg: &FileConfig, out: &Path) -> Result<SimSummary> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create output dir {}", out.display()))?;
    let mut manifest = ManifestBuilder::new("sim", out, &json!({ "sim": cfg.sim, "profile": cfg.profile }))?;
    manifest.seed("sim", cfg.sim.seed);

    let (trace, truth) = generate_trace(&cfg.sim, &cfg.profile)?;
    write_trace_file(&out.join(TRACE_FILE), &trace)?;
    write_truth_file(&out.join(TRUTH_FILE), &truth)?;

    let lost = truth.entries.iter().filter(|e| e.lost).count();
    let summary = SimSummary {
        requests: truth.entries.len(),
        responses: truth.entries.len() - lost,
        lost,
        trace_records: trace.len(),
    };
    let trace_back = read_trace_file(&out.join(TRACE_FILE))?;
    let truth_back = read_truth_file(&out.join(TRUTH_FILE))?;
    ensure!(trace_back == trace, "trace did not read back identically");
    ensure!(truth_back == truth, "ground truth did not read back identically");
    ensure!(
        trace.len() == summary.requests + summary.responses,
        "trace has {} records, expected {} requests + {} responses",
        trace.len(),
        summary.requests,
        summary.responses
    );

    manifest.output(TRACE_FILE, "trace-jsonl", TRACE_FORMAT_VERSION)?;
    manifest.output(TRUTH_FILE, "ground-truth-csv", GROUND_TRUTH_FORMAT_VERSION)?;
    manifest.finish()?;
    Ok(summary)
}
