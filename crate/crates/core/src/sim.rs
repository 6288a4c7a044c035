//! Deterministic GTP-U trace generator with a ground-truth sidecar, plus
//! replay of traces through the latency tracker.
//!
//! File formats:
//!
//! * trace: JSON Lines, one record per line,
//!   `{"v":1,"ts":<seconds>,"dir":"UL"|"DL","corr":<u64>,"bytes":"<base64>"}`
//! * ground truth: CSV with header `corr,send_ts,injected_ms,lost`
//!   (`lost` is `0` or `1`)

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::net::Ipv4Addr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gtpu::{build_ipv4_udp, encode_gtpu, parse_gtpu, GtpuPacket, InnerFlowKey, Teid, IP_PROTO_UDP};
use crate::tracker::{
    Direction, FlowTracker, LatencySample, Observation, TrackerConfig, TrackerError, TrackerStats,
};

pub const TRACE_FORMAT_VERSION: u32 = 1;
pub const GROUND_TRUTH_FORMAT_VERSION: u32 = 1;
pub const GROUND_TRUTH_HEADER: [&str; 4] = ["corr", "send_ts", "injected_ms", "lost"];

const SERVER_ADDR: Ipv4Addr = Ipv4Addr::new(203, 0, 113, 10);
const SERVER_PORT: u16 = 7000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid profile: {0}")]
    InvalidProfile(&'static str),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(&'static str),
    #[error("corrupt record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
    #[error("ground truth: {0}")]
    GroundTruth(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Latency oscillating between `min_ms` and `max_ms` with period `period_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinusoidalProfile {
    pub min_ms: f64,
    pub max_ms: f64,
    pub period_s: f64,
    pub phase_rad: f64,
}

impl Default for SinusoidalProfile {
    fn default() -> Self {
        SinusoidalProfile {
            min_ms: 1.0,
            max_ms: 600.0,
            period_s: 30.0,
            phase_rad: 0.0,
        }
    }
}

impl SinusoidalProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.min_ms > 0.0) {
            return Err(SimError::InvalidProfile("min_ms must be > 0"));
        }
        if !(self.max_ms > self.min_ms) {
            return Err(SimError::InvalidProfile("max_ms must exceed min_ms"));
        }
        if !(self.period_s > 0.0) {
            return Err(SimError::InvalidProfile("period_s must be > 0"));
        }
        Ok(())
    }

    /// `min + (max - min)/2 * (1 + sin(2πt/period + phase))`
    pub fn value(&self, t: f64) -> f64 {
        let half_span = (self.max_ms - self.min_ms) / 2.0;
        let v = self.min_ms + half_span * (1.0 + (2.0 * PI * t / self.period_s + self.phase_rad).sin());
        v.clamp(self.min_ms, self.max_ms)
    }
}

pub fn profile_value(profile: &SinusoidalProfile, t: f64) -> f64 {
    profile.value(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub duration_s: f64,
    pub request_rate_hz: f64,
    pub teids: Vec<Teid>,
    /// Standard deviation of Gaussian noise added to each injected total.
    pub jitter_ms: f64,
    /// Probability that a response is lost.
    pub loss_prob: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            duration_s: 600.0,
            request_rate_hz: 10.0,
            teids: vec![Teid(0x0000_1001)],
            jitter_ms: 5.0,
            loss_prob: 0.001,
            seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration_s > 0.0) {
            return Err(SimError::InvalidConfig("duration_s must be > 0"));
        }
        if !(self.request_rate_hz > 0.0) {
            return Err(SimError::InvalidConfig("request_rate_hz must be > 0"));
        }
        if self.teids.is_empty() {
            return Err(SimError::InvalidConfig("at least one TEID is required"));
        }
        if !(self.jitter_ms >= 0.0) {
            return Err(SimError::InvalidConfig("jitter_ms must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.loss_prob) {
            return Err(SimError::InvalidConfig("loss_prob must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn request_count(&self) -> u64 {
        (self.duration_s * self.request_rate_hz + 1e-9).floor() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub timestamp: f64,
    pub direction: Direction,
    pub wire_bytes: Vec<u8>,
    pub correlation_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    #[serde(rename = "corr")]
    pub correlation_id: u64,
    #[serde(rename = "send_ts")]
    pub request_send_time: f64,
    #[serde(rename = "injected_ms")]
    pub injected_total_ms: f64,
    #[serde(with = "bool_as_int")]
    pub lost: bool,
}

mod bool_as_int {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("lost must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub entries: Vec<GroundTruthEntry>,
}

impl GroundTruth {
    pub fn delivered(&self) -> impl Iterator<Item = &GroundTruthEntry> {
        self.entries.iter().filter(|e| !e.lost)
    }
}

/// The UE-side 5-tuple used for the `index`-th TEID of a trace.
pub fn session_flow(index: usize) -> InnerFlowKey {
    let host = index as u32 + 1;
    InnerFlowKey {
        src_addr: Ipv4Addr::new(10, 60, (host >> 8) as u8, host as u8),
        dst_addr: SERVER_ADDR,
        src_port: 40_000u16.wrapping_add(index as u16),
        dst_port: SERVER_PORT,
        protocol: IP_PROTO_UDP,
    }
}

fn encapsulate(teid: Teid, flow: &InnerFlowKey, corr: u64, direction: Direction) -> Vec<u8> {
    let mut body = corr.to_be_bytes().to_vec();
    body.push(match direction {
        Direction::Uplink => 0x01,
        Direction::Downlink => 0x02,
    });
    let ip = build_ipv4_udp(flow, &body);
    let pkt = GtpuPacket::gpdu(teid, ip).expect("small datagram fits");
    encode_gtpu(&pkt).expect("freshly built packet is consistent")
}

/// Generates a request/response trace sorted by timestamp, plus the
/// latency injected for every request.
///
/// Request `i` is sent at `i / request_rate_hz` on TEID `teids[i % n]`.
/// Its response, unless lost, is observed `injected_ms` later, where
/// `injected_ms = max(0, profile(t_i) + N(0, jitter_ms))`.
pub fn generate_trace(
    config: &SimConfig,
    profile: &SinusoidalProfile,
) -> Result<(Vec<TraceRecord>, GroundTruth), SimError> {
    config.validate()?;
    profile.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.request_count();
    let mut records = Vec::with_capacity(2 * n as usize);
    let mut truth = Vec::with_capacity(n as usize);

    for i in 0..n {
        let t = i as f64 / config.request_rate_hz;
        let session = (i % config.teids.len() as u64) as usize;
        let teid = config.teids[session];
        let flow = session_flow(session);

        // Draw both variates every time so the stream layout is independent of
        // the jitter and loss settings.
        let z: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.random();
        let injected = (profile.value(t) + config.jitter_ms * z).max(0.0);
        let lost = u < config.loss_prob;

        records.push(TraceRecord {
            timestamp: t,
            direction: Direction::Uplink,
            wire_bytes: encapsulate(teid, &flow, i, Direction::Uplink),
            correlation_id: i,
        });
        if !lost {
            records.push(TraceRecord {
                timestamp: t + injected / 1_000.0,
                direction: Direction::Downlink,
                wire_bytes: encapsulate(teid, &flow.reversed(), i, Direction::Downlink),
                correlation_id: i,
            });
        }
        truth.push(GroundTruthEntry {
            correlation_id: i,
            request_send_time: t,
            injected_total_ms: injected,
            lost,
        });
    }

    records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok((records, GroundTruth { entries: truth }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub delivered: u64,
    pub failed: u64,
}

/// Decodes each record into an [`Observation`] and hands it to `sink` in
/// timestamp order. Records whose bytes do not parse, or that carry no
/// inner UDP/TCP flow, are skipped and counted as failed.
pub fn replay<F>(trace: &[TraceRecord], mut sink: F) -> ReplaySummary
where
    F: FnMut(Observation),
{
    let mut order: Vec<usize> = (0..trace.len()).collect();
    order.sort_by(|&a, &b| trace[a].timestamp.total_cmp(&trace[b].timestamp));

    let mut summary = ReplaySummary::default();
    for idx in order {
        let rec = &trace[idx];
        match parse_gtpu(&rec.wire_bytes) {
            Ok(pkt) => match pkt.inner_flow {
                Some(inner_flow) => {
                    sink(Observation {
                        timestamp: rec.timestamp,
                        direction: rec.direction,
                        teid: pkt.header.teid,
                        inner_flow,
                        correlation_id: rec.correlation_id,
                    });
                    summary.delivered += 1;
                }
                None => summary.failed += 1,
            },
            Err(_) => summary.failed += 1,
        }
    }
    summary
}

/// Result of running a trace through a [`FlowTracker`].
#[derive(Debug, Clone)]
pub struct EstimateOutcome {
    pub samples: Vec<LatencySample>,
    pub stats: TrackerStats,
    pub replay: ReplaySummary,
    pub overflow_events: u64,
}

/// Replays `trace` through a fresh tracker, expiring stale requests as the
/// trace clock advances. Requests still pending at the end stay pending.
pub fn estimate_trace(trace: &[TraceRecord], config: TrackerConfig) -> EstimateOutcome {
    let mut tracker = FlowTracker::new(config);
    let mut samples = Vec::new();
    let mut overflow_events = 0;
    let mut last_flush = f64::NEG_INFINITY;
    let flush_every = config.match_timeout_ms / 1_000.0 / 2.0;

    let replay_summary = replay(trace, |obs| {
        if obs.timestamp - last_flush >= flush_every {
            tracker.flush_stale(obs.timestamp);
            last_flush = obs.timestamp;
        }
        match tracker.observe(obs) {
            Ok(Some(s)) => samples.push(s),
            Ok(None) => {}
            Err(TrackerError::PendingOverflow { .. }) => overflow_events += 1,
            // counted in stats.rejected
            Err(_) => {}
        }
    });

    EstimateOutcome {
        samples,
        stats: tracker.stats(),
        replay: replay_summary,
        overflow_events,
    }
}

/// Pairs each estimate with its ground-truth entry by correlation id.
/// Returns `(truth_ms, estimate_ms, send_ts)` for every matched request.
pub fn align_with_truth(
    samples: &[LatencySample],
    truth: &GroundTruth,
) -> Vec<(f64, f64, f64)> {
    let by_corr: std::collections::HashMap<u64, &GroundTruthEntry> =
        truth.entries.iter().map(|e| (e.correlation_id, e)).collect();
    let mut out: Vec<(f64, f64, f64)> = samples
        .iter()
        .filter_map(|s| {
            by_corr
                .get(&s.correlation_id)
                .filter(|e| !e.lost)
                .map(|e| (e.injected_total_ms, s.total_ms, e.request_send_time))
        })
        .collect();
    out.sort_by(|a, b| a.2.total_cmp(&b.2));
    out
}

#[derive(Serialize, Deserialize)]
struct TraceLine {
    v: u32,
    ts: f64,
    dir: Direction,
    corr: u64,
    bytes: String,
}

pub fn write_trace_jsonl<W: Write>(records: &[TraceRecord], mut out: W) -> Result<(), SimError> {
    for r in records {
        let line = TraceLine {
            v: TRACE_FORMAT_VERSION,
            ts: r.timestamp,
            dir: r.direction,
            corr: r.correlation_id,
            bytes: B64.encode(&r.wire_bytes),
        };
        serde_json::to_writer(&mut out, &line).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSONL trace. Blank lines are skipped. A line that is not valid
/// JSON or carries undecodable base64 fails the whole read.
pub fn read_trace_jsonl<R: BufRead>(input: R) -> Result<Vec<TraceRecord>, SimError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |reason: String| SimError::CorruptRecord { line: i + 1, reason };
        let parsed: TraceLine = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        if parsed.v != TRACE_FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {}", parsed.v)));
        }
        let wire_bytes = B64.decode(parsed.bytes).map_err(|e| corrupt(e.to_string()))?;
        out.push(TraceRecord {
            timestamp: parsed.ts,
            direction: parsed.dir,
            wire_bytes,
            correlation_id: parsed.corr,
        });
    }
    Ok(out)
}

pub fn write_ground_truth_csv<W: Write>(truth: &GroundTruth, out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    for e in &truth.entries {
        w.serialize(e).map_err(|e| SimError::GroundTruth(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ground_truth_csv<R: std::io::Read>(input: R) -> Result<GroundTruth, SimError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r
        .headers()
        .map_err(|e| SimError::GroundTruth(e.to_string()))?
        .clone();
    if headers.iter().ne(GROUND_TRUTH_HEADER.iter().copied()) {
        return Err(SimError::GroundTruth(format!(
            "unexpected header {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let entries = r
        .deserialize()
        .collect::<Result<Vec<GroundTruthEntry>, _>>()
        .map_err(|e| SimError::GroundTruth(e.to_string()))?;
    Ok(GroundTruth { entries })
}
