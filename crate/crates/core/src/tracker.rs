//! Per-TEID request/response matching and time-shift latency estimation.
//!
//! A [`FlowTracker`] sees packets at a single vantage point (the UPF N3
//! interface). An uplink observation opens a pending request; the downlink
//! observation carrying the same TEID, reversed inner 5-tuple and
//! correlation id closes it and yields a [`LatencySample`].
//!
//! The vantage point only sees the request arrive and the response leave,
//! so the server-side turnaround is not observable. The measured interval
//! is split evenly between the request and response legs; their sum is the
//! bidirectional total.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gtpu::{InnerFlowKey, Teid};

/// How far (in seconds) an observation may lag the newest timestamp seen
/// before it is refused.
pub const REORDER_TOLERANCE_S: f64 = 0.050;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackerError {
    #[error("negative interval: t_out {t_out} precedes t_in {t_in}")]
    NegativeInterval { t_in: f64, t_out: f64 },
    #[error("more than {limit} pending requests on TEID {teid}; oldest dropped")]
    PendingOverflow {
        teid: Teid,
        limit: usize,
        dropped: PendingEntry,
    },
    #[error("observation at {timestamp} is older than {latest} beyond the reorder tolerance")]
    OutOfOrder { timestamp: f64, latest: f64 },
    #[error("invalid tracker configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("window size must be positive, got {0}")]
    InvalidWindow(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "UL")]
    Uplink,
    #[serde(rename = "DL")]
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Seconds, one monotonic clock domain per tracker.
    pub timestamp: f64,
    pub direction: Direction,
    pub teid: Teid,
    pub inner_flow: InnerFlowKey,
    pub correlation_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub teid: Teid,
    pub correlation_id: u64,
    pub request_leg_ms: f64,
    pub response_leg_ms: f64,
    pub total_ms: f64,
    pub completed_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub match_timeout_ms: f64,
    pub max_pending_per_teid: usize,
}

impl TrackerConfig {
    pub fn new(match_timeout_ms: f64, max_pending_per_teid: usize) -> Result<Self, TrackerError> {
        if !(match_timeout_ms > 0.0) {
            return Err(TrackerError::InvalidConfig("match_timeout_ms must be > 0"));
        }
        if max_pending_per_teid == 0 {
            return Err(TrackerError::InvalidConfig("max_pending_per_teid must be > 0"));
        }
        Ok(TrackerConfig {
            match_timeout_ms,
            max_pending_per_teid,
        })
    }
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            match_timeout_ms: 2_000.0,
            max_pending_per_teid: 4_096,
        }
    }
}

/// An unmatched request awaiting its response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingEntry {
    pub teid: Teid,
    /// Request-direction 5-tuple.
    pub flow: InnerFlowKey,
    pub correlation_id: u64,
    pub timestamp: f64,
}

/// Accounting of every accepted observation.
///
/// `2 * matched_pairs + pending + expired + orphans == observed` always
/// holds. `expired` includes entries evicted by the per-TEID bound
/// (also counted separately in `evicted`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerStats {
    pub observed: u64,
    pub matched_pairs: u64,
    pub pending: u64,
    pub expired: u64,
    pub evicted: u64,
    pub orphans: u64,
    /// Refused as out of order; not part of `observed`.
    pub rejected: u64,
}

impl TrackerStats {
    pub fn matched_observations(&self) -> u64 {
        2 * self.matched_pairs
    }

    pub fn is_conserved(&self) -> bool {
        self.matched_observations() + self.pending + self.expired + self.orphans == self.observed
    }
}

/// `t_out - t_in` in milliseconds.
pub fn time_shift_latency(t_in: f64, t_out: f64) -> Result<f64, TrackerError> {
    if t_out < t_in {
        return Err(TrackerError::NegativeInterval { t_in, t_out });
    }
    Ok((t_out - t_in) * 1_000.0)
}

/// Bidirectional total from the two legs.
pub fn total_latency(request_leg_ms: f64, response_leg_ms: f64) -> f64 {
    debug_assert!(request_leg_ms >= 0.0 && response_leg_ms >= 0.0);
    request_leg_ms + response_leg_ms
}

/// Single-writer matcher. Shard by TEID to run several concurrently.
#[derive(Debug, Default)]
pub struct FlowTracker {
    config: TrackerConfig,
    pending: HashMap<Teid, VecDeque<PendingEntry>>,
    stats: TrackerStats,
    latest: Option<f64>,
}

impl FlowTracker {
    pub fn new(config: TrackerConfig) -> Self {
        FlowTracker {
            config,
            ..Default::default()
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn stats(&self) -> TrackerStats {
        self.stats
    }

    pub fn pending_for(&self, teid: Teid) -> usize {
        self.pending.get(&teid).map_or(0, VecDeque::len)
    }

    /// Feeds one observation. Returns a sample when it completes a pair.
    ///
    /// A `PendingOverflow` error still records the new request; the
    /// returned entry is the one evicted to make room.
    pub fn observe(&mut self, obs: Observation) -> Result<Option<LatencySample>, TrackerError> {
        if let Some(latest) = self.latest {
            if latest - obs.timestamp > REORDER_TOLERANCE_S {
                self.stats.rejected += 1;
                return Err(TrackerError::OutOfOrder {
                    timestamp: obs.timestamp,
                    latest,
                });
            }
        }
        self.latest = Some(self.latest.map_or(obs.timestamp, |l| l.max(obs.timestamp)));
        self.stats.observed += 1;

        match obs.direction {
            Direction::Uplink => {
                let queue = self.pending.entry(obs.teid).or_default();
                queue.push_back(PendingEntry {
                    teid: obs.teid,
                    flow: obs.inner_flow,
                    correlation_id: obs.correlation_id,
                    timestamp: obs.timestamp,
                });
                self.stats.pending += 1;
                if queue.len() > self.config.max_pending_per_teid {
                    let dropped = queue.pop_front().expect("queue is non-empty");
                    self.stats.pending -= 1;
                    self.stats.expired += 1;
                    self.stats.evicted += 1;
                    return Err(TrackerError::PendingOverflow {
                        teid: obs.teid,
                        limit: self.config.max_pending_per_teid,
                        dropped,
                    });
                }
                Ok(None)
            }
            Direction::Downlink => {
                let request_flow = obs.inner_flow.reversed();
                let hit = self.pending.get_mut(&obs.teid).and_then(|queue| {
                    // oldest first
                    let idx = queue.iter().position(|p| {
                        p.correlation_id == obs.correlation_id
                            && p.flow == request_flow
                            && p.timestamp <= obs.timestamp
                    })?;
                    queue.remove(idx)
                });
                let Some(request) = hit else {
                    self.stats.orphans += 1;
                    return Ok(None);
                };
                if self.pending.get(&obs.teid).is_some_and(VecDeque::is_empty) {
                    self.pending.remove(&obs.teid);
                }
                self.stats.pending -= 1;
                self.stats.matched_pairs += 1;

                let round_trip = time_shift_latency(request.timestamp, obs.timestamp)?;
                let request_leg_ms = round_trip / 2.0;
                let response_leg_ms = round_trip - request_leg_ms;
                Ok(Some(LatencySample {
                    teid: obs.teid,
                    correlation_id: obs.correlation_id,
                    request_leg_ms,
                    response_leg_ms,
                    total_ms: total_latency(request_leg_ms, response_leg_ms),
                    completed_at: obs.timestamp,
                }))
            }
        }
    }

    /// Removes and returns every pending entry older than the match timeout.
    /// Late responses for them will count as orphans.
    pub fn flush_stale(&mut self, now: f64) -> Vec<PendingEntry> {
        let timeout = self.config.match_timeout_ms;
        let mut expired = Vec::new();
        self.pending.retain(|_, queue| {
            queue.retain(|p| {
                let stale = (now - p.timestamp) * 1_000.0 > timeout;
                if stale {
                    expired.push(*p);
                }
                !stale
            });
            !queue.is_empty()
        });
        expired.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        self.stats.pending -= expired.len() as u64;
        self.stats.expired += expired.len() as u64;
        expired
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStat {
    /// Window start, seconds.
    pub start: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySeries {
    pub window_ms: f64,
    pub windows: Vec<WindowStat>,
}

/// Buckets samples by `completed_at` into fixed windows of `window_ms`.
/// Empty windows are omitted.
pub fn window_aggregate(
    samples: &[LatencySample],
    window_ms: f64,
) -> Result<LatencySeries, TrackerError> {
    if !(window_ms > 0.0) || !window_ms.is_finite() {
        return Err(TrackerError::InvalidWindow(window_ms));
    }
    let mut buckets: BTreeMap<i64, (f64, f64, f64, usize)> = BTreeMap::new();
    for s in samples {
        let idx = (s.completed_at * 1_000.0 / window_ms).floor() as i64;
        let b = buckets
            .entry(idx)
            .or_insert((0.0, f64::INFINITY, f64::NEG_INFINITY, 0));
        b.0 += s.total_ms;
        b.1 = b.1.min(s.total_ms);
        b.2 = b.2.max(s.total_ms);
        b.3 += 1;
    }
    let windows = buckets
        .into_iter()
        .map(|(idx, (sum, min, max, count))| WindowStat {
            start: idx as f64 * window_ms / 1_000.0,
            mean_ms: sum / count as f64,
            min_ms: min,
            max_ms: max,
            count,
        })
        .collect();
    Ok(LatencySeries { window_ms, windows })
}

#[cfg(test)]
mod tests {
    use std::net::Ipv4Addr;

    use super::*;
    use crate::gtpu::IP_PROTO_UDP;

    fn flow() -> InnerFlowKey {
        InnerFlowKey {
            src_addr: Ipv4Addr::new(10, 60, 0, 2),
            dst_addr: Ipv4Addr::new(198, 51, 100, 7),
            src_port: 50000,
            dst_port: 7777,
            protocol: IP_PROTO_UDP,
        }
    }

    fn up(t: f64, corr: u64) -> Observation {
        Observation {
            timestamp: t,
            direction: Direction::Uplink,
            teid: Teid(42),
            inner_flow: flow(),
            correlation_id: corr,
        }
    }

    fn down(t: f64, corr: u64) -> Observation {
        Observation {
            timestamp: t,
            direction: Direction::Downlink,
            teid: Teid(42),
            inner_flow: flow().reversed(),
            correlation_id: corr,
        }
    }

    fn sample(t: f64, total: f64) -> LatencySample {
        LatencySample {
            teid: Teid(1),
            correlation_id: 0,
            request_leg_ms: total / 2.0,
            response_leg_ms: total / 2.0,
            total_ms: total,
            completed_at: t,
        }
    }

    #[test]
    fn time_shift_examples() {
        assert!((time_shift_latency(100.000, 100.0053).unwrap() - 5.3).abs() < 1e-9);
        assert_eq!(time_shift_latency(7.25, 7.25).unwrap(), 0.0);
        assert!(matches!(
            time_shift_latency(10.0, 9.0),
            Err(TrackerError::NegativeInterval { .. })
        ));
    }

    #[test]
    fn total_is_sum_of_legs() {
        assert!((total_latency(5.3, 4.7) - 10.0).abs() < 1e-12);
        assert_eq!(total_latency(0.0, 0.0), 0.0);
        assert_eq!(total_latency(1.25, 3.5), total_latency(3.5, 1.25));
    }

    #[test]
    fn config_validation() {
        assert!(TrackerConfig::new(0.0, 1).is_err());
        assert!(TrackerConfig::new(10.0, 0).is_err());
        assert!(TrackerConfig::new(10.0, 1).is_ok());
    }

    #[test]
    fn two_packet_trace_yields_ten_ms() {
        let mut t = FlowTracker::new(TrackerConfig::default());
        assert_eq!(t.observe(up(1.000, 9)).unwrap(), None);
        let s = t.observe(down(1.010, 9)).unwrap().unwrap();
        assert!((s.total_ms - 10.0).abs() < 1e-9);
        assert_eq!(s.total_ms, s.request_leg_ms + s.response_leg_ms);
        assert_eq!(s.teid, Teid(42));
        assert_eq!(t.pending_for(Teid(42)), 0);
        assert!(t.stats().is_conserved());
    }

    #[test]
    fn unmatched_observation_emits_nothing() {
        let mut t = FlowTracker::new(TrackerConfig::default());
        assert_eq!(t.observe(up(0.5, 1)).unwrap(), None);
        assert_eq!(t.stats().pending, 1);
    }

    #[test]
    fn wrong_flow_or_corr_is_orphan() {
        let mut t = FlowTracker::new(TrackerConfig::default());
        t.observe(up(0.0, 1)).unwrap();
        assert_eq!(t.observe(down(0.01, 2)).unwrap(), None);
        let mut same_dir = down(0.02, 1);
        same_dir.inner_flow = flow();
        assert_eq!(t.observe(same_dir).unwrap(), None);
        let st = t.stats();
        assert_eq!((st.orphans, st.pending), (2, 1));
        assert!(st.is_conserved());
    }

    #[test]
    fn overflow_drops_oldest() {
        let cfg = TrackerConfig::new(1_000.0, 3).unwrap();
        let mut t = FlowTracker::new(cfg);
        for i in 0..3 {
            t.observe(up(i as f64 * 0.001, i)).unwrap();
        }
        match t.observe(up(0.003, 3)) {
            Err(TrackerError::PendingOverflow { dropped, limit, .. }) => {
                assert_eq!(dropped.correlation_id, 0);
                assert_eq!(limit, 3);
            }
            other => panic!("expected overflow, got {other:?}"),
        }
        assert_eq!(t.pending_for(Teid(42)), 3);
        // the evicted request's response is now an orphan
        assert_eq!(t.observe(down(0.004, 0)).unwrap(), None);
        let st = t.stats();
        assert_eq!((st.expired, st.evicted, st.orphans), (1, 1, 1));
        assert!(st.is_conserved());
    }

    #[test]
    fn duplicate_keys_match_fifo() {
        let mut t = FlowTracker::new(TrackerConfig::default());
        t.observe(up(1.0, 5)).unwrap();
        t.observe(up(1.1, 5)).unwrap();
        let s = t.observe(down(1.2, 5)).unwrap().unwrap();
        assert!((s.total_ms - 200.0).abs() < 1e-9);
    }

    #[test]
    fn flush_boundaries() {
        let cfg = TrackerConfig::new(100.0, 16).unwrap();
        let mut t = FlowTracker::new(cfg);
        assert!(t.flush_stale(10.0).is_empty());

        t.observe(up(0.0, 1)).unwrap();
        assert!(t.flush_stale(0.099).is_empty());
        let expired = t.flush_stale(0.101);
        assert_eq!(expired.len(), 1);
        assert_eq!(expired[0].correlation_id, 1);
        // late response after expiry
        assert_eq!(t.observe(down(0.102, 1)).unwrap(), None);
        let st = t.stats();
        assert_eq!((st.expired, st.orphans, st.pending), (1, 1, 0));
        assert!(st.is_conserved());
    }

    #[test]
    fn reorder_tolerance() {
        let mut t = FlowTracker::new(TrackerConfig::default());
        t.observe(up(1.0, 1)).unwrap();
        // 40 ms late is tolerated
        t.observe(up(0.960, 2)).unwrap();
        assert!(matches!(
            t.observe(up(0.9, 3)),
            Err(TrackerError::OutOfOrder { .. })
        ));
        let st = t.stats();
        assert_eq!((st.observed, st.rejected), (2, 1));
        assert!(st.is_conserved());
    }

    #[test]
    fn response_before_request_is_not_matched() {
        let mut t = FlowTracker::new(TrackerConfig::default());
        t.observe(up(1.00, 1)).unwrap();
        assert_eq!(t.observe(down(0.99, 1)).unwrap(), None);
        assert_eq!(t.stats().orphans, 1);
    }

    #[test]
    fn one_window_stats() {
        let s = window_aggregate(&[sample(0.1, 5.0), sample(0.2, 15.0)], 1_000.0).unwrap();
        assert_eq!(s.windows.len(), 1);
        let w = s.windows[0];
        assert_eq!((w.mean_ms, w.min_ms, w.max_ms, w.count), (10.0, 5.0, 15.0, 2));
        assert_eq!(w.start, 0.0);
    }

    #[test]
    fn empty_series_and_bad_window() {
        assert!(window_aggregate(&[], 10.0).unwrap().windows.is_empty());
        assert!(window_aggregate(&[], 0.0).is_err());
    }

    #[test]
    fn windows_keyed_by_start() {
        let samples = [sample(0.5, 1.0), sample(2.2, 2.0), sample(2.9, 3.0), sample(4.0, 4.0)];
        let s = window_aggregate(&samples, 1_000.0).unwrap();
        let starts: Vec<f64> = s.windows.iter().map(|w| w.start).collect();
        assert_eq!(starts, vec![0.0, 2.0, 4.0]);
        assert_eq!(s.windows[1].count, 2);
    }
}
