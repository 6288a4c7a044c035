//! Passive latency observation for GTP-U tunnelled traffic.
//!
//! * [`gtpu`]: GTP-U header codec and TEID extraction
//! * [`tracker`]: per-TEID request/response matching and time-shift latency
//! * [`sim`]: deterministic trace generation with ground truth, and replay
//! * [`metrics`]: regression, classification and curve metrics
//! * [`ml`]: game-traffic classifiers and the evaluation protocol

pub mod gtpu;
pub mod metrics;
pub mod ml;
pub mod sim;
pub mod tracker;
