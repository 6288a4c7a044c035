//! Acceptance suite. Runs the criteria one after another, prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.

use std::net::Ipv4Addr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use teidscope_cli::config::FileConfig;
use teidscope_cli::estimate::estimate;
use teidscope_cli::loop_cmd::LoopReport;
use teidscope_core::gtpu::*;
use teidscope_core::metrics::{classification_report, regression_report, roc_curve, roc_curve_binary};
use teidscope_core::ml::{
    evaluate, fit, synth_dataset, Dataset, EvalProtocol, ModelKind, ModelSpec, SynthConfig,
};
use teidscope_core::sim::{estimate_trace, generate_trace, SimConfig, SinusoidalProfile};
use teidscope_core::tracker::TrackerConfig;

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------- codec

fn random_flow(rng: &mut ChaCha8Rng) -> InnerFlowKey {
    InnerFlowKey {
        src_addr: Ipv4Addr::from(rng.random::<u32>()),
        dst_addr: Ipv4Addr::from(rng.random::<u32>()),
        src_port: rng.random(),
        dst_port: rng.random(),
        protocol: if rng.random() { IP_PROTO_UDP } else { IP_PROTO_TCP },
    }
}

fn random_bytes(rng: &mut ChaCha8Rng, max: usize) -> Vec<u8> {
    let n = rng.random_range(0..max);
    (0..n).map(|_| rng.random()).collect()
}

fn random_packet(rng: &mut ChaCha8Rng) -> GtpuPacket {
    let message_type = if rng.random() { MSG_TYPE_GPDU } else { rng.random() };
    let (e, s, pn): (bool, bool, bool) = (rng.random(), rng.random(), rng.random());
    let block = e || s || pn;
    let mut ext = Vec::new();
    let mut next = 0u8;
    if e {
        let hdrs = rng.random_range(0..4);
        if hdrs > 0 {
            next = rng.random_range(1..=255);
        }
        for i in 0..hdrs {
            let units = rng.random_range(1..4usize);
            ext.push(units as u8);
            for _ in 0..4 * units - 2 {
                ext.push(rng.random());
            }
            ext.push(if i == hdrs - 1 { 0 } else { rng.random_range(1..=255) });
        }
    }
    let payload = if rng.random() {
        random_bytes(rng, 64)
    } else {
        let f = random_flow(rng);
        let body = random_bytes(rng, 32);
        build_ipv4_udp(&f, &body)
    };
    let opt = if block { GTPU_OPTIONAL_LEN } else { 0 };
    GtpuPacket {
        header: GtpuHeader {
            version: 1,
            protocol_type: true,
            has_extension: e,
            has_sequence: s,
            has_npdu: pn,
            message_type,
            payload_length: (opt + ext.len() + payload.len()) as u16,
            teid: Teid(rng.random()),
            sequence: block.then(|| rng.random()),
            npdu_number: block.then(|| rng.random()),
            next_extension_type: block.then_some(next),
        },
        extension_headers: ext,
        inner_flow: if message_type == MSG_TYPE_GPDU { parse_inner_flow(&payload) } else { None },
        payload,
    }
}

fn codec_soundness() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let round_trips = 10_000;
    for i in 0..round_trips {
        let pkt = random_packet(&mut rng);
        let bytes = encode_gtpu(&pkt).map_err(|e| format!("case {i}: encode failed: {e}"))?;
        let back = parse_gtpu(&bytes).map_err(|e| format!("case {i}: parse failed: {e}"))?;
        ensure!(back == pkt, "case {i}: parse(encode(p)) != p");
        ensure!(encode_gtpu(&back).ok().as_deref() == Some(&bytes[..]), "case {i}: re-encode differs");
    }
    let template = encode_gtpu(&random_packet(&mut rng)).expect("valid packet");
    let fuzz = 100_000;
    for i in 0..fuzz {
        let bytes = if i % 2 == 0 {
            random_bytes(&mut rng, 96)
        } else {
            let mut b = template.clone();
            for _ in 0..rng.random_range(1..4) {
                let at = rng.random_range(0..b.len());
                b[at] = rng.random();
            }
            b.truncate(rng.random_range(0..=b.len()));
            b
        };
        let outcome = catch_unwind(|| {
            let _ = extract_teid(&bytes);
            if let Ok(p) = parse_gtpu(&bytes) {
                let _ = encode_gtpu(&p);
            }
        });
        ensure!(outcome.is_ok(), "fuzz input {i} crashed the decoder: {bytes:02x?}");
    }
    Ok(format!("{round_trips} round-trips, {fuzz} fuzz inputs, 0 crashes"))
}

// ------------------------------------------------------------ estimation

fn run_estimation(sim: SimConfig, profile: SinusoidalProfile) -> Result<teidscope_cli::estimate::Estimation, String> {
    let (trace, truth) = generate_trace(&sim, &profile).map_err(|e| e.to_string())?;
    estimate(&trace, &truth, &FileConfig::default()).map_err(|e| format!("{e:#}"))
}

fn noiseless_fidelity() -> Result<String, String> {
    let est = run_estimation(
        SimConfig {
            duration_s: 60.0,
            jitter_ms: 0.0,
            loss_prob: 0.0,
            ..SimConfig::default()
        },
        SinusoidalProfile::default(),
    )?;
    let r = est.report.regression;
    ensure!(est.report.unmatched_truth == 0, "{} requests without estimate", est.report.unmatched_truth);
    ensure!((r.r2_norm - 1.0).abs() <= 1e-6, "R2 {}", r.r2_norm);
    ensure!(r.mape_orig / 100.0 <= 1e-6, "MAPE {}%", r.mape_orig);
    Ok(format!("{} samples, R2 {:.9}, MAPE {:.3e}%", r.count, r.r2_norm, r.mape_orig))
}

fn sinusoidal_run() -> Result<String, String> {
    let est = run_estimation(
        SimConfig {
            duration_s: 600.0,
            jitter_ms: 5.0,
            loss_prob: 0.001,
            ..SimConfig::default()
        },
        SinusoidalProfile {
            min_ms: 1.0,
            max_ms: 600.0,
            period_s: 30.0,
            ..SinusoidalProfile::default()
        },
    )?;
    let r = est.report.regression;
    let mode = est.report.histogram.mode_index().ok_or("empty histogram")?;
    ensure!(r.r2_norm >= 0.95, "R2(normalized) {} < 0.95", r.r2_norm);
    ensure!(r.mape_orig <= 10.0, "MAPE(original) {} > 10", r.mape_orig);
    ensure!(mode.abs() <= 1, "histogram mode at bin {mode}");
    Ok(format!(
        "{} samples, R2(norm) {:.4}, MAPE(orig) {:.4}%, mode bin {mode} ({} ms wide), {} lost",
        r.count,
        r.r2_norm,
        r.mape_orig,
        est.report.histogram.bin_width,
        est.report.tracker.expired
    ))
}

fn tracker_conservation() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut observed = 0;
    let mut expired = 0;
    for case in 0..40 {
        let sim = SimConfig {
            duration_s: rng.random_range(5.0..60.0),
            request_rate_hz: rng.random_range(5.0..50.0),
            teids: (0..rng.random_range(1..5)).map(|i| Teid(0x100 + i)).collect(),
            jitter_ms: rng.random_range(0.0..20.0),
            loss_prob: rng.random_range(0.01..0.5),
            seed: rng.random(),
        };
        let cfg = TrackerConfig::new(rng.random_range(50.0..3000.0), rng.random_range(1..64)).map_err(|e| e.to_string())?;
        let (trace, _) = generate_trace(&sim, &SinusoidalProfile::default()).map_err(|e| e.to_string())?;
        let s = estimate_trace(&trace, cfg).stats;
        let lhs = 2 * s.matched_pairs + s.expired + s.orphans + s.pending;
        ensure!(lhs == s.observed, "case {case}: matched+expired+orphan+pending = {lhs} != {} ({s:?})", s.observed);
        ensure!(s.observed + s.rejected == trace.len() as u64, "case {case}: observations lost");
        observed += s.observed;
        expired += s.expired;
    }
    Ok(format!("40 lossy traces, {observed} observations, {expired} expired, exact balance"))
}

// ----------------------------------------------------------- classifiers

fn random_dataset(n: usize, d: usize, k: usize, seed: u64, grid: bool) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| if grid { rng.random_range(0..5) as f64 } else { rng.random_range(-3.0..3.0) })
                .collect()
        })
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    Dataset::new(features, labels, (0..k).map(|c| format!("c{c}")).collect()).expect("valid dataset")
}

/// All-pairs nearest neighbours on min-max scaled features, ties broken by
/// training index.
fn knn_oracle(train: &Dataset, query: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let d = train.dim();
    let col = |j: usize| train.features.iter().map(move |r| r[j]);
    let lo: Vec<f64> = (0..d).map(|j| col(j).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..d).map(|j| col(j).fold(f64::NEG_INFINITY, f64::max)).collect();
    let scale = |r: &[f64]| -> Vec<f64> {
        (0..d).map(|j| if hi[j] > lo[j] { (r[j] - lo[j]) / (hi[j] - lo[j]) } else { 0.0 }).collect()
    };
    let pts: Vec<Vec<f64>> = train.features.iter().map(|r| scale(r)).collect();
    query
        .iter()
        .map(|q| {
            let q = scale(q);
            let mut all: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes = vec![0.0; train.class_count()];
            for &(_, i) in &all[..k] {
                votes[train.labels[i]] += 1.0;
            }
            votes.iter().map(|v| v / k as f64).collect()
        })
        .collect()
}

fn oracle_equivalence() -> Result<String, String> {
    let mut checked = 0;
    for (seed, grid) in [(1, false), (2, true), (3, false), (4, true)] {
        let train = random_dataset(500, 4, 3, seed, grid);
        let query = random_dataset(500, 4, 3, seed + 50, grid).features;
        for k in [1, 3, 5] {
            let model = fit(&ModelSpec::Knn { k }, &train).map_err(|e| e.to_string())?;
            let got = model.predict_proba(&query).map_err(|e| e.to_string())?;
            ensure!(got == knn_oracle(&train, &query, k), "seed {seed} k {k}: KNN differs from oracle");
            checked += query.len();
        }
    }
    for seed in [10, 11, 12] {
        let data = random_dataset(500, 6, 3, seed, seed % 2 == 0);
        let dt = fit(&ModelSpec::DecisionTree { max_depth: 12, min_leaf: 1 }, &data).map_err(|e| e.to_string())?;
        let rf = fit(
            &ModelSpec::RandomForest {
                n_trees: 1,
                max_depth: 12,
                min_leaf: 1,
                max_features: Some(6),
                bootstrap: false,
                seed,
            },
            &data,
        )
        .map_err(|e| e.to_string())?;
        let query = random_dataset(500, 6, 3, seed + 50, seed % 2 == 0).features;
        ensure!(
            dt.predict_proba(&query).map_err(|e| e.to_string())? == rf.predict_proba(&query).map_err(|e| e.to_string())?,
            "seed {seed}: single full-feature forest differs from tree"
        );
    }
    Ok(format!("{checked} KNN queries identical to oracle; 3 forest/tree pairs identical"))
}

fn model_comparison() -> Result<String, String> {
    let data = synth_dataset(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let protocol = EvalProtocol::default();
    let mut acc = Vec::new();
    let mut line = Vec::new();
    for kind in [ModelKind::Knn, ModelKind::DecisionTree, ModelKind::RandomForest, ModelKind::GradientBoost] {
        let eval = evaluate(&ModelSpec::default_for(kind), &data, &protocol).map_err(|e| e.to_string())?;
        acc.push((kind, eval.mean.accuracy, eval.accuracy_spread()));
        line.push(format!("{kind:?} {:.4} (spread {:.4})", eval.mean.accuracy, eval.accuracy_spread()));
    }
    let knn = acc[0].1;
    for &(kind, a, spread) in &acc {
        ensure!(a >= 0.90, "{kind:?} accuracy {a:.4} < 0.90");
        if kind != ModelKind::Knn {
            ensure!(spread <= 0.03, "{kind:?} spread {spread:.4} > 0.03");
        }
        if matches!(kind, ModelKind::RandomForest | ModelKind::GradientBoost) {
            ensure!(a >= knn - 0.02, "{kind:?} {a:.4} < KNN {knn:.4} - 0.02");
        }
    }
    Ok(line.join(", "))
}

fn curve_sanity() -> Result<String, String> {
    let data = synth_dataset(&SynthConfig {
        separation: 8.0,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let eval = evaluate(
        &ModelSpec::default_for(ModelKind::GradientBoost),
        &data,
        &EvalProtocol {
            runs: 1,
            ..EvalProtocol::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let mut aucs = Vec::new();
    for c in 0..data.class_count() {
        let auc = roc_curve(&eval.first_run_truth, &eval.first_run_scores, c).map_err(|e| e.to_string())?.auc;
        ensure!(auc > 0.99, "class {} AUC {auc:.5} <= 0.99", data.class_names[c]);
        aucs.push(format!("{} {auc:.5}", data.class_names[c]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 20_000;
    let labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
    let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let chance = roc_curve_binary(&labels, &scores).map_err(|e| e.to_string())?.auc;
    ensure!((chance - 0.5).abs() <= 0.02, "chance AUC {chance:.4}");
    Ok(format!("gradient boost AUC {}; chance AUC {chance:.4}", aucs.join(", ")))
}

// ---------------------------------------------------------- closed loop

fn loop_once(scenario: &str, out: &Path) -> Result<(LoopReport, Vec<u8>), String> {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(scenario);
    let o = Command::new(env!("CARGO_BIN_EXE_teidscope"))
        .args(["loop", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("RUST_LOG", "error")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(o.status.success(), "{scenario}: loop exited with {}: {}", o.status, String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(out.join("loop_report.json")).map_err(|e| e.to_string())?;
    let report = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
    Ok((report, bytes))
}

fn closed_loop() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut line = Vec::new();
    for (scenario, degraded) in [("over_budget.toml", true), ("under_budget.toml", false)] {
        let mut first: Option<Vec<u8>> = None;
        let mut counts = Vec::new();
        for run in 0..5 {
            let (r, bytes) = loop_once(scenario, &tmp.path().join(format!("{scenario}-{run}")))?;
            if degraded {
                ensure!(r.notifications_received >= 1, "{scenario} run {run}: no notification");
            } else {
                ensure!(r.notifications_received == 0, "{scenario} run {run}: {} notifications", r.notifications_received);
            }
            match &first {
                None => first = Some(bytes),
                Some(f) => ensure!(*f == bytes, "{scenario} run {run}: report differs from run 0"),
            }
            counts.push(r.notifications_received);
        }
        line.push(format!("{scenario}: notifications {counts:?}"));
    }
    Ok(format!("{}; reports identical across runs", line.join(", ")))
}

// ------------------------------------------------------- metric fixture

#[derive(Deserialize)]
struct RegressionCase {
    name: String,
    truth: Vec<f64>,
    estimate: Vec<f64>,
    mse_orig: f64,
    mae_orig: f64,
    mape_orig: f64,
    mape_excluded_orig: usize,
    mse_norm: f64,
    mae_norm: f64,
    mape_norm: f64,
    mape_excluded_norm: usize,
    r2_norm: f64,
}

#[derive(Deserialize)]
struct ClassificationCase {
    name: String,
    classes: Vec<String>,
    truth: Vec<usize>,
    predicted: Vec<usize>,
    confusion: Vec<Vec<u64>>,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    macro_precision: f64,
    macro_recall: f64,
    macro_f1: f64,
}

#[derive(Deserialize)]
struct Fixture {
    regression: Vec<RegressionCase>,
    classification: Vec<ClassificationCase>,
}

fn close(name: &str, field: &str, got: f64, want: f64) -> Result<(), String> {
    ensure!((got - want).abs() <= 1e-9, "{name}: {field} = {got}, expected {want}");
    Ok(())
}

fn metric_fixture() -> Result<String, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/metric_fixture.json");
    let fx: Fixture = serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    for c in &fx.regression {
        let r = regression_report(&c.truth, &c.estimate).map_err(|e| format!("{}: {e}", c.name))?;
        close(&c.name, "mse_orig", r.mse_orig, c.mse_orig)?;
        close(&c.name, "mae_orig", r.mae_orig, c.mae_orig)?;
        close(&c.name, "mape_orig", r.mape_orig, c.mape_orig)?;
        close(&c.name, "mse_norm", r.mse_norm, c.mse_norm)?;
        close(&c.name, "mae_norm", r.mae_norm, c.mae_norm)?;
        close(&c.name, "mape_norm", r.mape_norm, c.mape_norm)?;
        close(&c.name, "r2_norm", r.r2_norm, c.r2_norm)?;
        ensure!(r.mape_excluded_orig == c.mape_excluded_orig, "{}: mape_excluded_orig", c.name);
        ensure!(r.mape_excluded_norm == c.mape_excluded_norm, "{}: mape_excluded_norm", c.name);
        ensure!(r.count == c.truth.len(), "{}: count", c.name);
    }
    for c in &fx.classification {
        let (cm, r) = classification_report(&c.truth, &c.predicted, &c.classes).map_err(|e| format!("{}: {e}", c.name))?;
        ensure!(cm.counts == c.confusion, "{}: confusion {:?}", c.name, cm.counts);
        close(&c.name, "accuracy", r.accuracy, c.accuracy)?;
        close(&c.name, "precision", r.precision, c.precision)?;
        close(&c.name, "recall", r.recall, c.recall)?;
        close(&c.name, "f1", r.f1, c.f1)?;
        close(&c.name, "macro_precision", r.macro_precision, c.macro_precision)?;
        close(&c.name, "macro_recall", r.macro_recall, c.macro_recall)?;
        close(&c.name, "macro_f1", r.macro_f1, c.macro_f1)?;
    }
    let n = fx.regression.len() + fx.classification.len();
    ensure!(n >= 12, "fixture has only {n} cases");
    Ok(format!("{} regression + {} classification cases", fx.regression.len(), fx.classification.len()))
}

// ---------------------------------------------------------------- runner

fn main() {
    let criteria: [(&str, Duration, Check); 9] = [
        ("codec soundness", Duration::from_secs(30), codec_soundness),
        ("noiseless estimator fidelity", Duration::from_secs(5), noiseless_fidelity),
        ("sinusoidal estimation run", Duration::from_secs(60), sinusoidal_run),
        ("tracker conservation", Duration::from_secs(10), tracker_conservation),
        ("classifier oracle equivalence", Duration::from_secs(30), oracle_equivalence),
        ("four-model comparison", Duration::from_secs(300), model_comparison),
        ("curve sanity", Duration::from_secs(60), curve_sanity),
        ("closed loop", Duration::from_secs(60), closed_loop),
        ("metric hand-check", Duration::from_secs(1), metric_fixture),
    ];
    println!("\nrunning {} acceptance criteria", criteria.len());
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > *budget => Err(format!("over time budget; {detail}")),
            other => other,
        };
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} criterion {} {name} ({:.2} s of {} s): {detail}",
            i + 1,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} passed, {failed} failed\n", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
