use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use teidscope_cli::estimate::EstimateReport;
use teidscope_cli::loop_cmd::LoopReport;
use teidscope_cli::manifest::{read_manifest, sha256_file};
use teidscope_core::ml::TrainedModel;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_teidscope"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn assert_manifest_matches(dir: &Path) {
    let m = read_manifest(dir).unwrap();
    assert!(!m.outputs.is_empty());
    for a in &m.outputs {
        let (sha, bytes) = sha256_file(&dir.join(&a.path)).unwrap();
        assert_eq!(sha, a.sha256, "{}", a.path.display());
        assert_eq!(bytes, a.bytes);
        assert!(a.format_version >= 1);
    }
}

#[test]
fn sim_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for (dir, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        ok(&["sim", "--out", s(dir), "--seed", seed, "--duration-s", "20"]);
    }
    for f in ["trace.jsonl", "ground_truth.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let cfg = tmp.path().join("jitter.toml");
    std::fs::write(&cfg, "[sim]\njitter_ms = 5.0\nloss_prob = 0.01\n").unwrap();
    let (d, e) = (tmp.path().join("d"), tmp.path().join("e"));
    ok(&["sim", "--config", s(&cfg), "--out", s(&d), "--seed", "1", "--duration-s", "20"]);
    ok(&["sim", "--config", s(&cfg), "--out", s(&e), "--seed", "2", "--duration-s", "20"]);
    assert_ne!(std::fs::read(d.join("trace.jsonl")).unwrap(), std::fs::read(e.join("trace.jsonl")).unwrap());
    assert_manifest_matches(&a);
    assert_eq!(read_manifest(&a).unwrap().seeds["sim"], 5);
}

#[test]
fn sim_trace_has_requests_plus_delivered_responses() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "[sim]\nduration_s = 30.0\nloss_prob = 0.2\nseed = 3\n").unwrap();
    ok(&["sim", "--config", s(&cfg), "--out", s(tmp.path())]);
    let lines = std::fs::read_to_string(tmp.path().join("trace.jsonl")).unwrap().lines().count();
    let mut rdr = csv::Reader::from_path(tmp.path().join("ground_truth.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let lost_col = rdr.headers().unwrap().iter().position(|h| h == "lost").unwrap();
    let lost = rows.iter().filter(|r| &r[lost_col] == "1" || &r[lost_col] == "true").count();
    assert!(lost > 0);
    assert_eq!(lines, rows.len() + rows.len() - lost);
}

#[test]
fn sim_default_config_counts_match() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&["sim", "--out", s(tmp.path())]);
    let lines = std::fs::read_to_string(tmp.path().join("trace.jsonl")).unwrap().lines().count();
    let mut rdr = csv::Reader::from_path(tmp.path().join("ground_truth.csv")).unwrap();
    let lost_col = rdr.headers().unwrap().iter().position(|h| h == "lost").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let delivered = rows.iter().filter(|r| &r[lost_col] == "0").count();
    assert_eq!(rows.len(), 6000);
    assert_eq!(lines, rows.len() + delivered);
    assert!(String::from_utf8_lossy(&out.stdout).contains("6000 requests"));
}

#[test]
fn sim_into_unwritable_location_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    let out = run(&["sim", "--out", s(&file.join("sub")), "--duration-s", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn estimate_writes_scored_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let est = tmp.path().join("est");
    ok(&["sim", "--out", s(&sim), "--duration-s", "30"]);
    ok(&["estimate", "--trace", s(&sim.join("trace.jsonl")), "--out", s(&est)]);
    let report: EstimateReport =
        serde_json::from_str(&std::fs::read_to_string(est.join("estimate_report.json")).unwrap()).unwrap();
    assert!((report.regression.r2_norm - 1.0).abs() < 1e-9);
    assert_eq!(report.histogram_mode_center_ms, 0.0);
    assert_eq!(report.unmatched_truth, 0);
    assert!(report.tracker.is_conserved());
    let samples = std::fs::read_to_string(est.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), report.regression.count + 1);
    assert_manifest_matches(&est);
    let m = read_manifest(&est).unwrap();
    assert_eq!(m.inputs.len(), 2);
    assert_eq!(m.outputs.len(), 4);
}

#[test]
fn estimate_without_ground_truth_fails() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["sim", "--out", s(tmp.path()), "--duration-s", "5"]);
    let lone = tmp.path().join("lone");
    std::fs::create_dir(&lone).unwrap();
    std::fs::copy(tmp.path().join("trace.jsonl"), lone.join("trace.jsonl")).unwrap();
    let out = run(&["estimate", "--trace", s(&lone.join("trace.jsonl")), "--out", s(&tmp.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ground truth"));
}

#[test]
fn train_on_csv_writes_loadable_model() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d.csv");
    let mut f = std::fs::File::create(&data).unwrap();
    writeln!(f, "pkt_mean,pkt_std,proto,game").unwrap();
    for i in 0..300 {
        let (g, base) = [("LOL", 0.0), ("TFT", 10.0), ("VAL", 20.0)][i % 3];
        writeln!(f, "{},{},{},{g}", base + (i % 7) as f64 * 0.1, (i % 5) as f64, if i % 2 == 0 { "udp" } else { "tcp" })
            .unwrap();
    }
    drop(f);
    let out = tmp.path().join("m");
    ok(&["train", "--data", s(&data), "--kind", "decision-tree", "--runs", "2", "--out", s(&out)]);
    let model = TrainedModel::load(out.join("model.json")).unwrap();
    assert_eq!(model.class_names, ["LOL", "TFT", "VAL"]);
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(eval["mean_accuracy"], 1.0);
    assert_eq!(std::fs::read_to_string(out.join("accuracy_runs.csv")).unwrap().lines().count(), 3);
    for c in ["LOL", "TFT", "VAL"] {
        assert!(out.join(format!("roc_{c}.csv")).exists());
        assert!(out.join(format!("pr_{c}.csv")).exists());
    }
    assert_manifest_matches(&out);
}

fn mean_accuracy(dir: &Path) -> f64 {
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("evaluation.json")).unwrap()).unwrap();
    eval["mean_accuracy"].as_f64().unwrap()
}

#[test]
fn train_knn_on_well_separated_synth() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["train", "--synth", "--separation", "10", "--kind", "knn", "--out", s(tmp.path())]);
    let acc = mean_accuracy(tmp.path());
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn train_gradient_boost_on_default_synth() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["train", "--synth", "--kind", "gradient-boost", "--runs", "3", "--out", s(tmp.path())]);
    let acc = mean_accuracy(tmp.path());
    assert!(acc >= 0.90, "{acc}");
}

#[test]
fn train_rejects_unknown_kind_and_missing_source() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["train", "--synth", "--kind", "lstm", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("possible values"), "{err}");
    let out = run(&["train", "--kind", "knn", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["train", "--data", s(&tmp.path().join("missing.csv")), "--kind", "knn", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_synth_models_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&[
            "train", "--synth", "--n", "600", "--d", "4", "--kind", "random-forest", "--n-trees", "5", "--runs", "2",
            "--out", s(dir),
        ]);
    }
    assert_eq!(std::fs::read(a.join("model.json")).unwrap(), std::fs::read(b.join("model.json")).unwrap());
    assert_eq!(
        std::fs::read(a.join("accuracy_runs.csv")).unwrap(),
        std::fs::read(b.join("accuracy_runs.csv")).unwrap()
    );
}

#[test]
fn loop_scenarios_meet_their_expectations() {
    let tmp = tempfile::tempdir().unwrap();
    for (file, degraded) in [("over_budget.toml", true), ("under_budget.toml", false)] {
        let out = tmp.path().join(file);
        ok(&["loop", "--config", s(&scenario(file)), "--out", s(&out)]);
        let r: LoopReport =
            serde_json::from_str(&std::fs::read_to_string(out.join("loop_report.json")).unwrap()).unwrap();
        assert!(r.expectation_held);
        assert_eq!(r.notifications_received > 0, degraded);
        assert_eq!(r.service.reports_rejected, 0);
        assert_manifest_matches(&out);
    }
    let out = run(&[
        "loop", "--config", s(&scenario("over_budget.toml")), "--out", s(&tmp.path().join("x")), "--expect", "healthy",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn loop_fails_when_listen_address_is_taken() {
    let tmp = tempfile::tempdir().unwrap();
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let text = std::fs::read_to_string(scenario("over_budget.toml"))
        .unwrap()
        .replace("127.0.0.1:0", &taken.local_addr().unwrap().to_string());
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = run(&["loop", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot bind"));
}

fn http_get(addr: &str, path: &str) -> Option<String> {
    let mut c = TcpStream::connect(addr).ok()?;
    c.set_read_timeout(Some(Duration::from_secs(2))).ok()?;
    write!(c, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    c.read_to_string(&mut buf).ok()?;
    Some(buf)
}

#[test]
fn serve_answers_until_terminated() {
    let tmp = tempfile::tempdir().unwrap();
    let model_dir = tmp.path().join("m");
    ok(&["train", "--latency-sessions", "--kind", "decision-tree", "--runs", "1", "--out", s(&model_dir)]);
    let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().to_string();
    let mut child = bin()
        .args(["serve", "--model", s(&model_dir.join("model.json"))])
        .env("TEIDSCOPE_LISTEN_ADDR", &addr)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let body = loop {
        if let Some(b) = http_get(&addr, "/healthz") {
            break b;
        }
        assert!(Instant::now() < deadline, "service never came up");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(body.contains("\"model_loaded\":true"), "{body}");
    Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    let status = child.wait().unwrap();
    assert!(status.success(), "{status:?}");
}

#[test]
fn serve_with_missing_model_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["serve", "--listen", "127.0.0.1:0", "--model", s(&tmp.path().join("none.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot load model"));
}
