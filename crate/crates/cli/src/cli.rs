use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use teidscope_analytics::features::LatencySessionConfig;
use teidscope_analytics::{SmfStub, SmfStubOptions};
use teidscope_core::ml::{EvalProtocol, ModelKind, ModelSpec, SynthConfig, DEFAULT_LABEL_COLUMN};

use crate::config::{Expectation, FileConfig};
use crate::estimate::run_estimate;
use crate::loop_cmd::run_loop;
use crate::sim::{run_sim, TRUTH_FILE};
use crate::train::{run_train, DataSource, TrainOptions};

#[derive(Debug, Parser)]
#[command(name = "teidscope", version, about = "GTP-U latency estimation and game-session analytics")]
pub struct Cli {
    /// Tracing filter used when RUST_LOG is unset.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic GTP-U trace with its ground truth.
    Sim(SimArgs),
    /// Estimate per-request latency from a trace and score it.
    Estimate(EstimateArgs),
    /// Evaluate and fit a game classifier.
    Train(Box<TrainArgs>),
    /// Run the analytics service until interrupted.
    Serve(ServeArgs),
    /// Run a stand-in SMF that records notifications.
    SmfStub(SmfStubArgs),
    /// Run sim, estimate, analytics and SMF end to end.
    Loop(LoopArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// TOML config; only `[sim]` and `[profile]` are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub duration_s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Defaults to `ground_truth.csv` next to the trace.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// TOML config; only `[tracker]` and `[estimate]` are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Knn,
    DecisionTree,
    RandomForest,
    GradientBoost,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Knn => ModelKind::Knn,
            KindArg::DecisionTree => ModelKind::DecisionTree,
            KindArg::RandomForest => ModelKind::RandomForest,
            KindArg::GradientBoost => ModelKind::GradientBoost,
        }
    }
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["data", "synth", "latency_sessions"])))]
pub struct TrainArgs {
    /// Labelled CSV dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_LABEL_COLUMN)]
    pub label_column: String,
    /// Gaussian-blob dataset.
    #[arg(long)]
    pub synth: bool,
    /// Simulated latency-report sessions, in the service's fallback schema.
    #[arg(long)]
    pub latency_sessions: bool,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub data_seed: Option<u64>,

    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    #[arg(long)]
    pub n_trees: Option<usize>,
    #[arg(long)]
    pub max_features: Option<usize>,
    #[arg(long)]
    pub no_bootstrap: bool,
    #[arg(long)]
    pub forest_seed: Option<u64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,

    #[arg(long, default_value_t = EvalProtocol::default().runs)]
    pub runs: usize,
    #[arg(long, default_value_t = EvalProtocol::default().test_fraction)]
    pub test_fraction: f64,
    #[arg(long)]
    pub no_stratify: bool,
    #[arg(long, default_value_t = EvalProtocol::default().base_seed)]
    pub split_seed: u64,

    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn spec(&self) -> ModelSpec {
        let mut spec = ModelSpec::default_for(self.kind.into());
        match &mut spec {
            ModelSpec::Knn { k } => {
                *k = self.k.unwrap_or(*k);
            }
            ModelSpec::DecisionTree { max_depth, min_leaf } => {
                *max_depth = self.max_depth.unwrap_or(*max_depth);
                *min_leaf = self.min_leaf.unwrap_or(*min_leaf);
            }
            ModelSpec::RandomForest {
                n_trees,
                max_depth,
                min_leaf,
                max_features,
                bootstrap,
                seed,
            } => {
                *n_trees = self.n_trees.unwrap_or(*n_trees);
                *max_depth = self.max_depth.unwrap_or(*max_depth);
                *min_leaf = self.min_leaf.unwrap_or(*min_leaf);
                *max_features = self.max_features.or(*max_features);
                *bootstrap = !self.no_bootstrap;
                *seed = self.forest_seed.unwrap_or(*seed);
            }
            ModelSpec::GradientBoost {
                n_rounds,
                learning_rate,
                max_depth,
                min_leaf,
                l2,
            } => {
                *n_rounds = self.rounds.unwrap_or(*n_rounds);
                *learning_rate = self.learning_rate.unwrap_or(*learning_rate);
                *max_depth = self.max_depth.unwrap_or(*max_depth);
                *min_leaf = self.min_leaf.unwrap_or(*min_leaf);
                *l2 = self.l2.unwrap_or(*l2);
            }
        }
        spec
    }

    pub fn source(&self) -> DataSource {
        if let Some(path) = &self.data {
            DataSource::Csv {
                path: path.clone(),
                label_column: self.label_column.clone(),
            }
        } else if self.latency_sessions {
            let mut c = LatencySessionConfig::default();
            c.d = self.d.unwrap_or(c.d);
            c.seed = self.data_seed.unwrap_or(c.seed);
            DataSource::LatencySessions(c)
        } else {
            let d = SynthConfig::default();
            DataSource::Synth(SynthConfig {
                n: self.n.unwrap_or(d.n),
                d: self.d.unwrap_or(d.d),
                separation: self.separation.unwrap_or(d.separation),
                seed: self.data_seed.unwrap_or(d.seed),
                ..d
            })
        }
    }

    pub fn options(&self) -> TrainOptions {
        TrainOptions {
            data: self.source(),
            spec: self.spec(),
            protocol: EvalProtocol {
                runs: self.runs,
                test_fraction: self.test_fraction,
                stratified: !self.no_stratify,
                base_seed: self.split_seed,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML config; the `[service]` table is used. TEIDSCOPE_* variables
    /// override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub smf_endpoint: Option<String>,
}

#[derive(Debug, Args)]
pub struct SmfStubArgs {
    #[arg(long, default_value = "127.0.0.1:9090")]
    pub listen: String,
    /// HTTP status answered to every notification.
    #[arg(long, default_value_t = 204)]
    pub status: u16,
    /// Append each notification to this JSONL file.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExpectArg {
    Degraded,
    Healthy,
}

impl From<ExpectArg> for Expectation {
    fn from(e: ExpectArg) -> Self {
        match e {
            ExpectArg::Degraded => Expectation::Degraded,
            ExpectArg::Healthy => Expectation::Healthy,
        }
    }
}

#[derive(Debug, Args)]
pub struct LoopArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `[scenario].expect`.
    #[arg(long, value_enum)]
    pub expect: Option<ExpectArg>,
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

fn default_truth(trace: &Path) -> PathBuf {
    trace.parent().unwrap_or(Path::new(".")).join(TRUTH_FILE)
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Sim(a) => {
            let mut cfg = FileConfig::load_or_default(a.config.as_deref())?;
            if let Some(s) = a.seed {
                cfg.sim.seed = s;
            }
            if let Some(d) = a.duration_s {
                cfg.sim.duration_s = d;
            }
            let s = run_sim(&cfg, &a.out)?;
            println!(
                "{} requests, {} responses ({} lost), {} trace records in {}",
                s.requests,
                s.responses,
                s.lost,
                s.trace_records,
                a.out.display()
            );
        }
        Command::Estimate(a) => {
            let cfg = FileConfig::load_or_default(a.config.as_deref())?;
            let truth = a.truth.clone().unwrap_or_else(|| default_truth(&a.trace));
            let r = run_estimate(&a.trace, &truth, &cfg, &a.out)?;
            println!(
                "{} samples, R2 {:.6}, MAPE {:.4}% (normalized), error mode at {} ms",
                r.regression.count, r.regression.r2_norm, r.regression.mape_norm, r.histogram_mode_center_ms
            );
        }
        Command::Train(a) => {
            let o = run_train(&a.options(), &a.out)?;
            println!(
                "{:?}: mean accuracy {:.4} over {} runs (spread {:.4}), model in {}",
                o.model.spec.kind(),
                o.report.mean_accuracy,
                o.report.evaluation.runs.len(),
                o.report.accuracy_spread,
                a.out.display()
            );
        }
        Command::Serve(a) => {
            let mut cfg = FileConfig::load_or_default(a.config.as_deref())?.service;
            cfg.apply_process_env()?;
            if let Some(l) = a.listen {
                cfg.listen_addr = l;
            }
            if let Some(m) = a.model {
                cfg.model_path = Some(m);
            }
            if let Some(e) = a.smf_endpoint {
                cfg.smf_endpoint = Some(e);
            }
            cfg.validate()?;
            runtime()?.block_on(teidscope_analytics::serve(&cfg, shutdown_signal()))?;
        }
        Command::SmfStub(a) => {
            runtime()?.block_on(async {
                let stub = SmfStub::start(
                    &a.listen,
                    SmfStubOptions {
                        status: a.status,
                        log_path: a.log,
                    },
                )
                .await?;
                tracing::info!(endpoint = %stub.endpoint(), "SMF stub listening");
                shutdown_signal().await;
                stub.shutdown().await.context("SMF stub shutdown")
            })?;
        }
        Command::Loop(a) => {
            let cfg = FileConfig::load(&a.config)?;
            let r = runtime()?.block_on(run_loop(&cfg, &a.out, a.expect.map(Into::into)))?;
            println!(
                "{} notifications from {} decisions; expectation {}",
                r.notifications_received,
                r.service.decisions,
                match (r.expect, r.expectation_held) {
                    (None, _) => "not set",
                    (Some(_), true) => "held",
                    (Some(_), false) => "FAILED",
                }
            );
            if !r.expectation_held {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
