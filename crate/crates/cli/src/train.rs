use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use teidscope_analytics::features::{latency_session_dataset, LatencySessionConfig};
use teidscope_core::metrics::{precision_recall_curve, roc_curve, write_curve_csv, MetricsError};
use teidscope_core::ml::{
    evaluate, fit, load_dataset, synth_dataset, Dataset, EvalProtocol, Evaluation, ModelSpec, SynthConfig,
    TrainedModel, MODEL_FORMAT_VERSION,
};

use crate::manifest::ManifestBuilder;

pub const MODEL_FILE: &str = "model.json";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const ACCURACY_FILE: &str = "accuracy_runs.csv";
pub const EVALUATION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf, label_column: String },
    Synth(SynthConfig),
    LatencySessions(LatencySessionConfig),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        Ok(match self {
            DataSource::Csv { path, label_column } => {
                load_dataset(path, label_column).with_context(|| format!("cannot load dataset {}", path.display()))?
            }
            DataSource::Synth(cfg) => synth_dataset(cfg)?,
            DataSource::LatencySessions(cfg) => latency_session_dataset(cfg)?,
        })
    }

    fn seed(&self) -> Option<u64> {
        match self {
            DataSource::Csv { .. } => None,
            DataSource::Synth(c) => Some(c.seed),
            DataSource::LatencySessions(c) => Some(c.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub data: DataSource,
    pub spec: ModelSpec,
    pub protocol: EvalProtocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationFile {
    pub format_version: u32,
    pub samples: usize,
    pub features: usize,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    pub dropped_rows: usize,
    pub mean_accuracy: f64,
    pub accuracy_spread: f64,
    pub roc_auc: Vec<Option<f64>>,
    pub pr_auc: Vec<Option<f64>>,
    pub evaluation: Evaluation,
}

pub struct TrainOutcome {
    pub model: TrainedModel,
    pub report: EvaluationFile,
}

/// File-name-safe form of a class name.
pub fn sanitize(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "class".into()
    } else {
        s
    }
}

fn write_curve(path: &Path, curve: &teidscope_core::metrics::CurvePoints) -> Result<()> {
    let w = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    write_curve_csv(curve, w)?;
    Ok(())
}

#[derive(Serialize)]
struct AccuracyRow {
    run: usize,
    seed: u64,
    accuracy: f64,
    macro_precision: f64,
    macro_recall: f64,
}

/// Evaluates `opts.spec` with repeated hold-out, then fits it on the whole
/// dataset and writes the model plus its evaluation into `out`.
pub fn run_train(opts: &TrainOptions, out: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out).with_context(|| format!("cannot create output dir {}", out.display()))?;
    let mut manifest = ManifestBuilder::new("train", out, opts)?;
    if let DataSource::Csv { path, .. } = &opts.data {
        manifest.input(path, "dataset-csv", 1)?;
    }
    if let Some(seed) = opts.data.seed() {
        manifest.seed("data", seed);
    }
    manifest.seed("split_base", opts.protocol.base_seed);
    if let ModelSpec::RandomForest { seed, .. } = opts.spec {
        manifest.seed("forest", seed);
    }

    let data = opts.data.load()?;
    let eval = evaluate(&opts.spec, &data, &opts.protocol)?;
    let model = fit(&opts.spec, &data)?;
    model.save(out.join(MODEL_FILE))?;

    let mut w = csv::Writer::from_path(out.join(ACCURACY_FILE))?;
    for r in &eval.runs {
        w.serialize(AccuracyRow {
            run: r.run,
            seed: r.seed,
            accuracy: r.report.accuracy,
            macro_precision: r.report.macro_precision,
            macro_recall: r.report.macro_recall,
        })?;
    }
    w.flush()?;

    let mut curve_files = Vec::new();
    let mut roc_auc = Vec::new();
    let mut pr_auc = Vec::new();
    for (c, name) in data.class_names.iter().enumerate() {
        match roc_curve(&eval.first_run_truth, &eval.first_run_scores, c) {
            Ok(roc) => {
                let pr = precision_recall_curve(&eval.first_run_truth, &eval.first_run_scores, c)?;
                let (rf, pf) = (format!("roc_{}.csv", sanitize(name)), format!("pr_{}.csv", sanitize(name)));
                write_curve(&out.join(&rf), &roc)?;
                write_curve(&out.join(&pf), &pr)?;
                roc_auc.push(Some(roc.auc));
                pr_auc.push(Some(pr.auc));
                curve_files.push(rf);
                curve_files.push(pf);
            }
            Err(MetricsError::DegenerateClass { .. }) => {
                tracing::warn!(class = %name, "class absent or alone in the first test split, no curves");
                roc_auc.push(None);
                pr_auc.push(None);
            }
            Err(e) => return Err(e.into()),
        }
    }

    let report = EvaluationFile {
        format_version: EVALUATION_FORMAT_VERSION,
        samples: data.len(),
        features: data.dim(),
        class_names: data.class_names.clone(),
        class_counts: data.class_counts(),
        dropped_rows: data.dropped_rows,
        mean_accuracy: eval.mean.accuracy,
        accuracy_spread: eval.accuracy_spread(),
        roc_auc,
        pr_auc,
        evaluation: eval,
    };
    std::fs::write(out.join(EVALUATION_FILE), serde_json::to_string_pretty(&report)? + "\n")?;

    manifest.output(MODEL_FILE, "model-json", MODEL_FORMAT_VERSION)?;
    manifest.output(EVALUATION_FILE, "evaluation-json", EVALUATION_FORMAT_VERSION)?;
    manifest.output(ACCURACY_FILE, "accuracy-csv", EVALUATION_FORMAT_VERSION)?;
    for f in &curve_files {
        manifest.output(f, "curve-csv", EVALUATION_FORMAT_VERSION)?;
    }
    manifest.finish()?;
    tracing::info!(kind = ?opts.spec.kind(), accuracy = report.mean_accuracy, "training finished");
    Ok(TrainOutcome { model, report })
}
