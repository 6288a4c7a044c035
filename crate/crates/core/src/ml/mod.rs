//! Game-traffic classifiers: k-nearest neighbours, CART decision tree,
//! random forest and softmax gradient-boosted trees, with dataset
//! ingestion, a synthetic generator and the repeated-split evaluation
//! protocol.

mod dataset;
mod ensemble;
mod knn;
pub mod tree;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{classification_report, ClassifierReport, ConfusionMatrix, MetricsError};

pub use dataset::{
    allocate_counts, class_centroid, load_dataset, synth_dataset, train_test_split, Dataset,
    SynthConfig, DEFAULT_CLASS_NAMES, DEFAULT_LABEL_COLUMN, DEFAULT_PROPORTIONS,
};
pub use ensemble::BoostModel;
pub use knn::{squared_distance, KnnModel, MinMaxScaler};
pub use tree::{Node, Tree};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MlError {
    #[error("dataset is empty")]
    EmptyData,
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("label column {0:?} not found")]
    MissingLabelColumn(String),
    #[error("no rows left after cleaning ({dropped} dropped)")]
    EmptyAfterCleaning { dropped: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("invalid evaluation protocol: {0}")]
    InvalidProtocol(&'static str),
    #[error("unsupported model format version {0}")]
    UnsupportedFormat(u32),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Knn,
    DecisionTree,
    RandomForest,
    GradientBoost,
}

/// Model family plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Knn {
        k: usize,
    },
    DecisionTree {
        max_depth: usize,
        min_leaf: usize,
    },
    RandomForest {
        n_trees: usize,
        max_depth: usize,
        min_leaf: usize,
        /// Features tried per split; `None` means `round(sqrt(d))`.
        max_features: Option<usize>,
        bootstrap: bool,
        seed: u64,
    },
    GradientBoost {
        n_rounds: usize,
        learning_rate: f64,
        max_depth: usize,
        min_leaf: usize,
        l2: f64,
    },
}

impl ModelSpec {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Knn => ModelSpec::Knn { k: 5 },
            ModelKind::DecisionTree => ModelSpec::DecisionTree {
                max_depth: 10,
                min_leaf: 5,
            },
            ModelKind::RandomForest => ModelSpec::RandomForest {
                n_trees: 100,
                max_depth: 16,
                min_leaf: 1,
                max_features: None,
                bootstrap: true,
                seed: 0,
            },
            ModelKind::GradientBoost => ModelSpec::GradientBoost {
                n_rounds: 100,
                learning_rate: 0.1,
                max_depth: 4,
                min_leaf: 5,
                l2: 1.0,
            },
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Knn { .. } => ModelKind::Knn,
            ModelSpec::DecisionTree { .. } => ModelKind::DecisionTree,
            ModelSpec::RandomForest { .. } => ModelKind::RandomForest,
            ModelSpec::GradientBoost { .. } => ModelKind::GradientBoost,
        }
    }

    pub fn validate(&self) -> Result<(), MlError> {
        let bad = |m: &str| Err(MlError::InvalidSpec(m.to_owned()));
        match *self {
            ModelSpec::Knn { k: 0 } => bad("k must be >= 1"),
            ModelSpec::DecisionTree { max_depth: 0, .. } => bad("max_depth must be >= 1"),
            ModelSpec::RandomForest { n_trees, max_depth, max_features, .. } => {
                if n_trees == 0 {
                    bad("n_trees must be >= 1")
                } else if max_depth == 0 {
                    bad("max_depth must be >= 1")
                } else if max_features == Some(0) {
                    bad("max_features must be >= 1")
                } else {
                    Ok(())
                }
            }
            ModelSpec::GradientBoost { n_rounds, learning_rate, max_depth, l2, .. } => {
                if n_rounds == 0 {
                    bad("n_rounds must be >= 1")
                } else if !(learning_rate > 0.0 && learning_rate <= 1.0) {
                    bad("learning_rate must be in (0, 1]")
                } else if max_depth == 0 {
                    bad("max_depth must be >= 1")
                } else if !(l2 >= 0.0) {
                    bad("l2 must be >= 0")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelState {
    Knn(KnnModel),
    Tree { tree: Tree },
    Forest { trees: Vec<Tree> },
    Boost(BoostModel),
}

/// A fitted, immutable model. Serializes to a versioned JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub n_features: usize,
    pub state: ModelState,
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String, MlError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, MlError> {
        let model: TrainedModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(MlError::UnsupportedFormat(model.format_version));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MlError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MlError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, MlError> {
        predict_proba(self, x)
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<usize>, MlError> {
        Ok(self.predict_proba(x)?.iter().map(|p| argmax(p)).collect())
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn fit(spec: &ModelSpec, train: &Dataset) -> Result<TrainedModel, MlError> {
    spec.validate()?;
    train.validate()?;
    let k = train.class_count();
    let d = train.dim();
    let state = match *spec {
        ModelSpec::Knn { k: neighbours } => {
            ModelState::Knn(KnnModel::fit(neighbours, &train.features, &train.labels))
        }
        ModelSpec::DecisionTree { max_depth, min_leaf } => ModelState::Tree {
            tree: ensemble::fit_tree(&train.features, &train.labels, k, max_depth, min_leaf),
        },
        ModelSpec::RandomForest {
            n_trees,
            max_depth,
            min_leaf,
            max_features,
            bootstrap,
            seed,
        } => {
            let per_split = max_features.unwrap_or_else(|| ((d as f64).sqrt().round() as usize).max(1));
            ModelState::Forest {
                trees: ensemble::fit_forest(
                    &train.features,
                    &train.labels,
                    k,
                    ensemble::ForestParams {
                        n_trees,
                        max_depth,
                        min_leaf,
                        features_per_split: per_split,
                        bootstrap,
                        seed,
                    },
                ),
            }
        }
        ModelSpec::GradientBoost {
            n_rounds,
            learning_rate,
            max_depth,
            min_leaf,
            l2,
        } => ModelState::Boost(ensemble::fit_boost(
            &train.features,
            &train.labels,
            k,
            ensemble::BoostParams {
                n_rounds,
                learning_rate,
                max_depth,
                min_leaf,
                l2,
            },
        )),
    };
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        spec: spec.clone(),
        class_names: train.class_names.clone(),
        feature_names: train.feature_names.clone(),
        n_features: d,
        state,
    })
}

/// Class probabilities, one row per input row; each row sums to 1.
pub fn predict_proba(model: &TrainedModel, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, MlError> {
    if let Some(row) = x.iter().find(|r| r.len() != model.n_features) {
        return Err(MlError::DimensionMismatch {
            expected: model.n_features,
            got: row.len(),
        });
    }
    let k = model.class_count();
    Ok(match &model.state {
        ModelState::Knn(m) => m.predict_proba(x, k),
        ModelState::Tree { tree } => x.iter().map(|r| tree.leaf_value(r).to_vec()).collect(),
        ModelState::Forest { trees } => x
            .par_iter()
            .map(|r| {
                let mut p = vec![0.0; k];
                for t in trees {
                    for (a, v) in p.iter_mut().zip(t.leaf_value(r)) {
                        *a += v;
                    }
                }
                p.iter_mut().for_each(|v| *v /= trees.len() as f64);
                p
            })
            .collect(),
        ModelState::Boost(b) => x.par_iter().map(|r| b.predict_row(r)).collect(),
    })
}

/// Repeated hold-out evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalProtocol {
    pub runs: usize,
    pub test_fraction: f64,
    pub stratified: bool,
    pub base_seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            runs: 10,
            test_fraction: 0.2,
            stratified: true,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub seed: u64,
    pub report: ClassifierReport,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub kind: ModelKind,
    pub runs: Vec<RunReport>,
    pub mean: ClassifierReport,
    /// Test labels and scores of the first run, for curve plotting.
    pub first_run_truth: Vec<usize>,
    pub first_run_scores: Vec<Vec<f64>>,
}

impl Evaluation {
    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.report.accuracy).collect()
    }

    pub fn accuracy_spread(&self) -> f64 {
        let acc = self.accuracies();
        let max = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = acc.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// For run `i`: split with seed `base_seed + i`, fit on the training part,
/// score the test part.
pub fn evaluate(spec: &ModelSpec, data: &Dataset, protocol: &EvalProtocol) -> Result<Evaluation, MlError> {
    if protocol.runs == 0 {
        return Err(MlError::InvalidProtocol("runs must be >= 1"));
    }
    if !(protocol.test_fraction > 0.0 && protocol.test_fraction < 1.0) {
        return Err(MlError::InvalidProtocol("test_fraction must be in (0, 1)"));
    }
    spec.validate()?;
    data.validate()?;

    type RunOutcome = Result<(RunReport, Vec<usize>, Vec<Vec<f64>>), MlError>;
    let outcomes: Vec<RunOutcome> = (0..protocol.runs)
        .into_par_iter()
        .map(|run| {
            let seed = protocol.base_seed.wrapping_add(run as u64);
            let (train_idx, test_idx) =
                train_test_split(&data.labels, protocol.test_fraction, protocol.stratified, seed);
            if train_idx.is_empty() || test_idx.is_empty() {
                return Err(MlError::InvalidProtocol("split left an empty side"));
            }
            let train = data.subset(&train_idx);
            let test = data.subset(&test_idx);
            let model = fit(spec, &train)?;
            let scores = model.predict_proba(&test.features)?;
            let predicted: Vec<usize> = scores.iter().map(|p| argmax(p)).collect();
            let (confusion, report) = classification_report(&test.labels, &predicted, &data.class_names)?;
            Ok((RunReport { run, seed, report, confusion }, test.labels, scores))
        })
        .collect();

    let mut runs = Vec::with_capacity(protocol.runs);
    let mut first = None;
    for o in outcomes {
        let (r, truth, scores) = o?;
        if first.is_none() {
            first = Some((truth, scores));
        }
        runs.push(r);
    }
    let (first_run_truth, first_run_scores) = first.expect("runs >= 1");
    let reports: Vec<ClassifierReport> = runs.iter().map(|r| r.report).collect();
    Ok(Evaluation {
        kind: spec.kind(),
        mean: ClassifierReport::mean(&reports),
        runs,
        first_run_truth,
        first_run_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, separation: f64, seed: u64) -> Dataset {
        synth_dataset(&SynthConfig {
            n,
            d: 4,
            class_count: 3,
            separation,
            seed,
            proportions: None,
        })
        .unwrap()
    }

    fn all_specs() -> Vec<ModelSpec> {
        vec![
            ModelSpec::Knn { k: 3 },
            ModelSpec::DecisionTree { max_depth: 6, min_leaf: 2 },
            ModelSpec::RandomForest {
                n_trees: 10,
                max_depth: 8,
                min_leaf: 1,
                max_features: None,
                bootstrap: true,
                seed: 3,
            },
            ModelSpec::GradientBoost {
                n_rounds: 20,
                learning_rate: 0.2,
                max_depth: 3,
                min_leaf: 2,
                l2: 1.0,
            },
        ]
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::Knn { k: 0 }.validate().is_err());
        assert!(ModelSpec::DecisionTree { max_depth: 0, min_leaf: 1 }.validate().is_err());
        let mut gb = ModelSpec::default_for(ModelKind::GradientBoost);
        if let ModelSpec::GradientBoost { learning_rate, .. } = &mut gb {
            *learning_rate = 1.5;
        }
        assert!(gb.validate().is_err());
        for kind in [ModelKind::Knn, ModelKind::DecisionTree, ModelKind::RandomForest, ModelKind::GradientBoost] {
            let s = ModelSpec::default_for(kind);
            assert!(s.validate().is_ok());
            assert_eq!(s.kind(), kind);
        }
    }

    #[test]
    fn single_class_training_predicts_that_class() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let data = Dataset::new(x, vec![1; 12], vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let probe = vec![vec![3.5, 1.0], vec![-10.0, 40.0]];
        for spec in all_specs() {
            let m = fit(&spec, &data).unwrap();
            for p in m.predict_proba(&probe).unwrap() {
                assert!((p[1] - 1.0).abs() < 1e-12, "{spec:?}: {p:?}");
            }
        }
    }

    #[test]
    fn probabilities_are_distributions() {
        let data = blobs(300, 2.0, 1);
        let probe = blobs(50, 2.0, 2).features;
        for spec in all_specs() {
            let m = fit(&spec, &data).unwrap();
            for p in m.predict_proba(&probe).unwrap() {
                assert!(p.iter().all(|v| *v >= 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6, "{spec:?}");
            }
        }
    }

    #[test]
    fn fitting_is_deterministic() {
        let data = blobs(300, 2.0, 4);
        let probe = blobs(40, 2.0, 5).features;
        for spec in all_specs() {
            let a = fit(&spec, &data).unwrap().predict_proba(&probe).unwrap();
            let b = fit(&spec, &data).unwrap().predict_proba(&probe).unwrap();
            assert_eq!(a, b, "{spec:?}");
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = fit(&ModelSpec::Knn { k: 1 }, &blobs(30, 2.0, 1)).unwrap();
        assert!(matches!(
            m.predict_proba(&[vec![1.0]]),
            Err(MlError::DimensionMismatch { expected: 4, got: 1 })
        ));
    }

    #[test]
    fn knn_vote_fractions() {
        let x = vec![vec![0.0], vec![0.1], vec![0.2], vec![5.0], vec![10.0]];
        let data = Dataset::new(x, vec![0, 0, 1, 2, 2], vec!["A".into(), "B".into(), "C".into()]).unwrap();
        let m = fit(&ModelSpec::Knn { k: 3 }, &data).unwrap();
        let p = m.predict_proba(&[vec![0.05]]).unwrap();
        assert_eq!(p[0], vec![2.0 / 3.0, 1.0 / 3.0, 0.0]);
        let m1 = fit(&ModelSpec::Knn { k: 1 }, &data).unwrap();
        assert_eq!(m1.predict_proba(&[vec![5.0]]).unwrap()[0], vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn model_json_round_trip() {
        let data = blobs(200, 3.0, 9);
        for spec in all_specs() {
            let m = fit(&spec, &data).unwrap();
            let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(
                back.predict_proba(&data.features[..20]).unwrap(),
                m.predict_proba(&data.features[..20]).unwrap()
            );
        }
        let mut m = fit(&ModelSpec::Knn { k: 1 }, &data).unwrap();
        m.format_version = 99;
        assert!(matches!(
            TrainedModel::from_json(&m.to_json().unwrap()),
            Err(MlError::UnsupportedFormat(99))
        ));
    }

    #[test]
    fn evaluate_is_deterministic_and_validated() {
        let data = blobs(400, 6.0, 2);
        let proto = EvalProtocol { runs: 3, ..Default::default() };
        let spec = ModelSpec::Knn { k: 3 };
        let a = evaluate(&spec, &data, &proto).unwrap();
        let b = evaluate(&spec, &data, &proto).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs.len(), 3);
        assert_eq!(a.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(evaluate(&spec, &data, &EvalProtocol { runs: 0, ..proto }).is_err());
        assert!(evaluate(&spec, &data, &EvalProtocol { test_fraction: 1.0, ..proto }).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }
}
