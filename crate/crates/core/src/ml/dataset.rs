use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::MlError;

/// Label column used by the game-traffic CSV schema.
pub const DEFAULT_LABEL_COLUMN: &str = "game";
pub const DEFAULT_CLASS_NAMES: [&str; 3] = ["LOL", "TFT", "VAL"];
/// Class shares for LOL / TFT / VAL.
pub const DEFAULT_PROPORTIONS: [f64; 3] = [0.55, 0.21, 0.24];

/// Labeled feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    /// Code dictionaries of categorical columns; a value's code is its index.
    pub categorical: BTreeMap<String, Vec<String>>,
    /// Rows discarded during ingestion.
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self, MlError> {
        let d = features.first().map_or(0, Vec::len);
        let feature_names = (0..d).map(|i| format!("f{i}")).collect();
        let ds = Dataset {
            features,
            labels,
            class_names,
            feature_names,
            categorical: BTreeMap::new(),
            dropped_rows: 0,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), MlError> {
        if self.features.is_empty() {
            return Err(MlError::EmptyData);
        }
        if self.features.len() != self.labels.len() {
            return Err(MlError::InvalidData(format!(
                "{} feature rows but {} labels",
                self.features.len(),
                self.labels.len()
            )));
        }
        let d = self.dim();
        if self.features.iter().any(|r| r.len() != d) {
            return Err(MlError::InvalidData("ragged feature rows".into()));
        }
        if self.features.iter().flatten().any(|x| !x.is_finite()) {
            return Err(MlError::InvalidData("non-finite feature value".into()));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.class_names.len()) {
            return Err(MlError::InvalidData(format!("label {l} has no class name")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: rows.iter().map(|&i| self.features[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            feature_names: self.feature_names.clone(),
            categorical: self.categorical.clone(),
            dropped_rows: 0,
        }
    }
}

/// Reads a CSV with a header row.
///
/// A column is numeric when every non-empty cell parses as a number, and
/// categorical otherwise; categorical values are coded by first appearance
/// among kept rows. Rows with a wrong field count, an empty cell or a
/// non-finite number are dropped. Class names are the distinct labels in
/// sorted order.
pub fn load_dataset(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset, MlError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| MlError::Csv(e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| MlError::Csv(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| MlError::MissingLabelColumn(label_column.to_owned()))?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| MlError::Csv(e.to_string()))?;
        if record.len() != headers.len() || record.iter().any(str::is_empty) {
            dropped += 1;
            continue;
        }
        rows.push(record.iter().map(str::to_owned).collect());
    }

    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != label_idx).collect();
    let numeric: Vec<bool> = feature_cols
        .iter()
        .map(|&c| rows.iter().all(|r| r[c].parse::<f64>().is_ok()))
        .collect();

    // drop rows with NaN/inf in numeric columns before coding categories
    rows.retain(|r| {
        let ok = feature_cols
            .iter()
            .zip(&numeric)
            .filter(|(_, &num)| num)
            .all(|(&c, _)| r[c].parse::<f64>().map(f64::is_finite).unwrap_or(false));
        if !ok {
            dropped += 1;
        }
        ok
    });
    if rows.is_empty() {
        return Err(MlError::EmptyAfterCleaning { dropped });
    }

    let class_names: Vec<String> = rows
        .iter()
        .map(|r| r[label_idx].clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let class_index: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut dictionaries: Vec<(Vec<String>, HashMap<String, usize>)> =
        vec![(Vec::new(), HashMap::new()); feature_cols.len()];
    let mut features = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for r in &rows {
        let mut x = Vec::with_capacity(feature_cols.len());
        for (j, &c) in feature_cols.iter().enumerate() {
            if numeric[j] {
                x.push(r[c].parse::<f64>().expect("checked numeric"));
            } else {
                let (order, codes) = &mut dictionaries[j];
                let next = codes.len();
                let code = *codes.entry(r[c].clone()).or_insert_with(|| {
                    order.push(r[c].clone());
                    next
                });
                x.push(code as f64);
            }
        }
        features.push(x);
        labels.push(class_index[r[label_idx].as_str()]);
    }

    let feature_names: Vec<String> = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    let categorical = feature_cols
        .iter()
        .enumerate()
        .filter(|(j, _)| !numeric[*j])
        .map(|(j, &c)| (headers[c].clone(), dictionaries[j].0.clone()))
        .collect();

    let ds = Dataset {
        features,
        labels,
        class_names,
        feature_names,
        categorical,
        dropped_rows: dropped,
    };
    ds.validate()?;
    Ok(ds)
}

/// Parameters of the Gaussian-blob generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub class_count: usize,
    pub separation: f64,
    pub seed: u64,
    /// Class shares; `None` uses the game-traffic shares for three classes
    /// and uniform shares otherwise.
    pub proportions: Option<Vec<f64>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 10_000,
            d: 16,
            class_count: 3,
            separation: 4.0,
            seed: 7,
            proportions: None,
        }
    }
}

/// Splits `n` into integer class sizes by largest remainder.
pub fn allocate_counts(n: usize, proportions: &[f64]) -> Vec<usize> {
    let total: f64 = proportions.iter().sum();
    let exact: Vec<f64> = proportions.iter().map(|p| p / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut rest: Vec<usize> = (0..counts.len()).collect();
    rest.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &i in rest.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Centre of class `c`. With enough dimensions each class sits on its own
/// axis at `separation / √2`, so every pair of centroids is `separation`
/// apart; otherwise centroids are spaced `separation` apart along axis 0.
pub fn class_centroid(c: usize, d: usize, class_count: usize, separation: f64) -> Vec<f64> {
    let mut mu = vec![0.0; d];
    if class_count <= d {
        mu[c] = separation / std::f64::consts::SQRT_2;
    } else {
        mu[0] = c as f64 * separation;
    }
    mu
}

/// Unit-variance Gaussian blobs, one per class, deterministic in `seed`.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset, MlError> {
    if cfg.class_count == 0 || cfg.n < cfg.class_count || cfg.d == 0 || !(cfg.separation >= 0.0) {
        return Err(MlError::InvalidSpec(
            "synthetic data needs n >= class_count >= 1, d >= 1, separation >= 0".into(),
        ));
    }
    let proportions = match &cfg.proportions {
        Some(p) if p.len() == cfg.class_count && p.iter().all(|x| *x >= 0.0) && p.iter().sum::<f64>() > 0.0 => p.clone(),
        Some(_) => return Err(MlError::InvalidSpec("proportions must match class_count".into())),
        None if cfg.class_count == 3 => DEFAULT_PROPORTIONS.to_vec(),
        None => vec![1.0; cfg.class_count],
    };
    let class_names: Vec<String> = if cfg.class_count == 3 {
        DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..cfg.class_count).map(|i| format!("class{i}")).collect()
    };

    let counts = allocate_counts(cfg.n, &proportions);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(cfg.n);
    for (c, &count) in counts.iter().enumerate() {
        let mu = class_centroid(c, cfg.d, cfg.class_count, cfg.separation);
        for _ in 0..count {
            let x = mu.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect();
            rows.push((x, c));
        }
    }
    rows.shuffle(&mut rng);
    let (features, labels) = rows.into_iter().unzip();
    Dataset::new(features, labels, class_names)
}

/// Splits row indices into `(train, test)`. With `stratified`, each class
/// contributes `round(count * test_fraction)` rows to the test side.
pub fn train_test_split(
    labels: &[usize],
    test_fraction: f64,
    stratified: bool,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let groups: Vec<Vec<usize>> = if stratified {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut g = vec![Vec::new(); k];
        for (i, &l) in labels.iter().enumerate() {
            g[l].push(i);
        }
        g
    } else {
        vec![(0..labels.len()).collect()]
    };
    for mut g in groups {
        g.shuffle(&mut rng);
        let n_test = (g.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&g[..n_test]);
        train.extend_from_slice(&g[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}
