//! Regression and classification metrics.
//!
//! Regression errors are reported both on the raw scale and after a joint
//! min-max normalization over `truth ∪ estimate`. MAPE excludes points whose
//! truth is zero and reports how many were excluded.
//!
//! Classification precision/recall/F1 are support-weighted; macro averages
//! are emitted alongside.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("label {label} outside the {classes} declared classes")]
    UnknownLabel { label: usize, classes: usize },
    #[error("class {class} is degenerate: {reason}")]
    DegenerateClass { class: usize, reason: &'static str },
    #[error("score row {row} is not a probability vector")]
    InvalidScores { row: usize },
    #[error("bin width must be positive")]
    InvalidBinWidth,
}

type Result<T> = std::result::Result<T, MetricsError>;

/// `(x - min) / (max - min)`; all zeros for a constant series.
pub fn min_max_normalize(series: &[f64]) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let (lo, hi) = bounds(series.iter().copied());
    Ok(series.iter().map(|&x| scale(x, lo, hi)).collect())
}

fn bounds(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    })
}

fn scale(x: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (x - lo) / (hi - lo)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub mse_norm: f64,
    pub mae_norm: f64,
    /// Percent.
    pub mape_norm: f64,
    pub r2_norm: f64,
    /// Percent.
    pub mape_orig: f64,
    pub mse_orig: f64,
    pub mae_orig: f64,
    pub count: usize,
    /// Points left out of `mape_orig` because their truth is zero.
    pub mape_excluded_orig: usize,
    /// Points left out of `mape_norm` because their normalized truth is zero.
    pub mape_excluded_norm: usize,
}

struct ErrorSums {
    mse: f64,
    mae: f64,
    mape: f64,
    mape_excluded: usize,
    r2: f64,
}

fn error_sums(truth: &[f64], estimate: &[f64]) -> ErrorSums {
    let n = truth.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut ape = 0.0;
    let mut ape_n = 0usize;
    for (&t, &e) in truth.iter().zip(estimate) {
        let d = t - e;
        se += d * d;
        ae += d.abs();
        if t != 0.0 {
            ape += (d / t).abs();
            ape_n += 1;
        }
    }
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - se / ss_tot
    } else if se == 0.0 {
        1.0
    } else {
        0.0
    };
    ErrorSums {
        mse: se / n,
        mae: ae / n,
        mape: if ape_n > 0 { 100.0 * ape / ape_n as f64 } else { 0.0 },
        mape_excluded: truth.len() - ape_n,
        r2,
    }
}

pub fn regression_report(truth: &[f64], estimate: &[f64]) -> Result<RegressionReport> {
    if truth.len() != estimate.len() {
        return Err(MetricsError::LengthMismatch {
            left: truth.len(),
            right: estimate.len(),
        });
    }
    if truth.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let (lo, hi) = bounds(truth.iter().chain(estimate).copied());
    let tn: Vec<f64> = truth.iter().map(|&x| scale(x, lo, hi)).collect();
    let en: Vec<f64> = estimate.iter().map(|&x| scale(x, lo, hi)).collect();

    let raw = error_sums(truth, estimate);
    let norm = error_sums(&tn, &en);
    Ok(RegressionReport {
        mse_norm: norm.mse,
        mae_norm: norm.mae,
        mape_norm: norm.mape,
        r2_norm: norm.r2,
        mape_orig: raw.mape,
        mse_orig: raw.mse,
        mae_orig: raw.mae,
        count: truth.len(),
        mape_excluded_orig: raw.mape_excluded,
        mape_excluded_norm: norm.mape_excluded,
    })
}

/// Histogram with bins centred on multiples of `bin_width`, so bin 0
/// covers `[-w/2, w/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// `(bin index, count)` in ascending index order; empty bins omitted.
    pub bins: Vec<(i64, u64)>,
}

impl Histogram {
    pub fn center(&self, index: i64) -> f64 {
        index as f64 * self.bin_width
    }

    /// Index of the most populated bin; ties go to the bin closest to zero.
    pub fn mode_index(&self) -> Option<i64> {
        self.bins
            .iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.abs().cmp(&a.0.abs())))
            .map(|b| b.0)
    }
}

pub fn error_histogram(errors: &[f64], bin_width: f64) -> Result<Histogram> {
    if !(bin_width > 0.0) {
        return Err(MetricsError::InvalidBinWidth);
    }
    let mut bins: BTreeMap<i64, u64> = BTreeMap::new();
    for &e in errors {
        *bins.entry((e / bin_width + 0.5).floor() as i64).or_default() += 1;
    }
    Ok(Histogram {
        bin_width,
        bins: bins.into_iter().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// Rows are truth, columns are predictions.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub accuracy: f64,
    /// Support-weighted.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl ClassifierReport {
    pub fn mean(reports: &[ClassifierReport]) -> ClassifierReport {
        let n = reports.len().max(1) as f64;
        let sum = |f: fn(&ClassifierReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        ClassifierReport {
            accuracy: sum(|r| r.accuracy),
            precision: sum(|r| r.precision),
            recall: sum(|r| r.recall),
            f1: sum(|r| r.f1),
            macro_precision: sum(|r| r.macro_precision),
            macro_recall: sum(|r| r.macro_recall),
            macro_f1: sum(|r| r.macro_f1),
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_report(
    truth: &[usize],
    predicted: &[usize],
    classes: &[String],
) -> Result<(ConfusionMatrix, ClassifierReport)> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            left: truth.len(),
            right: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let k = classes.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label >= k {
                return Err(MetricsError::UnknownLabel { label, classes: k });
            }
        }
        counts[t][p] += 1;
    }
    let cm = ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    };
    let total = cm.total();

    let mut report = ClassifierReport {
        accuracy: ratio(cm.trace(), total),
        ..Default::default()
    };
    let mut macro_n = 0usize;
    for c in 0..k {
        let tp = cm.counts[c][c];
        let support = cm.row_sum(c);
        let predicted_c = cm.col_sum(c);
        let precision = ratio(tp, predicted_c);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let w = ratio(support, total);
        report.precision += w * precision;
        report.recall += w * recall;
        report.f1 += w * f1;
        if support > 0 || predicted_c > 0 {
            macro_n += 1;
            report.macro_precision += precision;
            report.macro_recall += recall;
            report.macro_f1 += f1;
        }
    }
    let m = macro_n.max(1) as f64;
    report.macro_precision /= m;
    report.macro_recall /= m;
    report.macro_f1 /= m;
    Ok((cm, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    /// Score threshold at which this point is reached (`+inf` for the origin).
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoints {
    pub points: Vec<CurvePoint>,
    /// Trapezoidal area for ROC; average precision for precision-recall.
    pub auc: f64,
}

/// One-vs-rest labels and positive-class scores from a probability matrix.
fn one_vs_rest(
    truth: &[usize],
    scores: &[Vec<f64>],
    positive: usize,
) -> Result<(Vec<bool>, Vec<f64>)> {
    if truth.len() != scores.len() {
        return Err(MetricsError::LengthMismatch {
            left: truth.len(),
            right: scores.len(),
        });
    }
    if truth.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let k = scores[0].len();
    if positive >= k {
        return Err(MetricsError::UnknownLabel {
            label: positive,
            classes: k,
        });
    }
    for (row, s) in scores.iter().enumerate() {
        let sum: f64 = s.iter().sum();
        if s.len() != k || (sum - 1.0).abs() > 1e-6 || s.iter().any(|p| !(*p >= 0.0)) {
            return Err(MetricsError::InvalidScores { row });
        }
    }
    if let Some(&label) = truth.iter().find(|&&t| t >= k) {
        return Err(MetricsError::UnknownLabel { label, classes: k });
    }
    Ok((
        truth.iter().map(|&t| t == positive).collect(),
        scores.iter().map(|s| s[positive]).collect(),
    ))
}

/// Walks thresholds from high to low, yielding cumulative `(tp, fp, threshold)`
/// after each group of tied scores.
fn threshold_sweep(labels: &[bool], scores: &[f64]) -> Vec<(u64, u64, f64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((tp, fp, s));
    }
    out
}

pub fn roc_curve_binary(labels: &[bool], scores: &[f64]) -> Result<CurvePoints> {
    if labels.len() != scores.len() {
        return Err(MetricsError::LengthMismatch {
            left: labels.len(),
            right: scores.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 {
        return Err(MetricsError::DegenerateClass {
            class: 1,
            reason: "no positive samples",
        });
    }
    if neg == 0 {
        return Err(MetricsError::DegenerateClass {
            class: 1,
            reason: "no negative samples",
        });
    }
    let mut points = vec![CurvePoint {
        x: 0.0,
        y: 0.0,
        threshold: f64::INFINITY,
    }];
    let mut auc = 0.0;
    for (tp, fp, threshold) in threshold_sweep(labels, scores) {
        let p = CurvePoint {
            x: fp as f64 / neg as f64,
            y: tp as f64 / pos as f64,
            threshold,
        };
        let prev = points.last().expect("origin present");
        auc += (p.x - prev.x) * (p.y + prev.y) / 2.0;
        points.push(p);
    }
    Ok(CurvePoints { points, auc })
}

pub fn precision_recall_curve_binary(labels: &[bool], scores: &[f64]) -> Result<CurvePoints> {
    if labels.len() != scores.len() {
        return Err(MetricsError::LengthMismatch {
            left: labels.len(),
            right: scores.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    if pos == 0 {
        return Err(MetricsError::DegenerateClass {
            class: 1,
            reason: "no positive samples",
        });
    }
    let mut points = vec![CurvePoint {
        x: 0.0,
        y: 1.0,
        threshold: f64::INFINITY,
    }];
    let mut ap = 0.0;
    for (tp, fp, threshold) in threshold_sweep(labels, scores) {
        let p = CurvePoint {
            x: tp as f64 / pos as f64,
            y: tp as f64 / (tp + fp) as f64,
            threshold,
        };
        ap += (p.x - points.last().expect("start present").x) * p.y;
        points.push(p);
    }
    Ok(CurvePoints { points, auc: ap })
}

/// One-vs-rest ROC for `positive_class`.
pub fn roc_curve(truth: &[usize], scores: &[Vec<f64>], positive_class: usize) -> Result<CurvePoints> {
    let (labels, s) = one_vs_rest(truth, scores, positive_class)?;
    roc_curve_binary(&labels, &s).map_err(|e| relabel(e, positive_class))
}

/// One-vs-rest precision-recall curve for `positive_class`; x is recall.
pub fn precision_recall_curve(
    truth: &[usize],
    scores: &[Vec<f64>],
    positive_class: usize,
) -> Result<CurvePoints> {
    let (labels, s) = one_vs_rest(truth, scores, positive_class)?;
    precision_recall_curve_binary(&labels, &s).map_err(|e| relabel(e, positive_class))
}

fn relabel(e: MetricsError, class: usize) -> MetricsError {
    match e {
        MetricsError::DegenerateClass { reason, .. } => MetricsError::DegenerateClass { class, reason },
        other => other,
    }
}

/// Writes `x,y,threshold` rows.
pub fn write_curve_csv<W: Write>(curve: &CurvePoints, mut out: W) -> std::io::Result<()> {
    writeln!(out, "x,y,threshold")?;
    for p in &curve.points {
        writeln!(out, "{},{},{}", p.x, p.y, p.threshold)?;
    }
    Ok(())
}
