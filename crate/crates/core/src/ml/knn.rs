use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Per-feature min-max scaler fitted on training data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for row in x {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        MinMaxScaler { min, max }
    }

    /// Constant features map to 0.
    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &v)| {
                let span = self.max[j] - self.min[j];
                if span > 0.0 {
                    (v - self.min[j]) / span
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub scaler: MinMaxScaler,
    /// Scaled training rows.
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl KnnModel {
    pub fn fit(k: usize, x: &[Vec<f64>], y: &[usize]) -> Self {
        let scaler = MinMaxScaler::fit(x);
        let points = x.iter().map(|r| scaler.transform(r)).collect();
        KnnModel {
            k,
            scaler,
            points,
            labels: y.to_vec(),
        }
    }

    /// Vote fractions among the `k` nearest training points (Euclidean on
    /// scaled features). Equal distances are broken by training order.
    pub fn predict_proba(&self, x: &[Vec<f64>], classes: usize) -> Vec<Vec<f64>> {
        let k = self.k.min(self.points.len());
        x.par_iter()
            .map(|row| {
                let q = self.scaler.transform(row);
                let mut dist: Vec<(f64, usize)> = self
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (squared_distance(&q, p), i))
                    .collect();
                let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if k < dist.len() {
                    dist.select_nth_unstable_by(k - 1, by_key);
                }
                let mut votes = vec![0.0; classes];
                for &(_, i) in &dist[..k] {
                    votes[self.labels[i]] += 1.0;
                }
                votes.iter_mut().for_each(|v| *v /= k as f64);
                votes
            })
            .collect()
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
