use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Gini, GrowParams, Newton, Presorted, Tree};

const MIN_HESSIAN: f64 = 1e-6;

fn one_hot(labels: &[usize], k: usize, weights: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        s[i * k + l] = weights[i];
    }
    s
}

pub(crate) fn fit_tree(x: &[Vec<f64>], y: &[usize], k: usize, max_depth: usize, min_leaf: usize) -> Tree {
    let presorted = Presorted::new(x);
    let weights = vec![1.0; y.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    grow(
        x,
        &one_hot(y, k, &weights),
        &weights,
        &presorted,
        &Gini { classes: k },
        GrowParams {
            max_depth,
            min_leaf,
            features_per_split: usize::MAX,
        },
        &mut rng,
    )
}

pub(crate) struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

fn tree_seed(seed: u64, tree: usize) -> u64 {
    seed ^ (tree as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trees are grown in parallel, each from its own seeded generator, so the
/// result does not depend on scheduling.
pub(crate) fn fit_forest(x: &[Vec<f64>], y: &[usize], k: usize, p: ForestParams) -> Vec<Tree> {
    let presorted = Presorted::new(x);
    let n = y.len();
    (0..p.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(p.seed, t));
            let weights = if p.bootstrap {
                let mut w = vec![0.0; n];
                for _ in 0..n {
                    w[rng.random_range(0..n)] += 1.0;
                }
                w
            } else {
                vec![1.0; n]
            };
            grow(
                x,
                &one_hot(y, k, &weights),
                &weights,
                &presorted,
                &Gini { classes: k },
                GrowParams {
                    max_depth: p.max_depth,
                    min_leaf: p.min_leaf,
                    features_per_split: p.features_per_split,
                },
                &mut rng,
            )
        })
        .collect()
}

pub(crate) struct BoostParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub l2: f64,
}

/// Additive softmax model: `score_k(x) = init_k + lr · Σ_rounds tree_k(x)`.
/// Classes absent from training are excluded from the softmax and get
/// probability 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub learning_rate: f64,
    pub present: Vec<bool>,
    /// Log class priors of the training set (0 for absent classes).
    pub init: Vec<f64>,
    /// `rounds[r][k]` is the round-`r` tree for class `k`.
    pub rounds: Vec<Vec<Option<Tree>>>,
    /// Mean multinomial negative log-likelihood on the training set before
    /// the first round and after each round.
    pub train_loss: Vec<f64>,
}

impl BoostModel {
    pub fn raw_scores(&self, x: &[f64]) -> Vec<f64> {
        let mut f = self.init.clone();
        for round in &self.rounds {
            for (fk, tree) in f.iter_mut().zip(round) {
                if let Some(t) = tree {
                    *fk += self.learning_rate * t.leaf_value(x)[0];
                }
            }
        }
        f
    }

    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.raw_scores(x), &self.present)
    }
}

fn softmax(f: &[f64], present: &[bool]) -> Vec<f64> {
    let max = f
        .iter()
        .zip(present)
        .filter(|(_, &p)| p)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = f
        .iter()
        .zip(present)
        .map(|(v, &p)| if p { (v - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn mean_nll(probs: &[Vec<f64>], y: &[usize]) -> f64 {
    probs
        .iter()
        .zip(y)
        .map(|(p, &l)| -p[l].max(1e-300).ln())
        .sum::<f64>()
        / y.len() as f64
}

pub(crate) fn fit_boost(x: &[Vec<f64>], y: &[usize], k: usize, p: BoostParams) -> BoostModel {
    let n = y.len();
    let presorted = Presorted::new(x);
    let mut counts = vec![0usize; k];
    for &l in y {
        counts[l] += 1;
    }
    let present: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
    let init: Vec<f64> = counts
        .iter()
        .map(|&c| if c > 0 { (c as f64 / n as f64).ln() } else { 0.0 })
        .collect();

    let mut scores: Vec<Vec<f64>> = vec![init.clone(); n];
    let mut probs: Vec<Vec<f64>> = scores.iter().map(|f| softmax(f, &present)).collect();
    let mut train_loss = vec![mean_nll(&probs, y)];
    let mut rounds = Vec::with_capacity(p.n_rounds);
    let ones = vec![1.0; n];
    let criterion = Newton { lambda: p.l2 };
    let grow_params = GrowParams {
        max_depth: p.max_depth,
        min_leaf: p.min_leaf,
        features_per_split: usize::MAX,
    };

    for _ in 0..p.n_rounds {
        let trees: Vec<Option<Tree>> = (0..k)
            .into_par_iter()
            .map(|c| {
                if !present[c] {
                    return None;
                }
                let mut stats = Vec::with_capacity(2 * n);
                for (pi, &l) in probs.iter().zip(y) {
                    let target = if l == c { 1.0 } else { 0.0 };
                    stats.push(pi[c] - target);
                    stats.push((pi[c] * (1.0 - pi[c])).max(MIN_HESSIAN));
                }
                // no feature sampling, so the generator is never consulted
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                Some(grow(x, &stats, &ones, &presorted, &criterion, grow_params, &mut rng))
            })
            .collect();

        scores.par_iter_mut().zip(x.par_iter()).for_each(|(f, row)| {
            for (fk, tree) in f.iter_mut().zip(&trees) {
                if let Some(t) = tree {
                    *fk += p.learning_rate * t.leaf_value(row)[0];
                }
            }
        });
        probs = scores.iter().map(|f| softmax(f, &present)).collect();
        train_loss.push(mean_nll(&probs, y));
        rounds.push(trees);
    }

    BoostModel {
        learning_rate: p.learning_rate,
        present,
        init,
        rounds,
        train_loss,
    }
}
