//! Axis-aligned binary trees grown on presorted feature columns.
//!
//! The same builder grows CART classification trees (Gini impurity) and the
//! second-order regression trees used by gradient boosting; a [`Criterion`]
//! supplies the per-sample sufficient statistics, the node score and the
//! leaf value.
//!
//! Candidate splits are evaluated feature by feature in ascending index
//! order and, within a feature, in ascending threshold order; a candidate
//! replaces the incumbent only on strictly larger gain, so ties resolve to
//! the lowest feature index and then the lowest threshold.

use rand::Rng;
use serde::{Deserialize, Serialize};

const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        /// `x[feature] <= threshold` goes left.
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { value } => return value,
            }
        }
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

pub(crate) trait Criterion: Sync {
    fn dim(&self) -> usize;
    /// Node score; a split's gain is `score(left) + score(right) - score(parent)`.
    fn score(&self, stats: &[f64]) -> f64;
    fn leaf(&self, stats: &[f64]) -> Vec<f64>;
    fn is_pure(&self, stats: &[f64]) -> bool;
}

/// Gini impurity over class counts. `score = Σ c² / W`, so the gain equals
/// the weighted impurity decrease.
pub(crate) struct Gini {
    pub classes: usize,
}

impl Criterion for Gini {
    fn dim(&self) -> usize {
        self.classes
    }

    fn score(&self, stats: &[f64]) -> f64 {
        let w: f64 = stats.iter().sum();
        if w <= 0.0 {
            return 0.0;
        }
        stats.iter().map(|c| c * c).sum::<f64>() / w
    }

    fn leaf(&self, stats: &[f64]) -> Vec<f64> {
        let w: f64 = stats.iter().sum();
        stats.iter().map(|c| c / w).collect()
    }

    fn is_pure(&self, stats: &[f64]) -> bool {
        stats.iter().filter(|&&c| c > 0.0).count() <= 1
    }
}

/// Newton step on `(gradient, hessian)` sums with L2 penalty `lambda`.
pub(crate) struct Newton {
    pub lambda: f64,
}

impl Criterion for Newton {
    fn dim(&self) -> usize {
        2
    }

    fn score(&self, stats: &[f64]) -> f64 {
        stats[0] * stats[0] / (stats[1] + self.lambda)
    }

    fn leaf(&self, stats: &[f64]) -> Vec<f64> {
        vec![-stats[0] / (stats[1] + self.lambda)]
    }

    fn is_pure(&self, _stats: &[f64]) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per node; `>= d` means all, in which case no
    /// random numbers are drawn.
    pub features_per_split: usize,
}

/// Per-feature row orderings, computed once per training matrix.
pub(crate) struct Presorted {
    pub columns: Vec<Vec<usize>>,
}

impl Presorted {
    pub fn new(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let columns = (0..d)
            .map(|f| {
                let mut idx: Vec<usize> = (0..x.len()).collect();
                idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Presorted { columns }
    }
}

struct Grower<'a, C: Criterion, R: Rng> {
    x: &'a [Vec<f64>],
    /// Row-major `n × criterion.dim()` statistics, already weighted.
    stats: &'a [f64],
    weights: &'a [f64],
    criterion: &'a C,
    params: GrowParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
    /// Scratch routing flags, valid only for the rows of the node being split.
    go_left: Vec<bool>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows one tree. Rows with zero weight are ignored.
pub(crate) fn grow<C: Criterion, R: Rng>(
    x: &[Vec<f64>],
    stats: &[f64],
    weights: &[f64],
    presorted: &Presorted,
    criterion: &C,
    params: GrowParams,
    rng: &mut R,
) -> Tree {
    let columns: Vec<Vec<usize>> = presorted
        .columns
        .iter()
        .map(|col| col.iter().copied().filter(|&i| weights[i] > 0.0).collect())
        .collect();
    let mut g = Grower {
        x,
        stats,
        weights,
        criterion,
        params,
        rng,
        nodes: Vec::new(),
        go_left: vec![false; x.len()],
    };
    g.build(columns, 0);
    Tree { nodes: g.nodes }
}

impl<C: Criterion, R: Rng> Grower<'_, C, R> {
    fn node_stats(&self, rows: &[usize]) -> (Vec<f64>, f64) {
        let m = self.criterion.dim();
        let mut acc = vec![0.0; m];
        let mut w = 0.0;
        for &i in rows {
            for (a, s) in acc.iter_mut().zip(&self.stats[i * m..(i + 1) * m]) {
                *a += s;
            }
            w += self.weights[i];
        }
        (acc, w)
    }

    fn build(&mut self, columns: Vec<Vec<usize>>, depth: usize) -> usize {
        let id = self.nodes.len();
        // any column lists the node's rows
        let (parent, weight) = self.node_stats(columns.first().map_or(&[][..], Vec::as_slice));
        self.nodes.push(Node::Leaf {
            value: self.criterion.leaf(&parent),
        });

        let min_leaf = self.params.min_leaf.max(1) as f64;
        if depth >= self.params.max_depth
            || weight < 2.0 * min_leaf
            || self.criterion.is_pure(&parent)
            || columns.is_empty()
        {
            return id;
        }

        let Some(best) = self.find_split(&columns, &parent, min_leaf) else {
            return id;
        };

        for &i in &columns[best.feature] {
            self.go_left[i] = self.x[i][best.feature] <= best.threshold;
        }
        let go_left = &self.go_left;
        let (left_cols, right_cols): (Vec<_>, Vec<_>) = columns
            .into_iter()
            .map(|col| col.into_iter().partition::<Vec<usize>, _>(|&i| go_left[i]))
            .unzip();

        let left = self.build(left_cols, depth + 1);
        let right = self.build(right_cols, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn candidate_features(&mut self, d: usize) -> Vec<usize> {
        let k = self.params.features_per_split;
        if k >= d {
            return (0..d).collect();
        }
        let mut all: Vec<usize> = (0..d).collect();
        for i in 0..k {
            let j = self.rng.random_range(i..d);
            all.swap(i, j);
        }
        let mut chosen = all[..k].to_vec();
        chosen.sort_unstable();
        chosen
    }

    fn find_split(&mut self, columns: &[Vec<usize>], parent: &[f64], min_leaf: f64) -> Option<BestSplit> {
        let m = self.criterion.dim();
        let parent_score = self.criterion.score(parent);
        let total_w: f64 = columns[0].iter().map(|&i| self.weights[i]).sum();
        let mut best: Option<BestSplit> = None;
        let mut left = vec![0.0; m];
        let mut right = vec![0.0; m];

        for f in self.candidate_features(columns.len()) {
            let col = &columns[f];
            left.iter_mut().for_each(|v| *v = 0.0);
            let mut left_w = 0.0;
            for pos in 0..col.len().saturating_sub(1) {
                let i = col[pos];
                for (a, s) in left.iter_mut().zip(&self.stats[i * m..(i + 1) * m]) {
                    *a += s;
                }
                left_w += self.weights[i];

                let here = self.x[i][f];
                let next = self.x[col[pos + 1]][f];
                if next <= here {
                    continue;
                }
                if left_w < min_leaf || total_w - left_w < min_leaf {
                    continue;
                }
                for ((r, p), l) in right.iter_mut().zip(parent).zip(&left) {
                    *r = p - l;
                }
                let gain = self.criterion.score(&left) + self.criterion.score(&right) - parent_score;
                if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = here + (next - here) / 2.0;
                    let threshold = if mid < next { mid } else { here };
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        best
    }
}
