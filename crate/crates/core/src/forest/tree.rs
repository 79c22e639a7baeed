//! CART classification trees with Gini impurity.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// `x[feature] <= threshold` goes to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Weighted class counts of the training samples that reached the leaf.
    Leaf { counts: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
}

/// A split candidate scored by `S_L/n_L + S_R/n_R` (S = sum of squared class
/// counts), kept as the exact fraction `num / den`. Maximising it minimises
/// the weighted Gini impurity of the children.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    num: u128,
    den: u128,
    feature: usize,
    threshold: f64,
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        let a = self.num * other.den;
        let b = other.num * self.den;
        a > b
            || (a == b
                && (self.feature, self.threshold).partial_cmp(&(other.feature, other.threshold))
                    == Some(core::cmp::Ordering::Less))
    }
}

fn sum_sq(counts: &[u64]) -> u128 {
    counts.iter().map(|&c| u128::from(c) * u128::from(c)).sum()
}

/// Midpoint of two adjacent distinct values, kept inside `[a, b)`.
pub fn midpoint(a: f64, b: f64) -> f64 {
    let mut m = (a + b) / 2.0;
    if !m.is_finite() {
        m = a / 2.0 + b / 2.0;
    }
    if m >= b || m < a {
        m = a;
    }
    m
}

struct Builder<'a> {
    x: &'a Matrix,
    labels: &'a [usize],
    weights: &'a [u32],
    n_classes: usize,
    params: TreeParams,
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<u64> {
        let mut c = vec![0u64; self.n_classes];
        for &r in rows {
            c[self.labels[r]] += u64::from(self.weights[r]);
        }
        c
    }

    fn best_for_feature(&self, rows: &[usize], feature: usize, totals: &[u64], n: u64) -> Option<Candidate> {
        let mut sorted: Vec<(f64, usize)> = rows.iter().map(|&r| (self.x.get(r, feature), r)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let min_leaf = self.params.min_samples_leaf as u64;
        let mut left = vec![0u64; self.n_classes];
        let mut right = totals.to_vec();
        let mut n_left = 0u64;
        let mut best: Option<Candidate> = None;
        for i in 0..sorted.len() - 1 {
            let (v, r) = sorted[i];
            let w = u64::from(self.weights[r]);
            left[self.labels[r]] += w;
            right[self.labels[r]] -= w;
            n_left += w;
            let next = sorted[i + 1].0;
            if !(v < next) {
                continue;
            }
            let n_right = n - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let (nl, nr) = (u128::from(n_left), u128::from(n_right));
            let cand = Candidate {
                num: sum_sq(&left) * nr + sum_sq(&right) * nl,
                den: nl * nr,
                feature,
                threshold: midpoint(v, next),
            };
            if best.as_ref().map_or(true, |b| cand.beats(b)) {
                best = Some(cand);
            }
        }
        best
    }

    /// Draws features without replacement until `features_per_split`
    /// non-constant ones have been evaluated (constant ones do not count).
    fn best_split<R: Rng>(&self, rows: &[usize], totals: &[u64], n: u64, rng: &mut R) -> Option<(Candidate, Vec<usize>, Vec<usize>)> {
        let n_features = self.x.cols();
        let mut pool: Vec<usize> = (0..n_features).collect();
        let mut evaluated = 0;
        let mut best: Option<Candidate> = None;
        let mut drawn = 0;
        while drawn < n_features && evaluated < self.params.features_per_split {
            let j = rng.gen_range(drawn..n_features);
            pool.swap(drawn, j);
            let f = pool[drawn];
            drawn += 1;
            let first = self.x.get(rows[0], f);
            if rows.iter().all(|&r| self.x.get(r, f) == first) {
                continue;
            }
            evaluated += 1;
            if let Some(c) = self.best_for_feature(rows, f, totals, n) {
                if best.as_ref().map_or(true, |b| c.beats(b)) {
                    best = Some(c);
                }
            }
        }
        let best = best?;
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x.get(r, best.feature) <= best.threshold);
        debug_assert!(!left.is_empty() && !right.is_empty());
        Some((best, left, right))
    }
}

impl DecisionTree {
    /// Grows a tree on the rows with non-zero `weights` (bootstrap counts).
    pub fn grow<R: Rng>(x: &Matrix, labels: &[usize], n_classes: usize, weights: &[u32], params: TreeParams, rng: &mut R) -> Self {
        let b = Builder {
            x,
            labels,
            weights,
            n_classes,
            params,
        };
        let root_rows: Vec<usize> = (0..x.rows()).filter(|&r| weights[r] > 0).collect();
        let mut nodes = vec![Node::Leaf { counts: Vec::new() }];
        let mut stack = vec![(0usize, root_rows, 0usize)];
        while let Some((slot, rows, depth)) = stack.pop() {
            let totals = b.counts(&rows);
            let n: u64 = totals.iter().sum();
            let pure = totals.iter().filter(|&&c| c > 0).count() <= 1;
            let depth_done = params.max_depth.is_some_and(|d| depth >= d);
            let split = if pure || depth_done || n < params.min_samples_split as u64 {
                None
            } else {
                b.best_split(&rows, &totals, n, rng)
            };
            match split {
                None => {
                    nodes[slot] = Node::Leaf {
                        counts: totals.iter().map(|&c| c as u32).collect(),
                    };
                }
                Some((cand, left_rows, right_rows)) => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf { counts: Vec::new() });
                    let right = nodes.len();
                    nodes.push(Node::Leaf { counts: Vec::new() });
                    nodes[slot] = Node::Split {
                        feature: cand.feature,
                        threshold: cand.threshold,
                        left,
                        right,
                    };
                    stack.push((right, right_rows, depth + 1));
                    stack.push((left, left_rows, depth + 1));
                }
            }
        }
        Self { nodes }
    }

    pub fn from_nodes(nodes: Vec<Node>) -> Self {
        Self { nodes }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Class counts of the leaf `x` falls into.
    pub fn leaf(&self, x: &[f64]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Leaf class frequencies for `x`.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let counts = self.leaf(x);
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        counts.iter().map(|&c| f64::from(c) / total as f64).collect()
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, d)) = stack.pop() {
            best = best.max(d);
            if let Node::Split { left, right, .. } = self.nodes[i] {
                stack.push((left, d + 1));
                stack.push((right, d + 1));
            }
        }
        best
    }

    /// Features used by at least one split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}
