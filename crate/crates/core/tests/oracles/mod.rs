//! Independent reference implementations used as test oracles. They favour
//! the plainest correct algorithm over speed.

#![allow(dead_code)]

use std::collections::BinaryHeap;

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns values in
/// descending order and the matching unit eigenvectors as rows.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap());
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

/// Sample mean and unbiased covariance.
pub fn covariance(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            cov[i][j] = rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1.0);
        }
    }
    (mean, cov)
}

/// Residual norm of `x` after projection onto the top `k` principal axes.
pub fn fre(rows: &[Vec<f64>], k: usize, x: &[f64]) -> f64 {
    let (mean, cov) = covariance(rows);
    let (_, vectors) = jacobi_eigen(&cov);
    let c: Vec<f64> = x.iter().zip(&mean).map(|(a, m)| a - m).collect();
    let mut r = c.clone();
    for v in vectors.iter().take(k) {
        let w: f64 = v.iter().zip(&c).map(|(a, b)| a * b).sum();
        r.iter_mut().zip(v).for_each(|(ri, vi)| *ri -= w * vi);
    }
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Smallest component count reaching `fraction` of the variance, capped.
pub fn components_for_variance(rows: &[Vec<f64>], fraction: f64, cap: usize) -> usize {
    let (_, cov) = covariance(rows);
    let (values, _) = jacobi_eigen(&cov);
    let values: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let cap = cap.min(rows[0].len()).min(rows.len()).max(1);
    let mut acc = 0.0;
    for (i, v) in values.iter().take(cap).enumerate() {
        acc += v;
        if acc >= fraction * total {
            return i + 1;
        }
    }
    cap
}

/// Single-source shortest paths over an undirected weighted graph.
pub fn dijkstra(n: usize, edges: &[(usize, usize, f64)], source: usize) -> Vec<f64> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b, w) in edges {
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    let mut dist = vec![f64::INFINITY; n];
    dist[source] = 0.0;
    // min-heap via reversed ordering on bit patterns of non-negative floats
    let mut heap = BinaryHeap::new();
    heap.push(std::cmp::Reverse((0u64, source)));
    while let Some(std::cmp::Reverse((bits, u))) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(std::cmp::Reverse((nd.to_bits(), v)));
            }
        }
    }
    dist
}

/// Exact inner-product kNN by full sort: `(row, -<q, v>)`, ties by row.
pub fn brute_knn(vectors: &[Vec<f64>], q: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = vectors
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, v)| (i, -v.iter().zip(q).map(|(a, b)| a * b).sum::<f64>()))
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// AUROC as the Mann-Whitney statistic over all positive/negative pairs,
/// ties counting one half.
pub fn mann_whitney(scores: &[f64], truth: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !truth[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if truth[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Best Gini split found by trying every feature and every threshold between
/// adjacent distinct values, recounting both sides from scratch. Returns
/// `(feature, threshold, score)` where the score `sum_L/n_L + sum_R/n_R` of
/// squared class counts is kept as an exact fraction; ties go to the lower
/// `(feature, threshold)`.
pub fn exhaustive_gini_split(x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Option<(usize, f64, (u128, u128))> {
    let mut best: Option<(usize, f64, (u128, u128))> = None;
    for f in 0..x[0].len() {
        let mut values: Vec<f64> = x.iter().map(|r| r[f]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let t = if t >= w[1] || t < w[0] { w[0] } else { t };
            let mut left = vec![0u128; n_classes];
            let mut right = vec![0u128; n_classes];
            for (r, &c) in x.iter().zip(y) {
                if r[f] <= t {
                    left[c] += 1;
                } else {
                    right[c] += 1;
                }
            }
            let (nl, nr): (u128, u128) = (left.iter().sum(), right.iter().sum());
            let sl: u128 = left.iter().map(|c| c * c).sum();
            let sr: u128 = right.iter().map(|c| c * c).sum();
            let score = (sl * nr + sr * nl, nl * nr);
            let better = match &best {
                None => true,
                Some((_, _, (bn, bd))) => score.0 * bd > bn * score.1,
            };
            if better {
                best = Some((f, t, score));
            }
        }
    }
    best
}

/// Weighted Gini impurity of a split, for reporting.
pub fn weighted_gini(left: &[usize], right: &[usize]) -> f64 {
    let g = |c: &[usize]| {
        let n: usize = c.iter().sum();
        if n == 0 {
            return 0.0;
        }
        1.0 - c.iter().map(|&v| (v as f64 / n as f64).powi(2)).sum::<f64>()
    };
    let (nl, nr) = (left.iter().sum::<usize>() as f64, right.iter().sum::<usize>() as f64);
    (nl * g(left) + nr * g(right)) / (nl + nr)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Exact background-averaged Shapley values by enumerating every permutation
/// for every background row: `phi[output][feature]`.
pub fn exact_shapley<F: Fn(&[f64]) -> Vec<f64>>(model: F, x: &[f64], background: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = x.len();
    let k = model(x).len();
    let perms = permutations(d);
    let mut phi = vec![vec![0.0; d]; k];
    for z in background {
        for p in &perms {
            let mut cur = z.clone();
            let mut prev = model(&cur);
            for &j in p {
                cur[j] = x[j];
                let now = model(&cur);
                for c in 0..k {
                    phi[c][j] += now[c] - prev[c];
                }
                prev = now;
            }
        }
    }
    let m = (background.len() * perms.len()) as f64;
    phi.iter_mut().flatten().for_each(|v| *v /= m);
    phi
}

/// Shannon entropy in bits through natural logarithms.
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>() / std::f64::consts::LN_2
}

/// Plain softmax without max-subtraction (inputs are kept small).
pub fn softmax(logits: &[f64], t: f64) -> Vec<f64> {
    let e: Vec<f64> = logits.iter().map(|g| (g / t).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Registers plain check functions as tests, so the same functions can be
/// called from the acceptance run.
macro_rules! checks {
    ($($f:ident),* $(,)?) => {
        mod registered {
            $(#[test]
            fn $f() {
                super::$f()
            })*
        }
    };
}
