//! ROC curves, operating points and rejection tables.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::cmp_f64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are rejected (called positive) at this vertex.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// From `(0, 0)` at threshold `+inf` to `(1, 1)`.
    pub points: Vec<RocPoint>,
    pub auroc: f64,
    pub n_positive: usize,
    pub n_negative: usize,
}

/// Exact ROC from a descending sweep; tied scores form one vertex.
pub fn roc(scores: &[f64], truth: &[bool]) -> Result<RocCurve> {
    if scores.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: truth.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("ROC scores"));
    }
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| cmp_f64(scores[b], scores[a]));
    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push(RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    });
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auroc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // trapezoid in count units, normalised below
        auroc += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: s,
        });
    }
    Ok(RocCurve {
        points,
        auroc: auroc / (n_pos as f64 * n_neg as f64),
        n_positive: n_pos,
        n_negative: n_neg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// The vertex with the largest FPR not above `target` (highest TPR among
/// equal FPRs).
pub fn tpr_at_fpr(curve: &RocCurve, target: f64) -> OperatingPoint {
    let mut best = curve.points[0];
    for p in &curve.points {
        if p.fpr <= target && (p.fpr > best.fpr || (p.fpr == best.fpr && p.tpr > best.tpr)) {
            best = *p;
        }
    }
    OperatingPoint {
        threshold: best.threshold,
        fpr: best.fpr,
        tpr: best.tpr,
    }
}

/// Fraction of `scores` at or above `threshold`.
pub fn rejected_fraction<'a>(scores: impl IntoIterator<Item = &'a f64>, threshold: f64) -> Option<f64> {
    let (mut n, mut hit) = (0usize, 0usize);
    for &s in scores {
        n += 1;
        if s >= threshold {
            hit += 1;
        }
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionRow {
    pub category: String,
    pub count: usize,
    /// Percent in `[0, 100]`; `None` for an empty category, like the stats.
    pub pct_rejected: Option<f64>,
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub stdev: Option<f64>,
    pub median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionTable {
    pub threshold: f64,
    pub rows: Vec<RejectionRow>,
}

impl RejectionTable {
    pub fn row(&self, category: &str) -> Option<&RejectionRow> {
        self.rows.iter().find(|r| r.category == category)
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| cmp_f64(*a, *b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Per-category rejection statistics. `groups` lists the categories to report,
/// in order; `category_of[i]` indexes into it (`None` rows are skipped).
pub fn rejection_rows(scores: &[f64], category_of: &[Option<usize>], groups: &[String], threshold: f64) -> Vec<RejectionRow> {
    groups
        .iter()
        .enumerate()
        .map(|(g, name)| {
            let mut vals: Vec<f64> = scores
                .iter()
                .zip(category_of)
                .filter(|(_, c)| **c == Some(g))
                .map(|(s, _)| *s)
                .collect();
            let count = vals.len();
            let pct_rejected = rejected_fraction(&vals, threshold).map(|f| 100.0 * f);
            let mean = (count > 0).then(|| vals.iter().sum::<f64>() / count as f64);
            let stdev = mean.map(|m| libm::sqrt(vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / count as f64));
            RejectionRow {
                category: name.clone(),
                count,
                pct_rejected,
                mean,
                stdev,
                median: median(&mut vals),
            }
        })
        .collect()
}
