//! Sampled Shapley values for any multi-output model.
//!
//! Each Monte-Carlo draw picks a background row `z` and a feature
//! permutation, then walks from `z` to `x` one feature at a time in
//! permutation order, crediting each step's change in the model output to the
//! feature that changed.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{cmp_f64, Matrix};
use crate::seed;

pub const DEFAULT_BACKGROUND: usize = 256;
pub const DEFAULT_N_MC: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyAttribution {
    /// `phi[category][feature]`
    pub phi: Vec<Vec<f64>>,
    /// Mean model output over the whole background set.
    pub baseline: Vec<f64>,
    pub prediction: Vec<f64>,
    /// Standard error of `sum(phi)` per category.
    pub standard_error: Vec<f64>,
    pub n_mc: usize,
    pub seed: u64,
}

impl ShapleyAttribution {
    /// `sum(phi) - (prediction - baseline)` per category.
    pub fn local_accuracy_gap(&self) -> Vec<f64> {
        self.phi
            .iter()
            .zip(&self.prediction)
            .zip(&self.baseline)
            .map(|((phi, p), b)| phi.iter().sum::<f64>() - (p - b))
            .collect()
    }
}

/// A model plus the background set used to impute absent features.
pub struct ShapleyExplainer<'a, F> {
    model: F,
    background: &'a Matrix,
    baseline: Vec<f64>,
    n_outputs: usize,
}

impl<'a, F: Fn(&[f64]) -> Vec<f64>> ShapleyExplainer<'a, F> {
    pub fn new(model: F, background: &'a Matrix) -> Result<Self> {
        if background.rows() == 0 {
            return Err(Error::Empty("Shapley background"));
        }
        let first = model(background.row(0));
        let mut baseline = vec![0.0; first.len()];
        for row in background.iter_rows() {
            baseline.iter_mut().zip(model(row)).for_each(|(b, v)| *b += v);
        }
        let n = background.rows() as f64;
        baseline.iter_mut().for_each(|b| *b /= n);
        Ok(Self {
            n_outputs: first.len(),
            model,
            background,
            baseline,
        })
    }

    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }

    pub fn explain(&self, x: &[f64], n_mc: usize, seed: u64) -> Result<ShapleyAttribution> {
        let d = self.background.cols();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: x.len(),
            });
        }
        if n_mc == 0 {
            return Err(Error::invalid("n_mc must be positive"));
        }
        let k = self.n_outputs;
        let mut rng = seed::rng(seed);
        let prediction = (self.model)(x);
        let mut phi = vec![vec![0.0; d]; k];
        let mut totals: Vec<Vec<f64>> = vec![Vec::with_capacity(n_mc); k];
        let mut order: Vec<usize> = (0..d).collect();
        let mut cur = vec![0.0; d];
        for _ in 0..n_mc {
            let z = self.background.row(rng.gen_range(0..self.background.rows()));
            order.shuffle(&mut rng);
            cur.copy_from_slice(z);
            let start = (self.model)(&cur);
            let mut prev = start.clone();
            for &j in &order {
                if cur[j] == x[j] {
                    continue;
                }
                cur[j] = x[j];
                let now = (self.model)(&cur);
                for c in 0..k {
                    phi[c][j] += now[c] - prev[c];
                }
                prev = now;
            }
            for c in 0..k {
                totals[c].push(prev[c] - start[c]);
            }
        }
        let m = n_mc as f64;
        phi.iter_mut().flatten().for_each(|v| *v /= m);
        let standard_error = totals
            .iter()
            .map(|t| {
                if n_mc < 2 {
                    return 0.0;
                }
                let mean = t.iter().sum::<f64>() / m;
                let var = t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
                libm::sqrt(var / m)
            })
            .collect();
        Ok(ShapleyAttribution {
            phi,
            baseline: self.baseline.clone(),
            prediction,
            standard_error,
            n_mc,
            seed,
        })
    }
}

/// Mean |phi| per category and overall (the mean across categories).
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionSummary {
    pub categories: Vec<String>,
    pub features: Vec<String>,
    /// `per_category[category][feature]`
    pub per_category: Vec<Vec<f64>>,
    pub overall: Vec<f64>,
}

impl AttributionSummary {
    fn rank(values: &[f64]) -> Vec<(usize, f64)> {
        let mut r: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
        r.sort_by(|a, b| cmp_f64(b.1, a.1).then(a.0.cmp(&b.0)));
        r
    }

    /// Features by descending mean |phi| for one category (ties: lower index).
    pub fn ranking(&self, category: usize) -> Vec<(usize, f64)> {
        Self::rank(&self.per_category[category])
    }

    pub fn overall_ranking(&self) -> Vec<(usize, f64)> {
        Self::rank(&self.overall)
    }
}

pub fn summarize_attributions(attributions: &[ShapleyAttribution], categories: &[String], features: &[String]) -> Result<AttributionSummary> {
    if attributions.is_empty() {
        return Err(Error::Empty("no attributions to summarise"));
    }
    let (k, d) = (categories.len(), features.len());
    for a in attributions {
        if a.phi.len() != k || a.phi.iter().any(|p| p.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: k * d,
                actual: a.phi.iter().map(Vec::len).sum(),
            });
        }
    }
    let n = attributions.len() as f64;
    let mut per_category = vec![vec![0.0; d]; k];
    for a in attributions {
        for c in 0..k {
            for j in 0..d {
                per_category[c][j] += libm::fabs(a.phi[c][j]);
            }
        }
    }
    per_category.iter_mut().flatten().for_each(|v| *v /= n);
    let overall = (0..d)
        .map(|j| per_category.iter().map(|p| p[j]).sum::<f64>() / k as f64)
        .collect();
    Ok(AttributionSummary {
        categories: categories.to_vec(),
        features: features.to_vec(),
        per_category,
        overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn background() -> Matrix {
        Matrix::from_rows(&[[0.0, 0.0, 5.0], [1.0, 0.0, -5.0], [0.0, 1.0, 2.0], [1.0, 1.0, 0.0]]).unwrap()
    }

    #[test]
    fn null_feature_gets_exactly_zero() {
        let bg = background();
        let e = ShapleyExplainer::new(|x: &[f64]| vec![x[0] + 2.0 * x[1]], &bg).unwrap();
        let a = e.explain(&[1.0, 1.0, 9.0], 50, 3).unwrap();
        assert_eq!(a.phi[0][2], 0.0);
    }

    #[test]
    fn single_feature_takes_everything() {
        let bg = background();
        let stump = |x: &[f64]| vec![if x[0] <= 0.5 { 0.2 } else { 0.9 }];
        let e = ShapleyExplainer::new(stump, &bg).unwrap();
        let a = e.explain(&[1.0, 0.0, 0.0], 400, 1).unwrap();
        assert_eq!(a.phi[0][1], 0.0);
        assert_eq!(a.phi[0][2], 0.0);
        assert!((a.phi[0][0] - (a.prediction[0] - a.baseline[0])).abs() < 4.0 * a.standard_error[0] + 1e-12);
    }

    #[test]
    fn additive_model_is_exact_per_draw() {
        let bg = background();
        let e = ShapleyExplainer::new(|x: &[f64]| vec![x[0] - x[1], 3.0 * x[2]], &bg).unwrap();
        let a = e.explain(&[2.0, -1.0, 1.0], 64, 9).unwrap();
        for gap in a.local_accuracy_gap() {
            assert!(gap.abs() <= 3.0 * a.standard_error[0].max(a.standard_error[1]) + 1e-9);
        }
    }

    #[test]
    fn summary_ranks_and_ties() {
        let a = ShapleyAttribution {
            phi: vec![vec![0.1, -0.5, 0.1], vec![0.0, 0.0, 0.3]],
            baseline: vec![0.0; 2],
            prediction: vec![0.0; 2],
            standard_error: vec![0.0; 2],
            n_mc: 1,
            seed: 0,
        };
        let cats = super::super::names(&["p", "q"]);
        let feats = super::super::names(&["a", "b", "c"]);
        let s = summarize_attributions(&[a.clone(), a], &cats, &feats).unwrap();
        assert_eq!(s.ranking(0)[0].0, 1);
        assert_eq!(s.ranking(0)[1].0, 0);
        assert_eq!(s.ranking(1)[0].0, 2);
        assert_eq!(s.overall_ranking()[0], (1, 0.25));
    }
}
