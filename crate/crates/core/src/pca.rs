//! Principal component analysis and feature reconstruction error.

use alloc::vec;
use alloc::vec::Vec;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::math::{dot, symmetric_eigen, Matrix};

/// Relative eigenvalue floor below which a component counts as missing.
const RANK_TOLERANCE: f64 = 1e-12;
const MAGIC: &[u8; 4] = b"CPCA";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `n_components x dim`, orthonormal rows (zero rows when rank-deficient).
    components: Matrix,
    explained_variance: Vec<f64>,
    total_variance: f64,
    rank_deficient: bool,
}

struct Spectrum {
    mean: Vec<f64>,
    values: Vec<f64>,
    vectors: Matrix,
}

fn spectrum(data: &Matrix) -> Result<Spectrum> {
    let (n, d) = (data.rows(), data.cols());
    if n < 2 {
        return Err(Error::Empty("PCA needs at least two samples"));
    }
    let mean = data.column_means();
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in data.iter_rows() {
        for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let cov_row = cov.row_mut(i);
            for j in i..d {
                cov_row[j] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    let (mut values, vectors) = symmetric_eigen(&cov)?;
    for v in values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(Spectrum {
        mean,
        values,
        vectors,
    })
}

impl PcaModel {
    /// Fits the top `n_components` principal axes of `data` (rows are samples).
    ///
    /// Each component's largest-magnitude entry is made positive. Components
    /// whose variance vanishes are zero-padded and flagged via
    /// [`PcaModel::rank_deficient`].
    pub fn fit(data: &Matrix, n_components: usize) -> Result<Self> {
        if n_components == 0 || n_components > data.cols() {
            return Err(Error::invalid(alloc::format!(
                "n_components {n_components} must be in 1..={}",
                data.cols()
            )));
        }
        if data.rows() < n_components {
            return Err(Error::invalid(alloc::format!(
                "{} samples cannot support {n_components} components",
                data.rows()
            )));
        }
        let s = spectrum(data)?;
        Ok(Self::from_spectrum(s, n_components))
    }

    /// Fits the smallest number of components whose explained variance reaches
    /// `fraction` of the total, capped at `max_components`.
    pub fn fit_variance(data: &Matrix, fraction: f64, max_components: usize) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::invalid("variance fraction must be in (0, 1]"));
        }
        let s = spectrum(data)?;
        let total: f64 = s.values.iter().sum();
        let cap = max_components.min(data.cols()).min(data.rows()).max(1);
        let mut acc = 0.0;
        let mut k = cap;
        for (i, v) in s.values.iter().enumerate().take(cap) {
            acc += v;
            if total <= 0.0 || acc >= fraction * total {
                k = i + 1;
                break;
            }
        }
        Ok(Self::from_spectrum(s, k))
    }

    fn from_spectrum(s: Spectrum, k: usize) -> Self {
        let d = s.mean.len();
        let total_variance: f64 = s.values.iter().sum();
        let top = s.values.first().copied().unwrap_or(0.0);
        let mut components = Matrix::zeros(k, d);
        let mut rank_deficient = false;
        for c in 0..k {
            if s.values[c] <= top * RANK_TOLERANCE || top <= 0.0 {
                rank_deficient = true;
                continue;
            }
            let v = s.vectors.row(c);
            let mut pivot = 0;
            for (i, x) in v.iter().enumerate() {
                if libm::fabs(*x) > libm::fabs(v[pivot]) {
                    pivot = i;
                }
            }
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            for (dst, x) in components.row_mut(c).iter_mut().zip(v) {
                *dst = sign * x;
            }
        }
        Self {
            mean: s.mean,
            components,
            explained_variance: s.values[..k].to_vec(),
            total_variance,
            rank_deficient,
        }
    }

    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &Matrix {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance <= 0.0 {
            return 1.0;
        }
        self.explained_variance.iter().sum::<f64>() / self.total_variance
    }

    /// True when fewer than `n_components` directions carry variance.
    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        self.components
            .iter_rows()
            .map(|c| dot(c, &centered))
            .collect()
    }

    /// Maps PCA coordinates back to feature space (pseudo-inverse).
    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter_rows().zip(z) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += w * v;
            }
        }
        out
    }

    /// `|| x - reconstruct(transform(x)) ||_2`
    pub fn reconstruction_error(&self, x: &[f64]) -> f64 {
        let r = self.reconstruct(&self.transform(x));
        libm::sqrt(x.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    /// Rebuilds a model from stored parts.
    pub fn from_parts(mean: Vec<f64>, components: Matrix, explained_variance: Vec<f64>, total_variance: f64) -> Result<Self> {
        if components.cols() != mean.len() || explained_variance.len() != components.rows() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                actual: components.cols(),
            });
        }
        let rank_deficient = components
            .iter_rows()
            .any(|r| r.iter().all(|&v| v == 0.0));
        Ok(Self {
            mean,
            components,
            explained_variance,
            total_variance,
            rank_deficient,
        })
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.u64(self.dim() as u64);
        w.u64(self.n_components() as u64);
        w.u8(u8::from(self.rank_deficient));
        w.f64(self.total_variance);
        w.f64s(&self.mean);
        w.f64s(&self.explained_variance);
        w.f64s(self.components.as_slice());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, MAGIC, VERSION, "PCA model")?;
        let dim = r.usize()?;
        let k = r.usize()?;
        let rank_deficient = r.u8()? != 0;
        let total_variance = r.f64()?;
        let mean = r.f64s(dim)?;
        let explained_variance = r.f64s(k)?;
        let components = Matrix::from_vec(k, dim, r.f64s(k.saturating_mul(dim))?)?;
        r.finish()?;
        Ok(Self {
            mean,
            components,
            explained_variance,
            total_variance,
            rank_deficient,
        })
    }
}

/// Feature reconstruction error under `pca`.
pub fn fre(pca: &PcaModel, feature: &[f64]) -> f64 {
    pca.reconstruction_error(feature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = crate::seed::rng(seed);
        let mut data = Vec::new();
        for _ in 0..n * d {
            data.push(rng.gen_range(-1.0..1.0));
        }
        Matrix::from_vec(n, d, data).unwrap()
    }

    #[test]
    fn axis_aligned_component_is_positive() {
        let rows: Vec<[f64; 3]> = [-2.0, -1.0, 1.0, 2.0].iter().map(|&x| [x, 0.0, 0.0]).collect();
        let pca = PcaModel::fit(&Matrix::from_rows(&rows).unwrap(), 1).unwrap();
        let c = pca.components().row(0);
        assert!((c[0] - 1.0).abs() < 1e-12 && c[1].abs() < 1e-12 && c[2].abs() < 1e-12);
    }

    #[test]
    fn full_rank_round_trip() {
        let data = random_data(40, 5, 3);
        let pca = PcaModel::fit(&data, 5).unwrap();
        for r in data.iter_rows() {
            let back = pca.reconstruct(&pca.transform(r));
            for (a, b) in r.iter().zip(&back) {
                assert!((a - b).abs() < 1e-10);
            }
            assert!(pca.reconstruction_error(r) < 1e-6);
        }
    }

    #[test]
    fn rows_are_orthonormal() {
        let pca = PcaModel::fit(&random_data(60, 8, 9), 4).unwrap();
        let c = pca.components();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot(c.row(i), c.row(j)) - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn orthogonal_residual_is_measured() {
        let rows: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        let data = Matrix::from_rows(&rows).unwrap();
        let pca = PcaModel::fit(&data, 1).unwrap();
        let mean = pca.mean().to_vec();
        // in-span point
        let inside = [mean[0] + 1.0, mean[1] + 2.0, mean[2]];
        assert!(fre(&pca, &inside) < 1e-7);
        let outside = [mean[0], mean[1], mean[2] + 3.0];
        assert!((fre(&pca, &outside) - 3.0).abs() < 1e-9);
        let mixed = [mean[0] + 2.0, mean[1] + 4.0, mean[2] - 0.5];
        assert!((fre(&pca, &mixed) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn bytes_round_trip() {
        let rows: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, i as f64, 0.0]).collect();
        for pca in [
            PcaModel::fit(&random_data(30, 6, 1), 4).unwrap(),
            PcaModel::fit(&Matrix::from_rows(&rows).unwrap(), 2).unwrap(),
        ] {
            let bytes = pca.to_bytes();
            assert_eq!(PcaModel::from_bytes(&bytes).unwrap(), pca);
            assert!(PcaModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        }
    }

    #[test]
    fn rank_deficiency_is_flagged() {
        let rows: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, i as f64, 0.0]).collect();
        let pca = PcaModel::fit(&Matrix::from_rows(&rows).unwrap(), 2).unwrap();
        assert!(pca.rank_deficient());
        assert!(pca.components().row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn variance_rule_picks_smallest_rank() {
        let mut rng = crate::seed::rng(1);
        let rows: Vec<[f64; 3]> = (0..200)
            .map(|_| {
                [
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-0.1..0.1),
                ]
            })
            .collect();
        let data = Matrix::from_rows(&rows).unwrap();
        let pca = PcaModel::fit_variance(&data, 0.95, 256).unwrap();
        assert_eq!(pca.n_components(), 1);
        let pca = PcaModel::fit_variance(&data, 0.999, 256).unwrap();
        assert_eq!(pca.n_components(), 2);
        assert_eq!(PcaModel::fit_variance(&data, 1.0, 2).unwrap().n_components(), 2);
    }

    #[test]
    fn argument_errors() {
        let data = random_data(3, 4, 1);
        assert!(PcaModel::fit(&data, 5).is_err());
        assert!(PcaModel::fit(&data, 4).is_err());
        assert!(PcaModel::fit(&data, 0).is_err());
    }
}
