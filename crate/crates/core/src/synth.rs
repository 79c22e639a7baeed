//! Synthetic feature stores with a class hierarchy and near/mid/far novel
//! classes, for desk-scale experiments.
//!
//! Geometry: every taxonomy node below the root owns an orthonormal direction.
//! A class centroid is the sum of its ancestors' directions scaled by a
//! per-level offset, so siblings sit closer than cousins and all centroids
//! share one norm `R`. A novel class is placed on the same shell at
//! `R * normalize(anchor + displacement * u)`, where the anchor is the parent
//! centroid of a random ID class and `u` is a fresh direction; the larger the
//! displacement, the smaller its inner product with every ID centroid.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{split_dataset, DatasetManifest, FeatureStore, SampleRecord, SourceTag, Split, OOD_LABEL, STORE_VERSION};
use crate::error::{Error, Result};
use crate::math::{cholesky_solve, dot, norm2, Matrix};
use crate::seed;
use crate::taxonomy::{NodeSpec, TaxonTree};

#[derive(Debug, Clone, PartialEq)]
pub struct OodMode {
    /// Dataset name; samples get the source tag `OOD:<name>`.
    pub name: String,
    pub displacement: f64,
    pub n_classes: usize,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_id_classes: usize,
    /// One entry per class, or a single entry used for every class.
    pub samples_per_class: Vec<usize>,
    pub feature_dim: usize,
    /// Number of edges from a leaf to the root.
    pub hierarchy_depth: usize,
    pub branching: usize,
    /// Offset of a level-1 group; doubles per level further up.
    pub group_offset: f64,
    pub leaf_offset: f64,
    /// Modes in order of strictly increasing displacement.
    pub ood_modes: Vec<OodMode>,
    pub noise_sigma: f64,
    /// Share of each class sent to measure-train.
    pub measure_train_fraction: f64,
    /// ood-train share of the remaining samples.
    pub split_ratio: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let mode = |name: &str, displacement| OodMode {
            name: name.into(),
            displacement,
            n_classes: 3,
            n_samples: 500,
        };
        Self {
            n_id_classes: 10,
            samples_per_class: vec![450],
            feature_dim: 64,
            hierarchy_depth: 2,
            branching: 5,
            group_offset: 4.0,
            leaf_offset: 3.0,
            ood_modes: vec![mode("near", 3.0), mode("mid", 6.0), mode("far", 30.0)],
            noise_sigma: 0.7,
            measure_train_fraction: 0.3,
            split_ratio: 0.8,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn class_size(&self, class: usize) -> usize {
        if self.samples_per_class.len() == 1 {
            self.samples_per_class[0]
        } else {
            self.samples_per_class[class]
        }
    }

    /// Node count per internal level `1..depth` (root excluded).
    fn level_sizes(&self) -> Vec<usize> {
        (1..self.hierarchy_depth)
            .map(|l| self.n_id_classes.div_ceil(self.branching.pow(l as u32)))
            .collect()
    }

    fn directions_needed(&self) -> usize {
        self.level_sizes().iter().sum::<usize>()
            + self.n_id_classes
            + self.ood_modes.iter().map(|m| m.n_classes).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::DegenerateConfig(m));
        if self.n_id_classes < 2 {
            return bad("need at least two ID classes".into());
        }
        if self.samples_per_class.len() != 1 && self.samples_per_class.len() != self.n_id_classes {
            return bad("samples_per_class must have one entry or one per class".into());
        }
        if self.samples_per_class.iter().any(|&n| n < 2) {
            return bad("every class needs at least two samples".into());
        }
        if self.hierarchy_depth < 1 || self.branching < 2 {
            return bad("hierarchy needs depth >= 1 and branching >= 2".into());
        }
        if self.hierarchy_depth > 16 {
            return bad("hierarchy depth above 16".into());
        }
        for w in self.ood_modes.windows(2) {
            if !(w[0].displacement < w[1].displacement) {
                return bad(format!(
                    "OOD displacement must increase: {} ({}) vs {} ({})",
                    w[0].name, w[0].displacement, w[1].name, w[1].displacement
                ));
            }
        }
        for m in &self.ood_modes {
            if m.n_classes == 0 || m.n_samples == 0 || !(m.displacement > 0.0) || m.name.is_empty() {
                return bad(format!("OOD mode '{}' needs positive counts and displacement", m.name));
            }
        }
        let mut names: Vec<&str> = self.ood_modes.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.ood_modes.len() {
            return bad("duplicate OOD mode name".into());
        }
        if !(self.group_offset > 0.0 && self.leaf_offset > 0.0 && self.noise_sigma >= 0.0) {
            return bad("offsets must be positive and noise non-negative".into());
        }
        if !(self.measure_train_fraction > 0.0 && self.measure_train_fraction < 1.0) {
            return bad("measure_train_fraction outside (0, 1)".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split_ratio outside (0, 1)".into());
        }
        let need = self.directions_needed();
        if self.feature_dim < need {
            return bad(format!(
                "feature_dim {} below the {need} orthogonal directions the hierarchy needs",
                self.feature_dim
            ));
        }
        Ok(())
    }
}

/// A generated store together with its taxonomy.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub store: FeatureStore,
    pub taxonomy: TaxonTree,
    pub taxonomy_specs: Vec<NodeSpec>,
}

fn gaussian_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `count` orthonormal vectors in `dim` dimensions (Gram-Schmidt on Gaussian
/// draws, redrawn on the rare near-dependent vector).
fn orthonormal_directions<R: Rng>(rng: &mut R, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = gaussian_vec(rng, dim);
        for _ in 0..2 {
            for u in &out {
                let c = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
            }
        }
        let n = norm2(&v);
        if n > 1e-6 {
            v.iter_mut().for_each(|a| *a /= n);
            out.push(v);
        }
    }
    out
}

fn taxonomy_specs(config: &SyntheticConfig) -> Vec<NodeSpec> {
    let depth = config.hierarchy_depth;
    let sizes = config.level_sizes();
    let mut specs = vec![NodeSpec {
        id: 0,
        name: "root".into(),
        level: depth as u32,
        parent_id: None,
    }];
    // ids: root 0, then levels from the top down, then leaves.
    let mut first_id = vec![0u64; depth + 1];
    let mut next = 1u64;
    for level in (1..depth).rev() {
        first_id[level] = next;
        for i in 0..sizes[level - 1] {
            let parent_id = if level + 1 == depth {
                0
            } else {
                first_id[level + 1] + (i / config.branching) as u64
            };
            specs.push(NodeSpec {
                id: next,
                name: format!("g{level}_{i}"),
                level: level as u32,
                parent_id: Some(parent_id),
            });
            next += 1;
        }
    }
    for c in 0..config.n_id_classes {
        let parent_id = if depth == 1 {
            0
        } else {
            first_id[1] + (c / config.branching) as u64
        };
        specs.push(NodeSpec {
            id: next,
            name: class_name(c),
            level: 0,
            parent_id: Some(parent_id),
        });
        next += 1;
    }
    specs
}

pub fn class_name(class: usize) -> String {
    format!("class_{class}")
}

/// Ridge-fits a linear head on measure-train, then picks the logit scale that
/// minimises the mean negative log-likelihood there.
fn fit_head(features: &Matrix, labels: &[usize], n_classes: usize) -> Result<(Matrix, f64)> {
    const RIDGE: f64 = 1.0;
    let (n, d) = (features.rows(), features.cols());
    let a = d + 1;
    let mut gram = Matrix::zeros(a, a);
    let mut rhs = Matrix::zeros(a, n_classes);
    let mut row = vec![1.0; a];
    for (i, x) in features.iter_rows().enumerate() {
        row[..d].copy_from_slice(x);
        for p in 0..a {
            for q in p..a {
                gram.set(p, q, gram.get(p, q) + row[p] * row[q]);
            }
            rhs.set(p, labels[i], rhs.get(p, labels[i]) + row[p]);
        }
    }
    for p in 0..a {
        for q in 0..p {
            gram.set(p, q, gram.get(q, p));
        }
        gram.set(p, p, gram.get(p, p) + RIDGE);
    }
    let weights = cholesky_solve(&gram, &rhs)?;
    let raw = head_scores(&weights, features);

    let nll = |log_beta: f64| {
        let beta = libm::exp(log_beta);
        let mut total = 0.0;
        for (i, s) in raw.iter_rows().enumerate() {
            let top = s.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let z: f64 = s.iter().map(|&v| libm::exp(beta * (v - top))).sum();
            total += libm::log(z) - beta * (s[labels[i]] - top);
        }
        total / n as f64
    };
    // golden-section search over log(beta)
    let g = (libm::sqrt(5.0) - 1.0) / 2.0;
    let (mut lo, mut hi) = (libm::log(1e-2), libm::log(1e3));
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (nll(x1), nll(x2));
    for _ in 0..80 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = nll(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = nll(x2);
        }
    }
    Ok((weights, libm::exp((lo + hi) / 2.0)))
}

fn head_scores(weights: &Matrix, features: &Matrix) -> Matrix {
    let (d, c) = (features.cols(), weights.cols());
    let mut out = Matrix::zeros(features.rows(), c);
    for (i, x) in features.iter_rows().enumerate() {
        for k in 0..c {
            let mut s = weights.get(d, k);
            for j in 0..d {
                s += x[j] * weights.get(j, k);
            }
            out.set(i, k, s);
        }
    }
    out
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = seed::rng(seed::derive(config.seed, seed::SYNTH));
    let dim = config.feature_dim;
    let depth = config.hierarchy_depth;
    let sizes = config.level_sizes();
    let dirs = orthonormal_directions(&mut rng, config.directions_needed(), dim);

    // direction index of node i at internal level l, and of leaf c
    let mut level_base = vec![0usize; depth];
    let mut next = 0;
    for level in 1..depth {
        level_base[level] = next;
        next += sizes[level - 1];
    }
    let leaf_base = next;
    let novel_base = leaf_base + config.n_id_classes;

    let mut parents = Vec::with_capacity(config.n_id_classes);
    let mut centroids = Vec::with_capacity(config.n_id_classes);
    for c in 0..config.n_id_classes {
        let mut parent = vec![0.0; dim];
        for level in 1..depth {
            let node = c / config.branching.pow(level as u32);
            let scale = config.group_offset * libm::pow(2.0, (level - 1) as f64);
            let u = &dirs[level_base[level] + node];
            parent.iter_mut().zip(u).for_each(|(p, v)| *p += scale * v);
        }
        let mut centroid = parent.clone();
        let u = &dirs[leaf_base + c];
        centroid.iter_mut().zip(u).for_each(|(p, v)| *p += config.leaf_offset * v);
        parents.push(parent);
        centroids.push(centroid);
    }
    let radius = norm2(&centroids[0]);

    let mut novel: Vec<Vec<Vec<f64>>> = Vec::with_capacity(config.ood_modes.len());
    let mut novel_dir = novel_base;
    for mode in &config.ood_modes {
        let mut mode_centroids = Vec::with_capacity(mode.n_classes);
        for _ in 0..mode.n_classes {
            let host = rng.gen_range(0..config.n_id_classes);
            let anchor = if depth == 1 { &centroids[host] } else { &parents[host] };
            let mut c: Vec<f64> = anchor
                .iter()
                .zip(&dirs[novel_dir])
                .map(|(a, u)| a + mode.displacement * u)
                .collect();
            novel_dir += 1;
            let n = norm2(&c);
            c.iter_mut().for_each(|v| *v *= radius / n);
            mode_centroids.push(c);
        }
        novel.push(mode_centroids);
    }

    let draw = |centre: &[f64], rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f32> {
        centre
            .iter()
            .map(|&m| (m + config.noise_sigma * rng.sample::<f64, _>(StandardNormal)) as f32)
            .collect()
    };

    let mut records = Vec::new();
    for c in 0..config.n_id_classes {
        let n = config.class_size(c);
        let n_measure = (libm::round(config.measure_train_fraction * n as f64) as usize).clamp(1, n - 1);
        for i in 0..n {
            records.push(SampleRecord {
                sample_id: format!("id-{c}-{i}"),
                feature: draw(&centroids[c], &mut rng),
                logits: Vec::new(),
                true_class: c as u32,
                source: SourceTag::Id,
                split: if i < n_measure {
                    Split::MeasureTrain
                } else {
                    Split::OodTrain
                },
            });
        }
    }
    for (mode, mode_centroids) in config.ood_modes.iter().zip(&novel) {
        for i in 0..mode.n_samples {
            let class = rng.gen_range(0..mode_centroids.len());
            records.push(SampleRecord {
                sample_id: format!("ood-{}-{i}", mode.name),
                feature: draw(&mode_centroids[class], &mut rng),
                logits: Vec::new(),
                true_class: OOD_LABEL,
                source: SourceTag::Ood(mode.name.clone()),
                split: Split::OodTrain,
            });
        }
    }

    let train: Vec<&SampleRecord> = records.iter().filter(|r| r.split == Split::MeasureTrain).collect();
    let train_rows: Vec<Vec<f64>> = train.iter().map(|r| r.feature_f64()).collect();
    let train_labels: Vec<usize> = train.iter().map(|r| r.true_class as usize).collect();
    let (weights, beta) = fit_head(&Matrix::from_rows(&train_rows)?, &train_labels, config.n_id_classes)?;
    let all_rows: Vec<Vec<f64>> = records.iter().map(|r| r.feature_f64()).collect();
    let scores = head_scores(&weights, &Matrix::from_rows(&all_rows)?);
    for (r, s) in records.iter_mut().zip(scores.iter_rows()) {
        r.logits = s.iter().map(|&v| (beta * v) as f32).collect();
    }

    let manifest = DatasetManifest {
        version: STORE_VERSION,
        n_samples: records.len(),
        feature_dim: dim,
        n_classes: config.n_id_classes,
        class_names: (0..config.n_id_classes).map(class_name).collect(),
    };
    let store = FeatureStore::new(manifest, records)?;
    let assignment = split_dataset(&store, config.split_ratio, seed::derive(config.seed, seed::SPLIT))?;
    let store = store.with_splits(&assignment)?;
    let specs = taxonomy_specs(config);
    let taxonomy = TaxonTree::new(specs.clone(), &[])?;
    Ok(SyntheticDataset {
        store,
        taxonomy,
        taxonomy_specs: specs,
    })
}
