//! The nineteen individual OOD measures and the fitted context that computes
//! them for one sample.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::codec::{Reader, Writer};
use crate::data::{FeatureStore, Split};
use crate::error::{Error, Result};
use crate::knn::{distance, IndexKind, KnnIndex, NeighborEntry, NeighborSet};
use crate::math::{argmax, max_value, norm2, Matrix};
use crate::pca::{fre, PcaModel};
use crate::taxonomy::TaxonTree;

pub const MEASURE_COUNT: usize = 19;
pub const DEFAULT_K: usize = 30;
pub const DEFAULT_TEMPERATURE: f64 = 2.0;
pub const DEFAULT_PCA_COMPONENTS: usize = 256;
/// Value given to LDOF when the neighbours are (numerically) coincident.
pub const LDOF_CAP: f64 = 1e6;
const LDOF_MIN_SPREAD: f64 = 1e-12;

/// Identifies one individual measure. Order matches [`MeasureVector`] fields
/// and the measures table columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Measure {
    AvgDistAmongNn,
    AvgDistToNn,
    Dist1stNn,
    DistKthNn,
    Ldof,
    GlobalFre,
    ClassFre,
    MaxLinear,
    MaxKnn,
    MaxLinearTScaled,
    MaxLinearPlusKnn,
    TdLinearKnn,
    EntropyNnTrue,
    Enwedi1st,
    EnwediAvg,
    FeatureEntropy,
    FeatureSum,
    FeatureMagnitude,
    AvgTrueProbNn,
}

impl Measure {
    pub const ALL: [Measure; MEASURE_COUNT] = [
        Measure::AvgDistAmongNn,
        Measure::AvgDistToNn,
        Measure::Dist1stNn,
        Measure::DistKthNn,
        Measure::Ldof,
        Measure::GlobalFre,
        Measure::ClassFre,
        Measure::MaxLinear,
        Measure::MaxKnn,
        Measure::MaxLinearTScaled,
        Measure::MaxLinearPlusKnn,
        Measure::TdLinearKnn,
        Measure::EntropyNnTrue,
        Measure::Enwedi1st,
        Measure::EnwediAvg,
        Measure::FeatureEntropy,
        Measure::FeatureSum,
        Measure::FeatureMagnitude,
        Measure::AvgTrueProbNn,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Canonical column name.
    pub fn name(self) -> &'static str {
        match self {
            Measure::AvgDistAmongNn => "avg_dist_among_nn",
            Measure::AvgDistToNn => "avg_dist_to_nn",
            Measure::Dist1stNn => "dist_1st_nn",
            Measure::DistKthNn => "dist_kth_nn",
            Measure::Ldof => "ldof",
            Measure::GlobalFre => "global_fre",
            Measure::ClassFre => "class_fre",
            Measure::MaxLinear => "max_linear",
            Measure::MaxKnn => "max_knn",
            Measure::MaxLinearTScaled => "max_linear_t_scaled",
            Measure::MaxLinearPlusKnn => "max_linear_plus_knn",
            Measure::TdLinearKnn => "td_linear_knn",
            Measure::EntropyNnTrue => "entropy_nn_true",
            Measure::Enwedi1st => "enwedi_1st",
            Measure::EnwediAvg => "enwedi_avg",
            Measure::FeatureEntropy => "feature_entropy",
            Measure::FeatureSum => "feature_sum",
            Measure::FeatureMagnitude => "feature_magnitude",
            Measure::AvgTrueProbNn => "avg_true_prob_nn",
        }
    }

    /// Human-readable label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Measure::AvgDistAmongNn => "Avg. distance among NN",
            Measure::AvgDistToNn => "Avg. distance to NN",
            Measure::Dist1stNn => "Distance to 1st NN",
            Measure::DistKthNn => "Distance to k-th NN",
            Measure::Ldof => "LDOF",
            Measure::GlobalFre => "Global FRE",
            Measure::ClassFre => "Class FRE",
            Measure::MaxLinear => "Max(linear)",
            Measure::MaxKnn => "Max(kNN)",
            Measure::MaxLinearTScaled => "Max(linear-T-scaled)",
            Measure::MaxLinearPlusKnn => "Max(linear+kNN)",
            Measure::TdLinearKnn => "TD(linear, kNN)",
            Measure::EntropyNnTrue => "Entropy of NN's true class",
            Measure::Enwedi1st => "EnWeDi(1st)",
            Measure::EnwediAvg => "EnWeDi(average)",
            Measure::FeatureEntropy => "Feature entropy",
            Measure::FeatureSum => "Feature sum",
            Measure::FeatureMagnitude => "Feature magnitude",
            Measure::AvgTrueProbNn => "Avg. true probability of NN",
        }
    }

    pub fn from_name(name: &str) -> Option<Measure> {
        Measure::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Whether a larger value points towards OOD when the measure is used on
    /// its own as a score.
    pub fn higher_is_ood(self) -> bool {
        !matches!(
            self,
            Measure::MaxLinear
                | Measure::MaxKnn
                | Measure::MaxLinearTScaled
                | Measure::MaxLinearPlusKnn
                | Measure::FeatureSum
                | Measure::FeatureMagnitude
                | Measure::AvgTrueProbNn
        )
    }
}

pub fn measure_names() -> [&'static str; MEASURE_COUNT] {
    Measure::ALL.map(Measure::name)
}

/// All nineteen measure values of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeasureVector {
    pub avg_dist_among_nn: f64,
    pub avg_dist_to_nn: f64,
    pub dist_1st_nn: f64,
    pub dist_kth_nn: f64,
    pub ldof: f64,
    pub global_fre: f64,
    pub class_fre: f64,
    pub max_linear: f64,
    pub max_knn: f64,
    pub max_linear_t_scaled: f64,
    pub max_linear_plus_knn: f64,
    pub td_linear_knn: f64,
    pub entropy_nn_true: f64,
    pub enwedi_1st: f64,
    pub enwedi_avg: f64,
    pub feature_entropy: f64,
    pub feature_sum: f64,
    pub feature_magnitude: f64,
    pub avg_true_prob_nn: f64,
}

impl MeasureVector {
    pub fn to_array(&self) -> [f64; MEASURE_COUNT] {
        [
            self.avg_dist_among_nn,
            self.avg_dist_to_nn,
            self.dist_1st_nn,
            self.dist_kth_nn,
            self.ldof,
            self.global_fre,
            self.class_fre,
            self.max_linear,
            self.max_knn,
            self.max_linear_t_scaled,
            self.max_linear_plus_knn,
            self.td_linear_knn,
            self.entropy_nn_true,
            self.enwedi_1st,
            self.enwedi_avg,
            self.feature_entropy,
            self.feature_sum,
            self.feature_magnitude,
            self.avg_true_prob_nn,
        ]
    }

    pub fn from_array(a: [f64; MEASURE_COUNT]) -> Self {
        Self {
            avg_dist_among_nn: a[0],
            avg_dist_to_nn: a[1],
            dist_1st_nn: a[2],
            dist_kth_nn: a[3],
            ldof: a[4],
            global_fre: a[5],
            class_fre: a[6],
            max_linear: a[7],
            max_knn: a[8],
            max_linear_t_scaled: a[9],
            max_linear_plus_knn: a[10],
            td_linear_knn: a[11],
            entropy_nn_true: a[12],
            enwedi_1st: a[13],
            enwedi_avg: a[14],
            feature_entropy: a[15],
            feature_sum: a[16],
            feature_magnitude: a[17],
            avg_true_prob_nn: a[18],
        }
    }

    pub fn get(&self, m: Measure) -> f64 {
        self.to_array()[m.index()]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Temperature-scaled softmax, computed with max-subtraction.
pub fn softmax_t(logits: &[f64], temperature: f64) -> Vec<f64> {
    let top = max_value(logits);
    let mut out: Vec<f64> = logits
        .iter()
        .map(|&g| libm::exp((g - top) / temperature))
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

/// Normalised class histogram of the neighbours' true classes.
pub fn knn_class_probability(neighbors: &NeighborSet, n_classes: usize) -> Vec<f64> {
    let mut p = vec![0.0; n_classes];
    for e in &neighbors.entries {
        p[e.true_class] += 1.0;
    }
    let k = neighbors.len() as f64;
    p.iter_mut().for_each(|v| *v /= k);
    p
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * libm::log2(v))
        .sum();
    // -0.0 and tiny negative rounding from a one-hot input
    h.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceFamily {
    pub avg_dist_among_nn: f64,
    pub avg_dist_to_nn: f64,
    pub dist_1st_nn: f64,
    pub dist_kth_nn: f64,
    pub ldof: f64,
}

/// Distance-based measures from shifted, non-negative distances.
///
/// `to_neighbors` holds query-to-neighbour distances in neighbour order;
/// `among` is the `k x k` row-major matrix of neighbour-pair distances
/// (diagonal ignored).
pub fn distance_family(to_neighbors: &[f64], among: &[f64]) -> Result<DistanceFamily> {
    let k = to_neighbors.len();
    if k < 2 {
        return Err(Error::invalid("distance measures need at least two neighbours"));
    }
    if among.len() != k * k {
        return Err(Error::DimensionMismatch {
            expected: k * k,
            actual: among.len(),
        });
    }
    let mut pair_sum = 0.0;
    for n in 0..k {
        for m in 0..k {
            if n != m {
                pair_sum += among[n * k + m];
            }
        }
    }
    let avg_among = pair_sum / (k * (k - 1)) as f64;
    let avg_to = to_neighbors.iter().sum::<f64>() / k as f64;
    let ldof = if avg_among < LDOF_MIN_SPREAD {
        if avg_to < LDOF_MIN_SPREAD {
            0.0
        } else {
            LDOF_CAP
        }
    } else {
        (avg_to / avg_among).min(LDOF_CAP)
    };
    Ok(DistanceFamily {
        avg_dist_among_nn: avg_among,
        avg_dist_to_nn: avg_to,
        dist_1st_nn: to_neighbors[0],
        dist_kth_nn: to_neighbors[k - 1],
        ldof,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityFamily {
    pub max_linear: f64,
    pub max_knn: f64,
    pub max_linear_t_scaled: f64,
    pub max_linear_plus_knn: f64,
}

pub fn probability_family(p: &[f64], p_t: &[f64], p_knn: &[f64]) -> ProbabilityFamily {
    let combined = p
        .iter()
        .zip(p_knn)
        .map(|(a, b)| (a + b) / 2.0)
        .fold(f64::NEG_INFINITY, f64::max);
    ProbabilityFamily {
        max_linear: max_value(p),
        max_knn: max_value(p_knn),
        max_linear_t_scaled: max_value(p_t),
        max_linear_plus_knn: combined,
    }
}

/// Taxon distance between the linear and the kNN predicted classes.
/// `class_leaves[c]` is the taxonomy node of class `c`.
pub fn td_linear_knn(tree: &TaxonTree, class_leaves: &[usize], p: &[f64], p_knn: &[f64]) -> Result<f64> {
    let (a, b) = (argmax(p), argmax(p_knn));
    let leaf = |c: usize| {
        class_leaves
            .get(c)
            .copied()
            .ok_or_else(|| Error::UnmappedClass(alloc::format!("#{c}")))
    };
    Ok(tree.distance(leaf(a)?, leaf(b)?))
}

/// `(d1 * (1 + H), d_avg * (1 + H))`
pub fn enwedi(dist_1st: f64, avg_dist: f64, entropy_nn: f64) -> (f64, f64) {
    let w = 1.0 + entropy_nn;
    (dist_1st * w, avg_dist * w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureStats {
    pub feature_entropy: f64,
    pub feature_sum: f64,
    pub feature_magnitude: f64,
}

/// Entropy of `|f| / sum|f|`, the L1 norm and the L2 norm of a feature.
pub fn feature_stats(f: &[f64]) -> FeatureStats {
    let sum: f64 = f.iter().map(|v| libm::fabs(*v)).sum();
    let feature_entropy = if sum > 0.0 {
        let p: Vec<f64> = f.iter().map(|v| libm::fabs(*v) / sum).collect();
        entropy(&p)
    } else {
        0.0
    };
    FeatureStats {
        feature_entropy,
        feature_sum: sum,
        feature_magnitude: norm2(f),
    }
}

/// Mean of each neighbour's own probability at its true class.
pub fn avg_true_prob_nn(neighbors: &NeighborSet) -> Result<f64> {
    if neighbors.is_empty() {
        return Err(Error::Empty("neighbour set"));
    }
    Ok(neighbors.entries.iter().map(|e| e.true_class_prob).sum::<f64>() / neighbors.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureConfig {
    pub k: usize,
    pub pca_components: usize,
    pub temperature: f64,
    pub index: IndexKind,
    pub kmeans_seed: u64,
    /// Explained-variance target for the global FRE model.
    pub global_fre_variance: f64,
    pub global_fre_max_components: usize,
    pub class_fre_max_components: usize,
    /// Shift inner-product distances by the fitted `d_min` and clamp at zero.
    pub shift_distances: bool,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            pca_components: DEFAULT_PCA_COMPONENTS,
            temperature: DEFAULT_TEMPERATURE,
            index: IndexKind::default(),
            kmeans_seed: 0,
            global_fre_variance: 0.95,
            global_fre_max_components: 256,
            class_fre_max_components: 16,
            shift_distances: true,
        }
    }
}

/// The kNN half of a context: PCA projection plus the index over the
/// projected measure-train features.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub pca: PcaModel,
    pub index: KnnIndex,
}

const KNN_MODEL_MAGIC: &[u8; 4] = b"CKNM";
const KNN_MODEL_VERSION: u32 = 1;

impl KnnModel {
    /// PCA blob followed by the index blob.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(KNN_MODEL_MAGIC, KNN_MODEL_VERSION);
        w.bytes(&self.pca.to_bytes());
        w.bytes(&self.index.to_bytes());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, KNN_MODEL_MAGIC, KNN_MODEL_VERSION, "kNN model")?;
        let pca = PcaModel::from_bytes(r.bytes()?)?;
        let index = KnnIndex::from_bytes(r.bytes()?)?;
        r.finish()?;
        if pca.n_components() != index.dim() {
            return Err(Error::Corrupt {
                what: "kNN model",
                reason: alloc::format!("PCA has {} components, index dim {}", pca.n_components(), index.dim()),
            });
        }
        Ok(Self { pca, index })
    }

    /// Fits PCA on measure-train features and indexes their projections.
    pub fn fit(store: &FeatureStore, config: &MeasureConfig) -> Result<Self> {
        let rows = store.indices(Split::MeasureTrain);
        if rows.len() < 2 {
            return Err(Error::Empty("measure-train needs at least two samples"));
        }
        let features = store.feature_matrix(&rows);
        let n_comp = config
            .pca_components
            .min(features.cols())
            .min(features.rows());
        let pca = PcaModel::fit(&features, n_comp)?;
        let projected: Vec<Vec<f64>> = features.iter_rows().map(|r| pca.transform(r)).collect();
        let index = KnnIndex::build(Matrix::from_rows(&projected)?, config.index, config.kmeans_seed)?;
        Ok(Self { pca, index })
    }
}

/// Per-sample measure output plus the class-FRE fallback flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureRow {
    pub values: MeasureVector,
    /// Set when no class PCA existed for the predicted class and global FRE
    /// was used instead.
    pub class_fre_fallback: bool,
}

/// Everything fitted on measure-train that the measures need.
#[derive(Debug, Clone)]
pub struct MeasureContext {
    config: MeasureConfig,
    knn: KnnModel,
    /// Store index of each index row.
    reference_rows: Vec<usize>,
    reference_classes: Vec<usize>,
    reference_true_prob: Vec<f64>,
    distance_offset: f64,
    global_pca: PcaModel,
    class_pcas: Vec<Option<PcaModel>>,
    class_leaves: Vec<usize>,
    taxonomy: TaxonTree,
    n_classes: usize,
}

impl MeasureContext {
    pub fn fit(store: &FeatureStore, taxonomy: TaxonTree, config: MeasureConfig) -> Result<Self> {
        let knn = KnnModel::fit(store, &config)?;
        Self::with_knn(store, taxonomy, config, knn)
    }

    /// Completes a context around an already fitted kNN model.
    pub fn with_knn(store: &FeatureStore, taxonomy: TaxonTree, config: MeasureConfig, knn: KnnModel) -> Result<Self> {
        if !(config.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if config.k < 2 {
            return Err(Error::invalid("k must be at least 2"));
        }
        let reference_rows = store.indices(Split::MeasureTrain);
        if knn.index.len() != reference_rows.len() || knn.pca.dim() != store.feature_dim() {
            return Err(Error::invalid(
                "kNN model does not match the store's measure-train split",
            ));
        }
        if config.k >= reference_rows.len() {
            return Err(Error::TooManyNeighbors {
                k: config.k,
                size: reference_rows.len() - 1,
            });
        }
        let class_leaves = taxonomy.class_leaves(store.class_names())?;
        let n_classes = store.n_classes();
        let mut reference_classes = Vec::with_capacity(reference_rows.len());
        let mut reference_true_prob = Vec::with_capacity(reference_rows.len());
        for &i in &reference_rows {
            let r = &store.records()[i];
            let c = r.class().ok_or(Error::invalid("OOD sample in measure-train"))?;
            let p = softmax_t(&r.logits_f64(), 1.0);
            reference_classes.push(c);
            reference_true_prob.push(p[c]);
        }

        // Smallest self-excluded nearest-neighbour distance on measure-train.
        let mut distance_offset = f64::INFINITY;
        for row in 0..knn.index.len() {
            let nn = knn.index.search_excluding(knn.index.vector(row), 1, Some(row))?;
            distance_offset = distance_offset.min(nn[0].distance);
        }

        let features = store.feature_matrix(&reference_rows);
        let global_pca = PcaModel::fit_variance(
            &features,
            config.global_fre_variance,
            config.global_fre_max_components,
        )?;
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
        for (pos, &c) in reference_classes.iter().enumerate() {
            per_class[c].push(pos);
        }
        let mut class_pcas = Vec::with_capacity(n_classes);
        for members in &per_class {
            let n = members.len();
            let n_comp = config
                .class_fre_max_components
                .min(n.saturating_sub(1))
                .min(features.cols());
            if n_comp == 0 || n < n_comp + 2 {
                class_pcas.push(None);
                continue;
            }
            class_pcas.push(Some(PcaModel::fit(&features.select_rows(members), n_comp)?));
        }

        Ok(Self {
            config,
            knn,
            reference_rows,
            reference_classes,
            reference_true_prob,
            distance_offset,
            global_pca,
            class_pcas,
            class_leaves,
            taxonomy,
            n_classes,
        })
    }

    pub fn config(&self) -> &MeasureConfig {
        &self.config
    }

    pub fn knn(&self) -> &KnnModel {
        &self.knn
    }

    pub fn taxonomy(&self) -> &TaxonTree {
        &self.taxonomy
    }

    pub fn class_leaves(&self) -> &[usize] {
        &self.class_leaves
    }

    /// The fitted distance shift `d_min`.
    pub fn distance_offset(&self) -> f64 {
        self.distance_offset
    }

    pub fn global_pca(&self) -> &PcaModel {
        &self.global_pca
    }

    pub fn class_pca(&self, class: usize) -> Option<&PcaModel> {
        self.class_pcas.get(class).and_then(Option::as_ref)
    }

    /// Store index of the `row`-th reference (measure-train) sample.
    pub fn reference_store_row(&self, row: usize) -> usize {
        self.reference_rows[row]
    }

    /// Overrides the temperature used for `max_linear_t_scaled`.
    pub fn set_temperature(&mut self, temperature: f64) {
        self.config.temperature = temperature;
    }

    #[inline]
    fn shift(&self, d: f64) -> f64 {
        if self.config.shift_distances {
            (d - self.distance_offset).max(0.0)
        } else {
            d
        }
    }

    /// k nearest reference samples of a raw feature vector, with metadata
    /// and unshifted distances.
    pub fn neighbors(&self, feature: &[f64], exclude: Option<usize>) -> Result<NeighborSet> {
        let z = self.knn.pca.transform(feature);
        let hits = self.knn.index.search_excluding(&z, self.config.k, exclude)?;
        Ok(NeighborSet {
            entries: hits
                .into_iter()
                .map(|h| NeighborEntry {
                    row: h.row,
                    distance: h.distance,
                    true_class: self.reference_classes[h.row],
                    true_class_prob: self.reference_true_prob[h.row],
                })
                .collect(),
        })
    }

    /// Computes all measures of one sample. `exclude` names the reference row
    /// of the sample itself when it belongs to measure-train.
    pub fn measure(&self, feature: &[f64], logits: &[f64], exclude: Option<usize>) -> Result<MeasureRow> {
        if feature.len() != self.knn.pca.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.knn.pca.dim(),
                actual: feature.len(),
            });
        }
        if logits.len() != self.n_classes {
            return Err(Error::DimensionMismatch {
                expected: self.n_classes,
                actual: logits.len(),
            });
        }
        if !feature.iter().chain(logits).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature or logits"));
        }
        let p = softmax_t(logits, 1.0);
        let p_t = softmax_t(logits, self.config.temperature);
        let neighbors = self.neighbors(feature, exclude)?;
        let p_knn = knn_class_probability(&neighbors, self.n_classes);

        let k = neighbors.len();
        let to: Vec<f64> = neighbors.entries.iter().map(|e| self.shift(e.distance)).collect();
        let mut among = vec![0.0; k * k];
        for n in 0..k {
            let vn = self.knn.index.vector(neighbors.entries[n].row);
            for m in n + 1..k {
                let vm = self.knn.index.vector(neighbors.entries[m].row);
                let d = self.shift(distance(vn, vm));
                among[n * k + m] = d;
                among[m * k + n] = d;
            }
        }
        let dist = distance_family(&to, &among)?;
        let probs = probability_family(&p, &p_t, &p_knn);
        let td = td_linear_knn(&self.taxonomy, &self.class_leaves, &p, &p_knn)?;
        let h_nn = entropy(&p_knn);
        let (enwedi_1st, enwedi_avg) = enwedi(dist.dist_1st_nn, dist.avg_dist_to_nn, h_nn);
        let stats = feature_stats(feature);
        let global_fre = fre(&self.global_pca, feature);
        let (class_fre, class_fre_fallback) = match self.class_pca(argmax(&p)) {
            Some(pca) => (fre(pca, feature), false),
            None => (global_fre, true),
        };

        let values = MeasureVector {
            avg_dist_among_nn: dist.avg_dist_among_nn,
            avg_dist_to_nn: dist.avg_dist_to_nn,
            dist_1st_nn: dist.dist_1st_nn,
            dist_kth_nn: dist.dist_kth_nn,
            ldof: dist.ldof,
            global_fre,
            class_fre,
            max_linear: probs.max_linear,
            max_knn: probs.max_knn,
            max_linear_t_scaled: probs.max_linear_t_scaled,
            max_linear_plus_knn: probs.max_linear_plus_knn,
            td_linear_knn: td,
            entropy_nn_true: h_nn,
            enwedi_1st,
            enwedi_avg,
            feature_entropy: stats.feature_entropy,
            feature_sum: stats.feature_sum,
            feature_magnitude: stats.feature_magnitude,
            avg_true_prob_nn: avg_true_prob_nn(&neighbors)?,
        };
        if !values.is_finite() {
            return Err(Error::NonFinite("measure vector"));
        }
        Ok(MeasureRow {
            values,
            class_fre_fallback,
        })
    }

    /// Measures of the `index`-th store record, excluding the record itself
    /// from its neighbours when it is a reference sample.
    pub fn measure_record(&self, store: &FeatureStore, index: usize) -> Result<MeasureRow> {
        let r = &store.records()[index];
        let exclude = if r.split == Split::MeasureTrain {
            self.reference_rows.binary_search(&index).ok()
        } else {
            None
        };
        self.measure(&r.feature_f64(), &r.logits_f64(), exclude)
            .map_err(|e| e.for_sample(&r.sample_id))
    }
}

/// Measures for every ood-train and ood-val record, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureTable {
    pub sample_ids: Vec<String>,
    pub rows: Vec<MeasureVector>,
    pub class_fre_fallback: Vec<bool>,
}

impl MeasureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows as a matrix with one column per measure.
    pub fn matrix(&self) -> Matrix {
        let data = self.rows.iter().flat_map(|r| r.to_array()).collect();
        Matrix::from_vec(self.rows.len(), MEASURE_COUNT, data).expect("fixed width")
    }

    pub fn position(&self, sample_id: &str) -> Option<usize> {
        self.sample_ids.iter().position(|s| s == sample_id)
    }
}

/// Store indices whose measures `compute_all` produces.
pub fn evaluation_rows(store: &FeatureStore) -> Vec<usize> {
    store
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split != Split::MeasureTrain)
        .map(|(i, _)| i)
        .collect()
}

/// Assembles a table from per-record results (used by serial and parallel
/// drivers alike).
pub fn collect_table(store: &FeatureStore, rows: &[usize], results: Vec<MeasureRow>) -> MeasureTable {
    MeasureTable {
        sample_ids: rows.iter().map(|&i| store.records()[i].sample_id.clone()).collect(),
        class_fre_fallback: results.iter().map(|r| r.class_fre_fallback).collect(),
        rows: results.into_iter().map(|r| r.values).collect(),
    }
}

pub fn compute_all(store: &FeatureStore, context: &MeasureContext) -> Result<MeasureTable> {
    let rows = evaluation_rows(store);
    let results = rows
        .iter()
        .map(|&i| context.measure_record(store, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(collect_table(store, &rows, results))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(classes: &[usize], probs: &[f64]) -> NeighborSet {
        NeighborSet {
            entries: classes
                .iter()
                .zip(probs)
                .enumerate()
                .map(|(row, (&c, &p))| NeighborEntry {
                    row,
                    distance: row as f64,
                    true_class: c,
                    true_class_prob: p,
                })
                .collect(),
        }
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax_t(&[0.0, 0.0], 3.0), [0.5, 0.5]);
        let p = softmax_t(&[libm::log(4.0), 0.0], 1.0);
        assert!((p[0] - 0.8).abs() < 1e-12 && (p[1] - 0.2).abs() < 1e-12);
        let p = softmax_t(&[libm::log(4.0), 0.0], 2.0);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12);
        let a = softmax_t(&[1.0, -2.0, 0.5], 2.0);
        let b = softmax_t(&[101.0, 98.0, 100.5], 2.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let big = softmax_t(&[1000.0, 0.0], 1.0);
        assert!(big[0].is_finite() && (big.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn knn_histogram() {
        let p = knn_class_probability(&set(&[3; 30], &[1.0; 30]), 5);
        assert_eq!(p, [0.0, 0.0, 0.0, 1.0, 0.0]);
        let mut classes = vec![1; 15];
        classes.extend([4; 15]);
        let p = knn_class_probability(&set(&classes, &[1.0; 30]), 5);
        assert_eq!(p, [0.0, 0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((entropy(&[0.5, 0.5]) - 1.0).abs() < 1e-15);
        assert!((entropy(&[0.5, 0.25, 0.25]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn symmetric_distances() {
        let c = 2.5;
        let to = [c; 4];
        let mut among = [c; 16];
        for i in 0..4 {
            among[i * 4 + i] = 0.0;
        }
        let f = distance_family(&to, &among).unwrap();
        assert_eq!(f.avg_dist_to_nn, c);
        assert_eq!(f.avg_dist_among_nn, c);
        assert_eq!(f.ldof, 1.0);
    }

    #[test]
    fn coincident_neighbours() {
        let f = distance_family(&[0.0; 3], &[0.0; 9]).unwrap();
        assert_eq!((f.dist_1st_nn, f.avg_dist_to_nn, f.ldof), (0.0, 0.0, 0.0));
        let f = distance_family(&[1.0, 2.0], &[0.0; 4]).unwrap();
        assert_eq!(f.ldof, LDOF_CAP);
        assert!(distance_family(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn probability_family_cases() {
        let f = probability_family(&[0.0, 1.0], &[0.2, 0.8], &[0.0, 1.0]);
        assert_eq!(f.max_linear_plus_knn, 1.0);
        let f = probability_family(&[1.0, 0.0], &[0.7, 0.3], &[0.0, 1.0]);
        assert_eq!(f.max_linear_plus_knn, 0.5);
        assert_eq!(f.max_linear_t_scaled, 0.7);
    }

    #[test]
    fn enwedi_cases() {
        assert_eq!(enwedi(3.0, 4.0, 0.0), (3.0, 4.0));
        assert_eq!(enwedi(2.0, 1.0, 1.0), (4.0, 2.0));
    }

    #[test]
    fn feature_stat_cases() {
        let s = feature_stats(&[1.0, 0.0, 0.0]);
        assert_eq!((s.feature_entropy, s.feature_sum, s.feature_magnitude), (0.0, 1.0, 1.0));
        let s = feature_stats(&[0.3; 8]);
        assert!((s.feature_entropy - 3.0).abs() < 1e-12);
        let s = feature_stats(&[0.0; 4]);
        assert_eq!((s.feature_entropy, s.feature_sum, s.feature_magnitude), (0.0, 0.0, 0.0));
        let s = feature_stats(&[-3.0, 4.0]);
        assert_eq!((s.feature_sum, s.feature_magnitude), (7.0, 5.0));
    }

    #[test]
    fn avg_true_prob_cases() {
        assert_eq!(avg_true_prob_nn(&set(&[0, 1, 2], &[1.0; 3])).unwrap(), 1.0);
        assert_eq!(avg_true_prob_nn(&set(&[0, 1], &[0.2, 0.8])).unwrap(), 0.5);
        assert!(avg_true_prob_nn(&set(&[], &[])).is_err());
    }

    #[test]
    fn names_round_trip() {
        for m in Measure::ALL {
            assert_eq!(Measure::from_name(m.name()), Some(m));
            assert_eq!(Measure::ALL[m.index()], m);
        }
        let v = MeasureVector::from_array(core::array::from_fn(|i| i as f64));
        assert_eq!(v.get(Measure::AvgTrueProbNn), 18.0);
        assert_eq!(v.max_linear, 7.0);
    }
}
