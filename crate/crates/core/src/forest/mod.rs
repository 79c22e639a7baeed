//! Random-forest combiner: bagged CART trees over measure vectors.

mod shapley;
mod tree;

pub use shapley::{summarize_attributions, AttributionSummary, ShapleyAttribution, ShapleyExplainer, DEFAULT_BACKGROUND, DEFAULT_N_MC};
pub use tree::{midpoint, DecisionTree, Node, TreeParams};

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::eval::{ClassifierDefinition, ScoreVariant};
use crate::math::{argmax, Matrix};
use crate::seed;

const MAGIC: &[u8; 4] = b"CRFM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainConfig {
    pub n_trees: usize,
    /// `None` grows every tree to purity.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            // ceil(sqrt(19))
            features_per_split: 5,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split,
            min_samples_leaf: self.min_samples_leaf,
            features_per_split: self.features_per_split,
        }
    }
}

/// Feature matrix plus integer labels `0..class_names.len()`.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub x: &'a Matrix,
    pub labels: &'a [usize],
    pub class_names: &'a [String],
    pub feature_names: &'a [String],
}

impl TrainingData<'_> {
    fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Checks shapes, labels and config before any tree is grown.
    pub fn validate(&self, config: &TrainConfig) -> Result<()> {
        let (n, f) = (self.x.rows(), self.x.cols());
        if self.labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: self.labels.len(),
            });
        }
        if self.feature_names.len() != f {
            return Err(Error::DimensionMismatch {
                expected: f,
                actual: self.feature_names.len(),
            });
        }
        if n == 0 || f == 0 {
            return Err(Error::Empty("training data"));
        }
        if !self.x.as_slice().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("training measures"));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.n_classes()) {
            return Err(Error::invalid(alloc::format!(
                "label {bad} outside {} classes",
                self.n_classes()
            )));
        }
        if self.labels.iter().all(|&l| l == self.labels[0]) {
            return Err(Error::SingleClass);
        }
        if config.n_trees == 0 {
            return Err(Error::invalid("n_trees must be positive"));
        }
        if config.features_per_split == 0 || config.features_per_split > f {
            return Err(Error::invalid(alloc::format!(
                "features_per_split {} outside 1..={f}",
                config.features_per_split
            )));
        }
        if config.min_samples_split < 2 || config.min_samples_leaf == 0 {
            return Err(Error::invalid("min_samples_split >= 2 and min_samples_leaf >= 1 required"));
        }
        Ok(())
    }
}

/// One grown tree and the bootstrap counts it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeFit {
    pub tree: DecisionTree,
    pub weights: Vec<u32>,
}

/// Grows the `index`-th tree of a forest. Independent of every other tree, so
/// callers may run these in any order or in parallel.
pub fn grow_tree(data: &TrainingData<'_>, config: &TrainConfig, index: usize) -> TreeFit {
    let mut rng = seed::rng(seed::derive_indexed(config.seed, index as u64));
    let n = data.x.rows();
    let weights = if config.bootstrap {
        let mut w = vec![0u32; n];
        for _ in 0..n {
            w[rng.gen_range(0..n)] += 1;
        }
        w
    } else {
        vec![1u32; n]
    };
    let tree = DecisionTree::grow(data.x, data.labels, data.n_classes(), &weights, config.params(), &mut rng);
    TreeFit { tree, weights }
}

/// Trained ensemble. Outputs are ordered as `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomForestModel {
    trees: Vec<DecisionTree>,
    class_names: Vec<String>,
    feature_names: Vec<String>,
    config: TrainConfig,
    class_counts: Vec<u64>,
    oob_accuracy: Option<f64>,
    /// Out-of-bag probabilities of the training rows (full-forest prediction
    /// for a row no tree left out).
    oob_proba: Option<Matrix>,
}

/// Validates the data and builds the model from already grown trees (in tree
/// index order).
pub fn assemble_forest(data: &TrainingData<'_>, config: &TrainConfig, fits: Vec<TreeFit>) -> Result<RandomForestModel> {
    data.validate(config)?;
    if fits.len() != config.n_trees {
        return Err(Error::DimensionMismatch {
            expected: config.n_trees,
            actual: fits.len(),
        });
    }
    let n_classes = data.n_classes();
    let mut class_counts = vec![0u64; n_classes];
    for &l in data.labels {
        class_counts[l] += 1;
    }
    let (oob_accuracy, oob_sums) = if config.bootstrap {
        let mut sums = Matrix::zeros(data.x.rows(), n_classes);
        let mut votes = vec![0u32; data.x.rows()];
        for fit in &fits {
            for (i, &w) in fit.weights.iter().enumerate() {
                if w == 0 {
                    let p = fit.tree.predict(data.x.row(i));
                    sums.row_mut(i).iter_mut().zip(&p).for_each(|(s, v)| *s += v);
                    votes[i] += 1;
                }
            }
        }
        let scored: Vec<usize> = (0..data.x.rows()).filter(|&i| votes[i] > 0).collect();
        let accuracy = (!scored.is_empty()).then(|| {
            let hits = scored
                .iter()
                .filter(|&&i| argmax(sums.row(i)) == data.labels[i])
                .count();
            hits as f64 / scored.len() as f64
        });
        for (i, &v) in votes.iter().enumerate() {
            if v > 0 {
                sums.row_mut(i).iter_mut().for_each(|s| *s /= f64::from(v));
            }
        }
        (accuracy, Some((sums, votes)))
    } else {
        (None, None)
    };
    let mut model = RandomForestModel {
        trees: fits.into_iter().map(|f| f.tree).collect(),
        class_names: data.class_names.to_vec(),
        feature_names: data.feature_names.to_vec(),
        config: *config,
        class_counts,
        oob_accuracy,
        oob_proba: None,
    };
    if let Some((mut proba, votes)) = oob_sums {
        for (i, &v) in votes.iter().enumerate() {
            if v == 0 {
                let p = model.predict_proba(data.x.row(i));
                proba.row_mut(i).copy_from_slice(&p);
            }
        }
        model.oob_proba = Some(proba);
    }
    Ok(model)
}

pub fn train_forest(data: &TrainingData<'_>, config: &TrainConfig) -> Result<RandomForestModel> {
    data.validate(config)?;
    let fits = (0..config.n_trees).map(|i| grow_tree(data, config, i)).collect();
    assemble_forest(data, config, fits)
}

/// Mean of the per-tree leaf class frequencies.
pub fn predict_proba(model: &RandomForestModel, x: &[f64]) -> Vec<f64> {
    model.predict_proba(x)
}

impl RandomForestModel {
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.class_names.len()];
        for t in &self.trees {
            let counts = t.leaf(x);
            let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
            for (o, &c) in out.iter_mut().zip(counts) {
                *o += f64::from(c) / total as f64;
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    pub fn predict_batch(&self, x: &Matrix) -> Matrix {
        let data = x.iter_rows().flat_map(|r| self.predict_proba(r)).collect();
        Matrix::from_vec(x.rows(), self.class_names.len(), data).expect("shape")
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Training-set size per class.
    pub fn class_counts(&self) -> &[u64] {
        &self.class_counts
    }

    /// Out-of-bag accuracy (bootstrap only).
    pub fn oob_accuracy(&self) -> Option<f64> {
        self.oob_accuracy
    }

    /// Out-of-bag probabilities of the training rows, in training order
    /// (bootstrap only).
    pub fn oob_proba(&self) -> Option<&Matrix> {
        self.oob_proba.as_ref()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        let c = &self.config;
        w.u64(c.n_trees as u64);
        w.u64(c.max_depth.map_or(u64::MAX, |d| d as u64));
        w.u64(c.min_samples_split as u64);
        w.u64(c.min_samples_leaf as u64);
        w.u64(c.features_per_split as u64);
        w.u8(u8::from(c.bootstrap));
        w.u64(c.seed);
        w.u32(self.class_names.len() as u32);
        self.class_names.iter().for_each(|s| w.str(s));
        w.u32(self.feature_names.len() as u32);
        self.feature_names.iter().for_each(|s| w.str(s));
        self.class_counts.iter().for_each(|&n| w.u64(n));
        match self.oob_accuracy {
            Some(a) => {
                w.u8(1);
                w.f64(a);
            }
            None => w.u8(0),
        }
        match &self.oob_proba {
            Some(m) => {
                w.u8(1);
                w.u64(m.rows() as u64);
                w.f64s(m.as_slice());
            }
            None => w.u8(0),
        }
        w.u32(self.trees.len() as u32);
        for t in &self.trees {
            w.u32(t.nodes().len() as u32);
            for node in t.nodes() {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        w.u8(0);
                        w.u32(*feature as u32);
                        w.f64(*threshold);
                        w.u32(*left as u32);
                        w.u32(*right as u32);
                    }
                    Node::Leaf { counts } => {
                        w.u8(1);
                        counts.iter().for_each(|&c| w.u32(c));
                    }
                }
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, MAGIC, VERSION, "model")?;
        let n_trees = r.usize()?;
        let max_depth = match r.u64()? {
            u64::MAX => None,
            d => Some(d as usize),
        };
        let config = TrainConfig {
            n_trees,
            max_depth,
            min_samples_split: r.usize()?,
            min_samples_leaf: r.usize()?,
            features_per_split: r.usize()?,
            bootstrap: r.u8()? != 0,
            seed: r.u64()?,
        };
        let n_classes = r.u32()? as usize;
        let class_names = (0..n_classes).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let n_features = r.u32()? as usize;
        let feature_names = (0..n_features).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let class_counts = (0..n_classes).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let oob_accuracy = match r.u8()? {
            0 => None,
            _ => Some(r.f64()?),
        };
        let oob_proba = match r.u8()? {
            0 => None,
            _ => {
                let rows = r.usize()?;
                Some(Matrix::from_vec(rows, n_classes, r.f64s(rows * n_classes)?)?)
            }
        };
        let stored = r.u32()? as usize;
        if stored != n_trees {
            return Err(Error::corrupt("model", "tree count does not match config"));
        }
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let node = match r.u8()? {
                    0 => Node::Split {
                        feature: r.u32()? as usize,
                        threshold: r.f64()?,
                        left: r.u32()? as usize,
                        right: r.u32()? as usize,
                    },
                    1 => Node::Leaf {
                        counts: (0..n_classes).map(|_| r.u32()).collect::<Result<Vec<_>>>()?,
                    },
                    t => return Err(Error::corrupt("model", alloc::format!("unknown node tag {t}"))),
                };
                nodes.push(node);
            }
            check_tree(&nodes, n_features)?;
            trees.push(DecisionTree::from_nodes(nodes));
        }
        r.finish()?;
        Ok(Self {
            trees,
            class_names,
            feature_names,
            config,
            class_counts,
            oob_accuracy,
            oob_proba,
        })
    }
}

/// Rejects trees whose links could loop or leave the node array.
fn check_tree(nodes: &[Node], n_features: usize) -> Result<()> {
    if nodes.is_empty() {
        return Err(Error::corrupt("model", "empty tree"));
    }
    for (i, n) in nodes.iter().enumerate() {
        match n {
            Node::Split {
                feature, left, right, ..
            } => {
                if *feature >= n_features || *left <= i || *right <= i || *left >= nodes.len() || *right >= nodes.len() {
                    return Err(Error::corrupt("model", "bad split node"));
                }
            }
            Node::Leaf { counts } => {
                if counts.iter().all(|&c| c == 0) {
                    return Err(Error::corrupt("model", "empty leaf"));
                }
            }
        }
    }
    Ok(())
}

/// Turns classifier outputs into the scalar COOD score: 0 is confidently ID,
/// 1 confidently OOD.
///
/// Multi-class outputs are ordered ID-correct, ID-incorrect-high,
/// ID-incorrect, then the OOD class(es). Binary outputs are (negative,
/// positive).
pub fn cood_score(proba: &[f64], definition: ClassifierDefinition, variant: ScoreVariant) -> Result<f64> {
    let s = match (definition, variant) {
        (ClassifierDefinition::MultiClass, ScoreVariant::IdCorrect) => 1.0 - proba[0],
        (ClassifierDefinition::MultiClass, ScoreVariant::Id) => 1.0 - proba[..3].iter().sum::<f64>(),
        (ClassifierDefinition::IdCorrectVsRest, _) => proba[1],
        (ClassifierDefinition::IdVsOod, ScoreVariant::Id) => proba[1],
        (ClassifierDefinition::IdVsOod, ScoreVariant::IdCorrect) => {
            return Err(Error::IncompatibleVariant {
                variant: ScoreVariant::IdCorrect.label(),
                definition: definition.label(),
            })
        }
    };
    Ok(s.clamp(0.0, 1.0))
}

/// Default feature names `f0, f1, ...`.
pub fn numbered_features(n: usize) -> Vec<String> {
    (0..n).map(|i| alloc::format!("f{i}")).collect()
}

#[cfg(test)]
pub(crate) fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| alloc::string::ToString::to_string(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names_for(x: &Matrix) -> (Vec<String>, Vec<String>) {
        (names(&["a", "b"]), numbered_features(x.cols()))
    }

    fn toy() -> (Matrix, Vec<usize>) {
        let rows: Vec<[f64; 2]> = (0..40).map(|i| [i as f64, ((i * 7) % 11) as f64]).collect();
        let y = (0..40).map(|i| usize::from(i >= 20)).collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn separable_training_accuracy() {
        let (x, y) = toy();
        let (c, f) = names_for(&x);
        let d = TrainingData { x: &x, labels: &y, class_names: &c, feature_names: &f };
        let m = train_forest(&d, &TrainConfig { n_trees: 10, features_per_split: 2, ..Default::default() }).unwrap();
        for (row, &l) in x.iter_rows().zip(&y) {
            assert_eq!(argmax(&m.predict_proba(row)), l);
        }
        assert!(m.oob_accuracy().unwrap() > 0.9);
    }

    #[test]
    fn serialization_round_trip() {
        let (x, y) = toy();
        let (c, f) = names_for(&x);
        let d = TrainingData { x: &x, labels: &y, class_names: &c, feature_names: &f };
        let m = train_forest(&d, &TrainConfig { n_trees: 5, features_per_split: 1, ..Default::default() }).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(RandomForestModel::from_bytes(&bytes).unwrap(), m);
        assert!(RandomForestModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let m2 = train_forest(&d, &TrainConfig { n_trees: 5, features_per_split: 1, ..Default::default() }).unwrap();
        assert_eq!(m2.to_bytes(), bytes);
    }

    #[test]
    fn training_errors() {
        let (x, _) = toy();
        let (c, f) = names_for(&x);
        let one = vec![1; 40];
        let d = TrainingData { x: &x, labels: &one, class_names: &c, feature_names: &f };
        assert!(matches!(train_forest(&d, &TrainConfig::default()), Err(Error::SingleClass)));
        let mut bad = x.clone();
        bad.set(3, 1, f64::NAN);
        let (_, y) = toy();
        let d = TrainingData { x: &bad, labels: &y, class_names: &c, feature_names: &f };
        assert!(matches!(train_forest(&d, &TrainConfig { features_per_split: 2, ..Default::default() }), Err(Error::NonFinite(_))));
        let d = TrainingData { x: &x, labels: &y, class_names: &c, feature_names: &f };
        assert!(train_forest(&d, &TrainConfig { features_per_split: 3, ..Default::default() }).is_err());
    }

    #[test]
    fn cood_score_variants() {
        use ClassifierDefinition::*;
        let p = [0.1, 0.2, 0.2, 0.5];
        assert!((cood_score(&p, MultiClass, ScoreVariant::Id).unwrap() - 0.5).abs() < 1e-12);
        assert!((cood_score(&p, MultiClass, ScoreVariant::IdCorrect).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(cood_score(&[1.0, 0.0, 0.0, 0.0], MultiClass, ScoreVariant::IdCorrect).unwrap(), 0.0);
        assert_eq!(cood_score(&[0.3, 0.7], IdVsOod, ScoreVariant::Id).unwrap(), 0.7);
        assert!(matches!(
            cood_score(&[0.3, 0.7], IdVsOod, ScoreVariant::IdCorrect),
            Err(Error::IncompatibleVariant { .. })
        ));
    }
}
