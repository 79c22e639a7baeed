//! Feature-store data model and the stratified ood-train / ood-val split.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::seed;

/// Label stored for samples that have no in-distribution class.
pub const OOD_LABEL: u32 = u32::MAX;

/// Current feature-store format version.
pub const STORE_VERSION: u32 = 1;

/// Where a sample comes from: the in-distribution set or a named OOD set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceTag {
    Id,
    Ood(String),
}

impl SourceTag {
    pub fn is_id(&self) -> bool {
        matches!(self, SourceTag::Id)
    }

    pub fn ood_name(&self) -> Option<&str> {
        match self {
            SourceTag::Id => None,
            SourceTag::Ood(name) => Some(name),
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceTag::Id => f.write_str("ID"),
            SourceTag::Ood(name) => write!(f, "OOD:{name}"),
        }
    }
}

impl FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "ID" {
            return Ok(SourceTag::Id);
        }
        match s.strip_prefix("OOD:") {
            Some(name) if !name.is_empty() => Ok(SourceTag::Ood(name.to_string())),
            _ => Err(Error::invalid(format!("bad source tag {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    /// Fits the kNN index and PCA models.
    MeasureTrain,
    /// Trains the combiner.
    OodTrain,
    /// Reported results.
    OodVal,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::MeasureTrain => "measure-train",
            Split::OodTrain => "ood-train",
            Split::OodVal => "ood-val",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "measure-train" => Ok(Split::MeasureTrain),
            "ood-train" => Ok(Split::OodTrain),
            "ood-val" => Ok(Split::OodVal),
            _ => Err(Error::invalid(format!("bad split {s:?}"))),
        }
    }
}

/// One image: its pooled feature vector, its logits and its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub feature: Vec<f32>,
    pub logits: Vec<f32>,
    /// Class index, or [`OOD_LABEL`] for OOD samples.
    pub true_class: u32,
    pub source: SourceTag,
    pub split: Split,
}

impl SampleRecord {
    pub fn class(&self) -> Option<usize> {
        (self.true_class != OOD_LABEL).then_some(self.true_class as usize)
    }

    pub fn feature_f64(&self) -> Vec<f64> {
        self.feature.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn logits_f64(&self) -> Vec<f64> {
        self.logits.iter().map(|&v| f64::from(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub n_samples: usize,
    pub feature_dim: usize,
    pub n_classes: usize,
    pub class_names: Vec<String>,
}

/// Manifest plus every sample record. Immutable once validated.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    manifest: DatasetManifest,
    records: Vec<SampleRecord>,
}

impl FeatureStore {
    /// Validates and assembles a store.
    pub fn new(manifest: DatasetManifest, records: Vec<SampleRecord>) -> Result<Self> {
        if manifest.n_samples != records.len() {
            return Err(Error::DimensionMismatch {
                expected: manifest.n_samples,
                actual: records.len(),
            });
        }
        if manifest.class_names.len() != manifest.n_classes {
            return Err(Error::DimensionMismatch {
                expected: manifest.n_classes,
                actual: manifest.class_names.len(),
            });
        }
        let mut names = BTreeSet::new();
        for name in &manifest.class_names {
            if !names.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate class name {name:?}")));
            }
        }
        let mut ids = BTreeSet::new();
        for r in &records {
            if !ids.insert(r.sample_id.as_str()) {
                return Err(Error::invalid(format!("duplicate sample id {:?}", r.sample_id)));
            }
            if r.feature.len() != manifest.feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: manifest.feature_dim,
                    actual: r.feature.len(),
                }
                .for_sample(&r.sample_id));
            }
            if r.logits.len() != manifest.n_classes {
                return Err(Error::DimensionMismatch {
                    expected: manifest.n_classes,
                    actual: r.logits.len(),
                }
                .for_sample(&r.sample_id));
            }
            let labelled = (r.true_class as usize) < manifest.n_classes;
            match (&r.source, r.true_class) {
                (SourceTag::Id, _) if labelled => {}
                (SourceTag::Ood(_), OOD_LABEL) => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "label {} inconsistent with source {}",
                        r.true_class, r.source
                    ))
                    .for_sample(&r.sample_id))
                }
            }
            if r.split == Split::MeasureTrain && !r.source.is_id() {
                return Err(Error::invalid("OOD samples cannot be in measure-train")
                    .for_sample(&r.sample_id));
            }
        }
        Ok(Self { manifest, records })
    }

    pub fn empty(feature_dim: usize, class_names: Vec<String>) -> Self {
        Self {
            manifest: DatasetManifest {
                version: STORE_VERSION,
                n_samples: 0,
                feature_dim,
                n_classes: class_names.len(),
                class_names,
            },
            records: Vec::new(),
        }
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.manifest.feature_dim
    }

    pub fn n_classes(&self) -> usize {
        self.manifest.n_classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.manifest.class_names
    }

    /// Indices of the records in `split`, in store order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Feature vectors of the given records as an `f64` matrix.
    pub fn feature_matrix(&self, indices: &[usize]) -> Matrix {
        let d = self.manifest.feature_dim;
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend(self.records[i].feature.iter().map(|&v| f64::from(v)));
        }
        Matrix::from_vec(indices.len(), d, data).expect("record dimensions validated")
    }

    /// Returns a copy with split labels replaced.
    pub fn with_splits(&self, assignment: &SplitAssignment) -> Result<Self> {
        if assignment.splits.len() != self.records.len() {
            return Err(Error::DimensionMismatch {
                expected: self.records.len(),
                actual: assignment.splits.len(),
            });
        }
        let mut out = self.clone();
        for (r, &s) in out.records.iter_mut().zip(&assignment.splits) {
            r.split = s;
        }
        Ok(out)
    }

    /// Reorders records (the manifest is unchanged).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let records = order.iter().map(|&i| self.records[i].clone()).collect();
        Self::new(self.manifest.clone(), records)
    }
}

/// Per-record split labels produced by [`split_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub splits: Vec<Split>,
}

impl SplitAssignment {
    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }
}

/// Re-splits every record outside measure-train into ood-train / ood-val.
///
/// Stratified by source tag: within each tag, `round(ratio * n)` records go to
/// ood-train after a seeded shuffle. Measure-train records keep their label.
pub fn split_dataset(store: &FeatureStore, ratio: f64, seed: u64) -> Result<SplitAssignment> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut groups: BTreeMap<&SourceTag, Vec<usize>> = BTreeMap::new();
    for (i, r) in store.records().iter().enumerate() {
        if r.split != Split::MeasureTrain {
            groups.entry(&r.source).or_default().push(i);
        }
    }
    if groups.is_empty() {
        return Err(Error::Empty("no samples outside measure-train to split"));
    }
    let mut splits: Vec<Split> = store.records().iter().map(|r| r.split).collect();
    let mut rng = seed::rng(seed);
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        let n_train = libm::round(ratio * members.len() as f64) as usize;
        for (pos, &i) in members.iter().enumerate() {
            splits[i] = if pos < n_train {
                Split::OodTrain
            } else {
                Split::OodVal
            };
        }
    }
    Ok(SplitAssignment { splits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn record(i: usize, source: SourceTag) -> SampleRecord {
        let true_class = if source.is_id() { (i % 2) as u32 } else { OOD_LABEL };
        SampleRecord {
            sample_id: format!("s{i}"),
            feature: vec![i as f32, 1.0],
            logits: vec![0.0, 1.0],
            true_class,
            source,
            split: Split::OodTrain,
        }
    }

    fn store(n_id: usize, n_ood: usize) -> FeatureStore {
        let mut records = Vec::new();
        for i in 0..n_id {
            records.push(record(i, SourceTag::Id));
        }
        for i in n_id..n_id + n_ood {
            records.push(record(i, SourceTag::Ood("far".into())));
        }
        let manifest = DatasetManifest {
            version: STORE_VERSION,
            n_samples: records.len(),
            feature_dim: 2,
            n_classes: 2,
            class_names: vec!["a".into(), "b".into()],
        };
        FeatureStore::new(manifest, records).unwrap()
    }

    #[test]
    fn exact_eighty_twenty() {
        let a = split_dataset(&store(100, 0), 0.8, 7).unwrap();
        assert_eq!(a.count(Split::OodTrain), 80);
        assert_eq!(a.count(Split::OodVal), 20);
    }

    #[test]
    fn deterministic_for_seed() {
        let s = store(60, 40);
        assert_eq!(split_dataset(&s, 0.8, 7).unwrap(), split_dataset(&s, 0.8, 7).unwrap());
        assert_ne!(split_dataset(&s, 0.8, 7).unwrap(), split_dataset(&s, 0.8, 8).unwrap());
    }

    #[test]
    fn stratifies_by_tag() {
        let s = store(50, 30);
        let a = split_dataset(&s, 0.8, 1).unwrap();
        let ood_train = s
            .records()
            .iter()
            .zip(&a.splits)
            .filter(|(r, &sp)| !r.source.is_id() && sp == Split::OodTrain)
            .count();
        assert_eq!(ood_train, 24);
    }

    #[test]
    fn measure_train_untouched() {
        let s = store(10, 0);
        let mut records = s.records().to_vec();
        records[0].split = Split::MeasureTrain;
        let s = FeatureStore::new(s.manifest().clone(), records).unwrap();
        let a = split_dataset(&s, 0.5, 3).unwrap();
        assert_eq!(a.splits[0], Split::MeasureTrain);
        assert_eq!(a.count(Split::OodTrain) + a.count(Split::OodVal), 9);
    }

    #[test]
    fn rejects_empty_and_bad_ratio() {
        let empty = FeatureStore::empty(2, vec!["a".into()]);
        assert!(matches!(split_dataset(&empty, 0.8, 1), Err(Error::Empty(_))));
        assert!(split_dataset(&store(4, 0), 1.0, 1).is_err());
        assert!(split_dataset(&store(4, 0), 0.0, 1).is_err());
    }

    #[test]
    fn validation_catches_bad_labels() {
        let s = store(2, 1);
        let mut records = s.records().to_vec();
        records[2].true_class = 0;
        assert!(FeatureStore::new(s.manifest().clone(), records).is_err());
        let mut records = s.records().to_vec();
        records[0].true_class = OOD_LABEL;
        assert!(FeatureStore::new(s.manifest().clone(), records).is_err());
        let mut records = s.records().to_vec();
        records[0].logits.push(1.0);
        assert!(FeatureStore::new(s.manifest().clone(), records).is_err());
    }

    #[test]
    fn source_tag_round_trip() {
        for t in ["ID", "OOD:imagenet"] {
            assert_eq!(t.parse::<SourceTag>().unwrap().to_string(), t);
        }
        assert!("OOD:".parse::<SourceTag>().is_err());
        assert!("ood".parse::<SourceTag>().is_err());
    }
}
