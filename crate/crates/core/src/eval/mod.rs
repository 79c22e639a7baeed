//! ID categories, reference settings, ROC analysis and the settings grid.

mod grid;
mod roc;

pub use grid::*;
pub use roc::*;

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::data::{FeatureStore, SourceTag};
use crate::error::{Error, Result};
use crate::math::{argmax, max_value, Matrix};
use crate::measures::softmax_t;
use crate::taxonomy::TaxonTree;

/// Where an evaluated sample stands relative to the original classifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IdCategory {
    IdCorrect,
    /// Wrong, confident and conceptually far from the true class.
    IdIncorrectHigh,
    IdIncorrect,
    Ood(String),
}

pub const ID_CORRECT: &str = "ID-correct";
pub const ID_INCORRECT_HIGH: &str = "ID-incorrect-high";
pub const ID_INCORRECT: &str = "ID-incorrect";

impl IdCategory {
    pub fn is_ood(&self) -> bool {
        matches!(self, IdCategory::Ood(_))
    }

    /// ID-incorrect-high or ID-incorrect.
    pub fn is_incorrect(&self) -> bool {
        matches!(self, IdCategory::IdIncorrectHigh | IdCategory::IdIncorrect)
    }
}

impl fmt::Display for IdCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IdCategory::IdCorrect => f.write_str(ID_CORRECT),
            IdCategory::IdIncorrectHigh => f.write_str(ID_INCORRECT_HIGH),
            IdCategory::IdIncorrect => f.write_str(ID_INCORRECT),
            IdCategory::Ood(name) => write!(f, "OOD:{name}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoryConfig {
    /// Max(linear) must exceed this for ID-incorrect-high.
    pub prob_threshold: f64,
    /// TD(predicted, true) must exceed this for ID-incorrect-high.
    pub td_threshold: f64,
}

impl Default for CategoryConfig {
    fn default() -> Self {
        Self {
            prob_threshold: 0.80,
            td_threshold: 4.0,
        }
    }
}

/// Category of one ID sample from its linear probabilities.
pub fn categorize(p: &[f64], true_class: usize, tree: &TaxonTree, class_leaves: &[usize], config: &CategoryConfig) -> IdCategory {
    let predicted = argmax(p);
    if predicted == true_class {
        return IdCategory::IdCorrect;
    }
    let td = tree.distance(class_leaves[predicted], class_leaves[true_class]);
    if max_value(p) > config.prob_threshold && td > config.td_threshold {
        IdCategory::IdIncorrectHigh
    } else {
        IdCategory::IdIncorrect
    }
}

/// One category per store record.
pub fn assign_categories(store: &FeatureStore, taxonomy: &TaxonTree, config: &CategoryConfig) -> Result<Vec<IdCategory>> {
    let leaves = taxonomy.class_leaves(store.class_names())?;
    store
        .records()
        .iter()
        .map(|r| match (&r.source, r.class()) {
            (SourceTag::Ood(name), _) => Ok(IdCategory::Ood(name.clone())),
            (SourceTag::Id, Some(c)) => Ok(categorize(&softmax_t(&r.logits_f64(), 1.0), c, taxonomy, &leaves, config)),
            (SourceTag::Id, None) => Err(Error::invalid("ID sample without class").for_sample(&r.sample_id)),
        })
        .collect()
}

/// Names of OOD datasets present, sorted.
pub fn ood_names(categories: &[IdCategory]) -> Vec<String> {
    let set: BTreeSet<&str> = categories
        .iter()
        .filter_map(|c| match c {
            IdCategory::Ood(n) => Some(n.as_str()),
            _ => None,
        })
        .collect();
    set.into_iter().map(String::from).collect()
}

/// Report order: the three ID categories, then OOD datasets alphabetically.
pub fn report_categories(categories: &[IdCategory]) -> Vec<IdCategory> {
    let mut out = vec![IdCategory::IdCorrect, IdCategory::IdIncorrectHigh, IdCategory::IdIncorrect];
    out.extend(ood_names(categories).into_iter().map(IdCategory::Ood));
    out
}

/// Per-category rejection table in report order. Empty ID categories are kept
/// (count 0, blank statistics).
pub fn rejection_table(scores: &[f64], categories: &[IdCategory], threshold: f64) -> Result<RejectionTable> {
    if scores.len() != categories.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: categories.len(),
        });
    }
    let groups = report_categories(categories);
    let index: Vec<Option<usize>> = categories
        .iter()
        .map(|c| groups.iter().position(|g| g == c))
        .collect();
    let names: Vec<String> = groups.iter().map(ToString::to_string).collect();
    Ok(RejectionTable {
        threshold,
        rows: rejection_rows(scores, &index, &names, threshold),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassifierDefinition {
    /// ID-correct, ID-incorrect-high, ID-incorrect, OOD.
    MultiClass,
    IdCorrectVsRest,
    IdVsOod,
}

impl ClassifierDefinition {
    pub const ALL: [ClassifierDefinition; 3] = [
        ClassifierDefinition::MultiClass,
        ClassifierDefinition::IdCorrectVsRest,
        ClassifierDefinition::IdVsOod,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ClassifierDefinition::MultiClass => "Multi-class",
            ClassifierDefinition::IdCorrectVsRest => "ID-correct vs rest",
            ClassifierDefinition::IdVsOod => "ID vs OOD",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.label() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RocTruth {
    /// Positives are OOD samples.
    IdVsOod,
    /// Positives are everything but ID-correct.
    NotIdCorrect,
}

impl RocTruth {
    pub fn label(self) -> &'static str {
        match self {
            RocTruth::IdVsOod => "ID vs OOD",
            RocTruth::NotIdCorrect => "not(ID-correct)",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [RocTruth::IdVsOod, RocTruth::NotIdCorrect].into_iter().find(|t| t.label() == s)
    }

    pub fn is_positive(self, c: &IdCategory) -> bool {
        match self {
            RocTruth::IdVsOod => c.is_ood(),
            RocTruth::NotIdCorrect => *c != IdCategory::IdCorrect,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScoreVariant {
    /// `1 - P(ID-correct)`
    IdCorrect,
    /// `1 - sum of P(ID-*)`
    Id,
}

impl ScoreVariant {
    pub fn label(self) -> &'static str {
        match self {
            ScoreVariant::IdCorrect => "ID-correct",
            ScoreVariant::Id => "ID",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [ScoreVariant::IdCorrect, ScoreVariant::Id].into_iter().find(|v| v.label() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReferenceSetting {
    pub definition: ClassifierDefinition,
    pub exclude_incorrect: bool,
    pub truth: RocTruth,
    pub score: ScoreVariant,
}

impl Default for ReferenceSetting {
    fn default() -> Self {
        Self {
            definition: ClassifierDefinition::MultiClass,
            exclude_incorrect: true,
            truth: RocTruth::NotIdCorrect,
            score: ScoreVariant::IdCorrect,
        }
    }
}

impl fmt::Display for ReferenceSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} / exclude {} / {} / {}",
            self.definition.label(),
            yes_no(self.exclude_incorrect),
            self.truth.label(),
            self.score.label()
        )
    }
}

pub fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

impl ReferenceSetting {
    pub fn validate(&self) -> Result<()> {
        if self.definition != ClassifierDefinition::MultiClass && self.score != ScoreVariant::Id {
            return Err(Error::IncompatibleVariant {
                variant: self.score.label(),
                definition: self.definition.label(),
            });
        }
        Ok(())
    }

    /// ROC label per sample: `Some(true)` positive, `Some(false)` negative,
    /// `None` excluded.
    pub fn roc_label(&self, c: &IdCategory) -> Option<bool> {
        if self.exclude_incorrect && c.is_incorrect() {
            None
        } else {
            Some(self.truth.is_positive(c))
        }
    }
}

/// The 16 settings: Multi-class with both score variants, the two binary
/// definitions with score ID, each crossed with exclude and ROC truth.
pub fn enumerate_settings() -> Vec<ReferenceSetting> {
    let mut out = Vec::with_capacity(16);
    for definition in ClassifierDefinition::ALL {
        let scores: &[ScoreVariant] = if definition == ClassifierDefinition::MultiClass {
            &[ScoreVariant::IdCorrect, ScoreVariant::Id]
        } else {
            &[ScoreVariant::Id]
        };
        for exclude_incorrect in [false, true] {
            for truth in [RocTruth::IdVsOod, RocTruth::NotIdCorrect] {
                for &score in scores {
                    out.push(ReferenceSetting {
                        definition,
                        exclude_incorrect,
                        truth,
                        score,
                    });
                }
            }
        }
    }
    out
}

/// Training labels and output names for a classifier definition. With
/// `per_dataset_ood`, the Multi-class head gets one OOD output per dataset
/// (`ood_datasets` order) instead of a single OOD output.
pub fn classifier_labels(definition: ClassifierDefinition, categories: &[IdCategory], per_dataset_ood: bool, ood_datasets: &[String]) -> Result<(Vec<usize>, Vec<String>)> {
    let names: Vec<String> = match definition {
        ClassifierDefinition::MultiClass => {
            let mut n = vec![ID_CORRECT.into(), ID_INCORRECT_HIGH.into(), ID_INCORRECT.into()];
            if per_dataset_ood {
                n.extend(ood_datasets.iter().map(|d| format!("OOD:{d}")));
            } else {
                n.push("OOD".into());
            }
            n
        }
        ClassifierDefinition::IdCorrectVsRest => vec![ID_CORRECT.into(), "rest".into()],
        ClassifierDefinition::IdVsOod => vec!["ID".into(), "OOD".into()],
    };
    let labels = categories
        .iter()
        .map(|c| {
            Ok(match (definition, c) {
                (ClassifierDefinition::MultiClass, IdCategory::IdCorrect) => 0,
                (ClassifierDefinition::MultiClass, IdCategory::IdIncorrectHigh) => 1,
                (ClassifierDefinition::MultiClass, IdCategory::IdIncorrect) => 2,
                (ClassifierDefinition::MultiClass, IdCategory::Ood(name)) => {
                    if per_dataset_ood {
                        3 + ood_datasets
                            .iter()
                            .position(|d| d == name)
                            .ok_or_else(|| Error::invalid(format!("unknown OOD dataset {name}")))?
                    } else {
                        3
                    }
                }
                (ClassifierDefinition::IdCorrectVsRest, c) => usize::from(*c != IdCategory::IdCorrect),
                (ClassifierDefinition::IdVsOod, c) => usize::from(c.is_ood()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((labels, names))
}

/// Outcome of re-labelling rejected samples with the Multi-class head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reclassification {
    /// Percent of ID-incorrect* samples rejected and labelled OOD.
    pub pct_rejected_min: Option<f64>,
    /// Percent accuracy of OOD vs ID-incorrect* among rejected samples.
    pub accuracy: Option<f64>,
    /// F1 (percent) with OOD as the positive class.
    pub f1: Option<f64>,
}

/// Re-labels every rejected sample (score `>= threshold`) with the most
/// probable of ID-incorrect-high, ID-incorrect and OOD. `probas` rows are
/// Multi-class head outputs; columns 3.. are summed into P(OOD).
pub fn min_rejection_reclassify(probas: &Matrix, categories: &[IdCategory], scores: &[f64], threshold: f64) -> Result<Reclassification> {
    if probas.cols() < 4 {
        return Err(Error::invalid("reclassification needs a Multi-class head"));
    }
    if probas.rows() != categories.len() || scores.len() != categories.len() {
        return Err(Error::DimensionMismatch {
            expected: categories.len(),
            actual: probas.rows().min(scores.len()),
        });
    }
    let (mut n_incorrect, mut min_hits) = (0usize, 0usize);
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (i, c) in categories.iter().enumerate() {
        if c.is_incorrect() {
            n_incorrect += 1;
        }
        if scores[i] < threshold {
            continue;
        }
        let p = probas.row(i);
        let (high, inc) = (p[1], p[2]);
        let ood: f64 = p[3..].iter().sum();
        let labelled_ood = argmax(&[high, inc, ood]) == 2;
        if c.is_incorrect() && labelled_ood {
            min_hits += 1;
        }
        if c.is_incorrect() || c.is_ood() {
            let predicted_ood = ood > high + inc;
            match (c.is_ood(), predicted_ood) {
                (true, true) => tp += 1,
                (true, false) => fn_ += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
            }
        }
    }
    let pct = |num: usize, den: usize| (den > 0).then(|| 100.0 * num as f64 / den as f64);
    Ok(Reclassification {
        pct_rejected_min: pct(min_hits, n_incorrect),
        accuracy: pct(tp + tn, tp + tn + fp + fn_),
        f1: pct(2 * tp, 2 * tp + fp + fn_),
    })
}
