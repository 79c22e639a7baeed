//! Train-score-ROC pipeline for one reference setting, and the grid over all
//! of them.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{classifier_labels, min_rejection_reclassify, ood_names, roc, tpr_at_fpr, ClassifierDefinition, IdCategory, OperatingPoint, Reclassification, ReferenceSetting, RocCurve};
use crate::data::{FeatureStore, Split};
use crate::error::{Error, Result};
use crate::forest::{cood_score, train_forest, RandomForestModel, TrainConfig, TrainingData};
use crate::math::Matrix;
use crate::measures::{measure_names, Measure, MeasureTable};

pub const DEFAULT_TARGET_FPR: f64 = 0.01;

/// Column headers of the grid table, in order.
pub const GRID_HEADERS: [&str; 10] = [
    "Classifier definition",
    "Exclude incorrect from ROC",
    "ROC truth",
    "Multi-class score",
    "AUROC",
    "TPR @1%FPR",
    "% ID-incorrect* rejected",
    "% ID-incorrect* rejected - min",
    "OOD vs ID-incorrect* accuracy",
    "OOD vs ID-incorrect* F1",
];

/// Measure rows of the evaluated samples joined with their categories and
/// splits.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalData {
    pub sample_ids: Vec<String>,
    pub x: Matrix,
    pub categories: Vec<IdCategory>,
    pub splits: Vec<Split>,
}

impl EvalData {
    /// `store_categories` holds one category per store record.
    pub fn new(store: &FeatureStore, table: &MeasureTable, store_categories: &[IdCategory]) -> Result<Self> {
        if store_categories.len() != store.len() {
            return Err(Error::DimensionMismatch {
                expected: store.len(),
                actual: store_categories.len(),
            });
        }
        let by_id: BTreeMap<&str, usize> = store
            .records()
            .iter()
            .enumerate()
            .map(|(i, r)| (r.sample_id.as_str(), i))
            .collect();
        let mut categories = Vec::with_capacity(table.len());
        let mut splits = Vec::with_capacity(table.len());
        for id in &table.sample_ids {
            let &i = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::invalid(alloc::format!("measures row {id} not in store")))?;
            let split = store.records()[i].split;
            if split == Split::MeasureTrain {
                return Err(Error::invalid(alloc::format!("measures row {id} is a measure-train sample")));
            }
            categories.push(store_categories[i].clone());
            splits.push(split);
        }
        Ok(Self {
            sample_ids: table.sample_ids.clone(),
            x: table.matrix(),
            categories,
            splits,
        })
    }

    pub fn rows(&self, split: Split) -> Vec<usize> {
        (0..self.splits.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn categories_of(&self, rows: &[usize]) -> Vec<IdCategory> {
        rows.iter().map(|&i| self.categories[i].clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdSource {
    /// Operating point chosen on ood-val itself.
    #[default]
    Validation,
    /// Operating point chosen on out-of-bag scores of ood-train.
    Training,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub target_fpr: f64,
    pub train: TrainConfig,
    /// One OOD output per dataset in the Multi-class head.
    pub per_dataset_ood: bool,
    pub threshold_source: ThresholdSource,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            target_fpr: DEFAULT_TARGET_FPR,
            train: TrainConfig::default(),
            per_dataset_ood: false,
            threshold_source: ThresholdSource::Validation,
        }
    }
}

/// Trains the combiner for one classifier definition on ood-train.
pub fn train_classifier<T>(data: &EvalData, definition: ClassifierDefinition, config: &GridConfig, trainer: &T) -> Result<RandomForestModel>
where
    T: Fn(&TrainingData<'_>, &TrainConfig) -> Result<RandomForestModel>,
{
    let rows = data.rows(Split::OodTrain);
    let cats = data.categories_of(&rows);
    let datasets = ood_names(&data.categories);
    let (labels, names) = classifier_labels(definition, &cats, config.per_dataset_ood, &datasets)?;
    let x = data.x.select_rows(&rows);
    let features: Vec<String> = measure_names().iter().map(|s| s.to_string()).collect();
    trainer(
        &TrainingData {
            x: &x,
            labels: &labels,
            class_names: &names,
            feature_names: &features,
        },
        &config.train,
    )
    .map_err(|e| e.for_setting(definition.label()))
}

/// FPR and TPR when rejecting scores `>= threshold`.
pub fn rates_at(scores: &[f64], labels: &[Option<bool>], threshold: f64) -> (f64, f64) {
    let (mut pos, mut neg, mut tp, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for (s, l) in scores.iter().zip(labels) {
        match l {
            Some(true) => {
                pos += 1;
                tp += usize::from(*s >= threshold);
            }
            Some(false) => {
                neg += 1;
                fp += usize::from(*s >= threshold);
            }
            None => {}
        }
    }
    let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (rate(fp, neg), rate(tp, pos))
}

/// ROC over the labelled entries only.
pub fn roc_labelled(scores: &[f64], labels: &[Option<bool>]) -> Result<RocCurve> {
    let (s, t): (Vec<f64>, Vec<bool>) = scores
        .iter()
        .zip(labels)
        .filter_map(|(s, l)| l.map(|l| (*s, l)))
        .unzip();
    roc(&s, &t)
}

/// Everything computed for one setting on ood-val.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingOutcome {
    pub setting: ReferenceSetting,
    pub curve: RocCurve,
    pub operating: OperatingPoint,
    /// ood-val row indices into [`EvalData`] and their COOD scores.
    pub rows: Vec<usize>,
    pub scores: Vec<f64>,
    pub probas: Matrix,
    pub pct_incorrect_rejected: Option<f64>,
    /// Multi-class only.
    pub reclassification: Option<Reclassification>,
}

pub fn evaluate_setting(data: &EvalData, model: &RandomForestModel, setting: &ReferenceSetting, config: &GridConfig) -> Result<SettingOutcome> {
    let run = || -> Result<SettingOutcome> {
        setting.validate()?;
        let rows = data.rows(Split::OodVal);
        let cats = data.categories_of(&rows);
        let probas = model.predict_batch(&data.x.select_rows(&rows));
        let scores = probas
            .iter_rows()
            .map(|p| cood_score(p, setting.definition, setting.score))
            .collect::<Result<Vec<f64>>>()?;
        let labels: Vec<Option<bool>> = cats.iter().map(|c| setting.roc_label(c)).collect();
        let curve = roc_labelled(&scores, &labels)?;
        let operating = match config.threshold_source {
            ThresholdSource::Validation => tpr_at_fpr(&curve, config.target_fpr),
            ThresholdSource::Training => {
                let train_rows = data.rows(Split::OodTrain);
                let train_probas = match model.oob_proba() {
                    Some(m) if m.rows() == train_rows.len() => m.clone(),
                    _ => model.predict_batch(&data.x.select_rows(&train_rows)),
                };
                let train_scores = train_probas
                    .iter_rows()
                    .map(|p| cood_score(p, setting.definition, setting.score))
                    .collect::<Result<Vec<f64>>>()?;
                let train_labels: Vec<Option<bool>> = train_rows
                    .iter()
                    .map(|&i| setting.roc_label(&data.categories[i]))
                    .collect();
                let threshold = tpr_at_fpr(&roc_labelled(&train_scores, &train_labels)?, config.target_fpr).threshold;
                let (fpr, tpr) = rates_at(&scores, &labels, threshold);
                OperatingPoint { threshold, fpr, tpr }
            }
        };
        let incorrect: Vec<f64> = scores
            .iter()
            .zip(&cats)
            .filter(|(_, c)| c.is_incorrect())
            .map(|(s, _)| *s)
            .collect();
        let pct_incorrect_rejected = super::rejected_fraction(&incorrect, operating.threshold).map(|f| 100.0 * f);
        let reclassification = if setting.definition == ClassifierDefinition::MultiClass {
            Some(min_rejection_reclassify(&probas, &cats, &scores, operating.threshold)?)
        } else {
            None
        };
        Ok(SettingOutcome {
            setting: *setting,
            curve,
            operating,
            rows,
            scores,
            probas,
            pct_incorrect_rejected,
            reclassification,
        })
    };
    run().map_err(|e| e.for_setting(setting.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub setting: ReferenceSetting,
    /// Percent.
    pub auroc: f64,
    /// Percent.
    pub tpr: f64,
    pub pct_incorrect_rejected: Option<f64>,
    pub pct_incorrect_rejected_min: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
}

impl GridRow {
    pub fn from_outcome(o: &SettingOutcome) -> Self {
        let r = o.reclassification;
        Self {
            setting: o.setting,
            auroc: 100.0 * o.curve.auroc,
            tpr: 100.0 * o.operating.tpr,
            pct_incorrect_rejected: o.pct_incorrect_rejected,
            // Binary heads cannot re-label, so the minimum is the raw rate.
            pct_incorrect_rejected_min: match r {
                Some(r) => r.pct_rejected_min,
                None => o.pct_incorrect_rejected,
            },
            accuracy: r.and_then(|r| r.accuracy),
            f1: r.and_then(|r| r.f1),
        }
    }

    /// Cell texts in [`GRID_HEADERS`] order; `None` marks a blank cell.
    pub fn cells(&self, decimals: usize) -> [Option<String>; 10] {
        let num = |v: f64| alloc::format!("{v:.decimals$}");
        let s = &self.setting;
        [
            Some(s.definition.label().into()),
            Some(super::yes_no(s.exclude_incorrect).into()),
            Some(s.truth.label().into()),
            Some(s.score.label().into()),
            Some(num(self.auroc)),
            Some(num(self.tpr)),
            self.pct_incorrect_rejected.map(num),
            self.pct_incorrect_rejected_min.map(num),
            self.accuracy.map(num),
            self.f1.map(num),
        ]
    }
}

/// Runs every setting, training one combiner per classifier definition and
/// reusing it across the settings that share the definition.
pub fn run_grid_with<T>(data: &EvalData, settings: &[ReferenceSetting], config: &GridConfig, trainer: &T) -> Result<Vec<SettingOutcome>>
where
    T: Fn(&TrainingData<'_>, &TrainConfig) -> Result<RandomForestModel>,
{
    let mut models: BTreeMap<ClassifierDefinition, RandomForestModel> = BTreeMap::new();
    let mut out = Vec::with_capacity(settings.len());
    for s in settings {
        if !models.contains_key(&s.definition) {
            models.insert(s.definition, train_classifier(data, s.definition, config, trainer)?);
        }
        out.push(evaluate_setting(data, &models[&s.definition], s, config)?);
    }
    Ok(out)
}

pub fn run_grid(data: &EvalData, settings: &[ReferenceSetting], config: &GridConfig) -> Result<Vec<GridRow>> {
    Ok(run_grid_with(data, settings, config, &train_forest)?
        .iter()
        .map(GridRow::from_outcome)
        .collect())
}

/// Per-measure sign so that larger means more OOD: `true` where the raw
/// measure separates `labels` with AUROC below 0.5 and must be negated.
pub fn orient_measures(x: &Matrix, labels: &[Option<bool>]) -> Result<Vec<bool>> {
    (0..x.cols())
        .map(|j| {
            let col: Vec<f64> = x.iter_rows().map(|r| r[j]).collect();
            Ok(roc_labelled(&col, labels)?.auroc < 0.5)
        })
        .collect()
}

pub fn oriented(value: f64, flip: bool) -> f64 {
    if flip {
        -value
    } else {
        value
    }
}

/// TPR at `target_fpr` with ID-correct as negatives and the OOD samples of
/// `dataset` (all OOD when `None`) as positives. Other samples are ignored.
pub fn ood_detection(scores: &[f64], categories: &[IdCategory], dataset: Option<&str>, target_fpr: f64) -> Result<OperatingPoint> {
    let labels = detection_labels(categories, dataset);
    Ok(tpr_at_fpr(&roc_labelled(scores, &labels)?, target_fpr))
}

pub fn detection_labels(categories: &[IdCategory], dataset: Option<&str>) -> Vec<Option<bool>> {
    categories
        .iter()
        .map(|c| match c {
            IdCategory::IdCorrect => Some(false),
            IdCategory::Ood(n) if dataset.map_or(true, |d| d == n) => Some(true),
            _ => None,
        })
        .collect()
}

/// Detection rates of one OOD group (or all OOD when `dataset` is `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub dataset: Option<String>,
    pub count: usize,
    /// TPR at the target FPR on the group's own curve.
    pub cood_tpr: f64,
    pub best_measure: &'static str,
    pub best_measure_tpr: f64,
    /// Fraction of the group rejected at the pooled COOD operating point.
    pub rejected_at_pooled: Option<f64>,
}

/// COOD against every individual measure on ood-val, pooled and per OOD
/// dataset. Measures are sign-oriented on ood-train first.
pub fn detection_comparison(data: &EvalData, outcome: &SettingOutcome, target_fpr: f64) -> Result<Vec<DetectionRow>> {
    let train_rows = data.rows(Split::OodTrain);
    let flips = orient_measures(
        &data.x.select_rows(&train_rows),
        &detection_labels(&data.categories_of(&train_rows), None),
    )?;
    let cats = data.categories_of(&outcome.rows);
    let x = data.x.select_rows(&outcome.rows);
    let columns: Vec<Vec<f64>> = (0..x.cols())
        .map(|j| x.iter_rows().map(|r| oriented(r[j], flips[j])).collect())
        .collect();
    let pooled = ood_detection(&outcome.scores, &cats, None, target_fpr)?.threshold;
    let mut groups: Vec<Option<String>> = alloc::vec![None];
    groups.extend(ood_names(&cats).into_iter().map(Some));
    groups
        .into_iter()
        .map(|g| {
            let name = g.as_deref();
            let cood_tpr = ood_detection(&outcome.scores, &cats, name, target_fpr)?.tpr;
            let mut best = (Measure::ALL[0].name(), f64::NEG_INFINITY);
            for (m, col) in Measure::ALL.iter().zip(&columns) {
                let tpr = ood_detection(col, &cats, name, target_fpr)?.tpr;
                if tpr > best.1 {
                    best = (m.name(), tpr);
                }
            }
            let members: Vec<f64> = outcome
                .scores
                .iter()
                .zip(&cats)
                .filter(|(_, c)| match (c, name) {
                    (IdCategory::Ood(n), Some(d)) => n == d,
                    (IdCategory::Ood(_), None) => true,
                    _ => false,
                })
                .map(|(s, _)| *s)
                .collect();
            Ok(DetectionRow {
                count: members.len(),
                rejected_at_pooled: super::rejected_fraction(&members, pooled),
                dataset: g,
                cood_tpr,
                best_measure: best.0,
                best_measure_tpr: best.1,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_at_threshold() {
        let (fpr, tpr) = rates_at(&[0.9, 0.1, 0.6, 0.4, 0.7], &[Some(true), Some(true), Some(false), Some(false), None], 0.5);
        assert_eq!((fpr, tpr), (0.5, 0.5));
    }

    #[test]
    fn detection_label_filter() {
        let cats = [
            IdCategory::IdCorrect,
            IdCategory::IdIncorrect,
            IdCategory::Ood("a".into()),
            IdCategory::Ood("b".into()),
        ];
        assert_eq!(detection_labels(&cats, None), [Some(false), None, Some(true), Some(true)]);
        assert_eq!(detection_labels(&cats, Some("b")), [Some(false), None, None, Some(true)]);
    }

    #[test]
    fn orientation_flips_inverted_measures() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [2.0, -1.0], [3.0, -2.0]]).unwrap();
        let flips = orient_measures(&x, &[Some(false), Some(true), Some(true)]).unwrap();
        assert_eq!(flips, [false, true]);
    }
}
