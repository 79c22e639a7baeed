//! Pipeline configuration: a JSON file plus flat command-line overrides.

use std::path::{Path, PathBuf};

use cood_core::eval::{CategoryConfig, ClassifierDefinition, GridConfig, ReferenceSetting, RocTruth, ScoreVariant, ThresholdSource};
use cood_core::forest::TrainConfig;
use cood_core::knn::IndexKind;
use cood_core::measures::MeasureConfig;
use cood_core::seed;
use cood_core::synth::{OodMode, SyntheticConfig};
use serde::{Deserialize, Serialize};

use crate::error::{read_file, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexChoice {
    Flat,
    Ivf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureSection {
    pub k: usize,
    pub pca_components: usize,
    pub temperature: f64,
    pub index: IndexChoice,
    pub nlist: usize,
    pub nprobe: usize,
    pub shift_distances: bool,
    pub global_fre_variance: f64,
    pub global_fre_max_components: usize,
    pub class_fre_max_components: usize,
}

impl Default for MeasureSection {
    fn default() -> Self {
        let m = MeasureConfig::default();
        Self {
            k: m.k,
            pca_components: m.pca_components,
            temperature: m.temperature,
            index: IndexChoice::Ivf,
            nlist: cood_core::knn::DEFAULT_NLIST,
            nprobe: cood_core::knn::DEFAULT_NPROBE,
            shift_distances: m.shift_distances,
            global_fre_variance: m.global_fre_variance,
            global_fre_max_components: m.global_fre_max_components,
            class_fre_max_components: m.class_fre_max_components,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
    pub bootstrap: bool,
}

impl Default for ForestSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            n_trees: t.n_trees,
            max_depth: t.max_depth,
            min_samples_split: t.min_samples_split,
            min_samples_leaf: t.min_samples_leaf,
            features_per_split: t.features_per_split,
            bootstrap: t.bootstrap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdChoice {
    Validation,
    Training,
}

/// The active reference setting, in the labels used by the report tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SettingSection {
    pub definition: String,
    pub exclude_incorrect: bool,
    pub roc_truth: String,
    pub score: String,
}

impl Default for SettingSection {
    fn default() -> Self {
        let s = ReferenceSetting::default();
        Self {
            definition: s.definition.label().into(),
            exclude_incorrect: s.exclude_incorrect,
            roc_truth: s.truth.label().into(),
            score: s.score.label().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub prob_threshold: f64,
    pub td_threshold: f64,
    pub target_fpr: f64,
    pub threshold_source: ThresholdChoice,
    pub per_dataset_ood: bool,
    pub setting: SettingSection,
}

impl Default for EvalSection {
    fn default() -> Self {
        let c = CategoryConfig::default();
        Self {
            prob_threshold: c.prob_threshold,
            td_threshold: c.td_threshold,
            target_fpr: cood_core::eval::DEFAULT_TARGET_FPR,
            threshold_source: ThresholdChoice::Validation,
            per_dataset_ood: false,
            setting: SettingSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapSection {
    pub n_mc: usize,
    pub background: usize,
    /// Number of ood-val samples explained.
    pub samples: usize,
}

impl Default for ShapSection {
    fn default() -> Self {
        Self {
            n_mc: cood_core::forest::DEFAULT_N_MC,
            background: cood_core::forest::DEFAULT_BACKGROUND,
            samples: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodModeSection {
    pub name: String,
    pub displacement: f64,
    pub n_classes: usize,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_id_classes: usize,
    pub samples_per_class: Vec<usize>,
    pub feature_dim: usize,
    pub hierarchy_depth: usize,
    pub branching: usize,
    pub group_offset: f64,
    pub leaf_offset: f64,
    pub noise_sigma: f64,
    pub measure_train_fraction: f64,
    pub split_ratio: f64,
    pub ood_modes: Vec<OodModeSection>,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SyntheticConfig::default();
        Self {
            n_id_classes: s.n_id_classes,
            samples_per_class: s.samples_per_class,
            feature_dim: s.feature_dim,
            hierarchy_depth: s.hierarchy_depth,
            branching: s.branching,
            group_offset: s.group_offset,
            leaf_offset: s.leaf_offset,
            noise_sigma: s.noise_sigma,
            measure_train_fraction: s.measure_train_fraction,
            split_ratio: s.split_ratio,
            ood_modes: s
                .ood_modes
                .into_iter()
                .map(|m| OodModeSection {
                    name: m.name,
                    displacement: m.displacement,
                    n_classes: m.n_classes,
                    n_samples: m.n_samples,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Store directory; defaults to `<out>/store`.
    pub store: Option<PathBuf>,
    /// Taxonomy file; defaults to `<out>/taxonomy.json`.
    pub taxonomy: Option<PathBuf>,
    /// Master seed; every stage seed is derived from it by name.
    pub seed: u64,
    /// When set, ood-train / ood-val are re-drawn from the store with this ratio.
    pub split_ratio: Option<f64>,
    pub measures: MeasureSection,
    pub forest: ForestSection,
    pub eval: EvalSection,
    pub shap: ShapSection,
    pub synth: SynthSection,
    /// Decimals in markdown tables.
    pub decimals: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            store: None,
            taxonomy: None,
            seed: 0,
            split_ratio: None,
            measures: MeasureSection::default(),
            forest: ForestSection::default(),
            eval: EvalSection::default(),
            shap: ShapSection::default(),
            synth: SynthSection::default(),
            decimals: 1,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        serde_json::from_slice(&read_file(path)?).map_err(|e| CliError::json(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises") + "\n"
    }

    pub fn store_dir(&self, out: &Path) -> PathBuf {
        self.store.clone().unwrap_or_else(|| out.join("store"))
    }

    pub fn taxonomy_path(&self, out: &Path) -> PathBuf {
        self.taxonomy.clone().unwrap_or_else(|| out.join("taxonomy.json"))
    }

    pub fn stage_seed(&self, name: &str) -> u64 {
        seed::derive(self.seed, name)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.measures;
        if m.k < 2 {
            return Err(usage("k must be at least 2"));
        }
        if m.pca_components == 0 {
            return Err(usage("pca_components must be positive"));
        }
        if !(m.temperature > 0.0 && m.temperature.is_finite()) {
            return Err(usage("temperature must be positive"));
        }
        if m.index == IndexChoice::Ivf && (m.nlist == 0 || m.nprobe == 0 || m.nprobe > m.nlist) {
            return Err(usage("IVF needs 1 <= nprobe <= nlist"));
        }
        if !(m.global_fre_variance > 0.0 && m.global_fre_variance <= 1.0) {
            return Err(usage("global_fre_variance must lie in (0, 1]"));
        }
        let f = &self.forest;
        if f.n_trees == 0 || f.features_per_split == 0 || f.features_per_split > cood_core::measures::MEASURE_COUNT {
            return Err(usage("n_trees must be positive and features_per_split within 1..=19"));
        }
        if f.min_samples_split < 2 || f.min_samples_leaf == 0 || f.max_depth == Some(0) {
            return Err(usage("min_samples_split >= 2, min_samples_leaf >= 1, max_depth >= 1 required"));
        }
        let e = &self.eval;
        if !(e.target_fpr > 0.0 && e.target_fpr < 1.0) {
            return Err(usage("target_fpr must lie in (0, 1)"));
        }
        if !(e.prob_threshold >= 0.0 && e.prob_threshold <= 1.0 && e.td_threshold >= 0.0) {
            return Err(usage("prob_threshold must lie in [0, 1] and td_threshold be non-negative"));
        }
        self.setting()?;
        if let Some(r) = self.split_ratio {
            if !(r > 0.0 && r < 1.0) {
                return Err(usage("split_ratio must lie in (0, 1)"));
            }
        }
        if self.shap.n_mc == 0 || self.shap.background == 0 || self.shap.samples == 0 {
            return Err(usage("shap n_mc, background and samples must be positive"));
        }
        Ok(())
    }

    pub fn measure_config(&self) -> MeasureConfig {
        let m = &self.measures;
        MeasureConfig {
            k: m.k,
            pca_components: m.pca_components,
            temperature: m.temperature,
            index: match m.index {
                IndexChoice::Flat => IndexKind::Flat,
                IndexChoice::Ivf => IndexKind::Ivf {
                    nlist: m.nlist,
                    nprobe: m.nprobe,
                },
            },
            kmeans_seed: self.stage_seed(seed::KMEANS),
            global_fre_variance: m.global_fre_variance,
            global_fre_max_components: m.global_fre_max_components,
            class_fre_max_components: m.class_fre_max_components,
            shift_distances: m.shift_distances,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let f = &self.forest;
        TrainConfig {
            n_trees: f.n_trees,
            max_depth: f.max_depth,
            min_samples_split: f.min_samples_split,
            min_samples_leaf: f.min_samples_leaf,
            features_per_split: f.features_per_split,
            bootstrap: f.bootstrap,
            seed: self.stage_seed(seed::FOREST),
        }
    }

    pub fn category_config(&self) -> CategoryConfig {
        CategoryConfig {
            prob_threshold: self.eval.prob_threshold,
            td_threshold: self.eval.td_threshold,
        }
    }

    pub fn grid_config(&self) -> GridConfig {
        GridConfig {
            target_fpr: self.eval.target_fpr,
            train: self.train_config(),
            per_dataset_ood: self.eval.per_dataset_ood,
            threshold_source: match self.eval.threshold_source {
                ThresholdChoice::Validation => ThresholdSource::Validation,
                ThresholdChoice::Training => ThresholdSource::Training,
            },
        }
    }

    pub fn setting(&self) -> Result<ReferenceSetting> {
        let s = &self.eval.setting;
        let setting = ReferenceSetting {
            definition: ClassifierDefinition::from_label(&s.definition)
                .ok_or_else(|| usage(format!("unknown classifier definition {:?}", s.definition)))?,
            exclude_incorrect: s.exclude_incorrect,
            truth: RocTruth::from_label(&s.roc_truth).ok_or_else(|| usage(format!("unknown ROC truth {:?}", s.roc_truth)))?,
            score: ScoreVariant::from_label(&s.score).ok_or_else(|| usage(format!("unknown score variant {:?}", s.score)))?,
        };
        setting.validate().map_err(|e| usage(e.to_string()))?;
        Ok(setting)
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        let s = &self.synth;
        SyntheticConfig {
            n_id_classes: s.n_id_classes,
            samples_per_class: s.samples_per_class.clone(),
            feature_dim: s.feature_dim,
            hierarchy_depth: s.hierarchy_depth,
            branching: s.branching,
            group_offset: s.group_offset,
            leaf_offset: s.leaf_offset,
            ood_modes: s
                .ood_modes
                .iter()
                .map(|m| OodMode {
                    name: m.name.clone(),
                    displacement: m.displacement,
                    n_classes: m.n_classes,
                    n_samples: m.n_samples,
                })
                .collect(),
            noise_sigma: s.noise_sigma,
            measure_train_fraction: s.measure_train_fraction,
            split_ratio: s.split_ratio,
            seed: self.stage_seed(seed::SYNTH),
        }
    }
}

/// Parses `name:displacement:classes:samples`.
pub fn parse_ood_mode(s: &str) -> std::result::Result<OodModeSection, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 4 {
        return Err(format!("expected name:displacement:classes:samples, got {s:?}"));
    }
    let num = |i: usize| parts[i].parse::<f64>().map_err(|e| format!("{}: {e}", parts[i]));
    let count = |i: usize| parts[i].parse::<usize>().map_err(|e| format!("{}: {e}", parts[i]));
    Ok(OodModeSection {
        name: parts[0].to_string(),
        displacement: num(1)?,
        n_classes: count(2)?,
        n_samples: count(3)?,
    })
}
