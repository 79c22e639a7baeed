//! Command-line definition and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{parse_ood_mode, IndexChoice, OodModeSection, PipelineConfig, ThresholdChoice};
use crate::error::Result;
use crate::parallel;
use crate::pipeline::{Workspace, CONFIG_FILE};

#[derive(Debug, Parser)]
#[command(name = "cood", version, about = "Combined OOD scoring over precomputed features and logits")]
#[command(after_help = "Typical run:
  cood --out run synth
  cood --out run build-index
  cood --out run measures
  cood --out run train
  cood --out run eval
  cood --out run grid
  cood --out run shap
  cood --out run report")]
pub struct Cli {
    /// Output directory shared by all stages.
    #[arg(long, global = true, default_value = "cood-out")]
    pub out: PathBuf,

    /// JSON config. Defaults to <out>/config.json when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(flatten)]
    pub overrides: Overrides,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic store and taxonomy.
    Synth(SynthArgs),
    /// Fit PCA and the nearest-neighbour index on measure-train.
    BuildIndex,
    /// Compute the 19 measures for ood-train and ood-val.
    Measures,
    /// Train the combiner for the active setting.
    Train,
    /// Score ood-val and write the rejection table and ROC curve.
    Eval,
    /// Run all 16 reference settings.
    Grid,
    /// Shapley attribution of the measures.
    Shap,
    /// Render report.md and roc.svg.
    Report,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum YesNo {
    Yes,
    No,
}

impl From<YesNo> for bool {
    fn from(v: YesNo) -> bool {
        matches!(v, YesNo::Yes)
    }
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    #[arg(long, global = true)]
    pub taxonomy: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Re-draw ood-train / ood-val with this ood-train share.
    #[arg(long, global = true)]
    pub split_ratio: Option<f64>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub pca_components: Option<usize>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub index: Option<IndexArg>,
    #[arg(long, global = true)]
    pub nlist: Option<usize>,
    #[arg(long, global = true)]
    pub nprobe: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub shift_distances: Option<YesNo>,
    #[arg(long, global = true)]
    pub n_trees: Option<usize>,
    #[arg(long, global = true)]
    pub max_depth: Option<usize>,
    #[arg(long, global = true)]
    pub features_per_split: Option<usize>,
    #[arg(long, global = true)]
    pub min_samples_split: Option<usize>,
    #[arg(long, global = true)]
    pub min_samples_leaf: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub bootstrap: Option<YesNo>,
    #[arg(long, global = true)]
    pub prob_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub td_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub target_fpr: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub threshold_source: Option<ThresholdArg>,
    /// One OOD output class per OOD dataset.
    #[arg(long, global = true, value_enum)]
    pub per_dataset_ood: Option<YesNo>,
    /// "Multi-class", "ID-correct vs rest" or "ID vs OOD".
    #[arg(long, global = true)]
    pub definition: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub exclude_incorrect: Option<YesNo>,
    /// "ID vs OOD" or "not(ID-correct)".
    #[arg(long, global = true)]
    pub roc_truth: Option<String>,
    /// "ID-correct" or "ID".
    #[arg(long, global = true)]
    pub score: Option<String>,
    #[arg(long, global = true)]
    pub n_mc: Option<usize>,
    #[arg(long, global = true)]
    pub background: Option<usize>,
    #[arg(long, global = true)]
    pub shap_samples: Option<usize>,
    #[arg(long, global = true)]
    pub decimals: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IndexArg {
    Flat,
    Ivf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ThresholdArg {
    Validation,
    Training,
}

#[derive(Debug, Default, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_id_classes: Option<usize>,
    /// One value, or one per class, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub samples_per_class: Option<Vec<usize>>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub hierarchy_depth: Option<usize>,
    #[arg(long)]
    pub branching: Option<usize>,
    #[arg(long)]
    pub group_offset: Option<f64>,
    #[arg(long)]
    pub leaf_offset: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub measure_train_fraction: Option<f64>,
    /// ood-train share used by the generator.
    #[arg(long)]
    pub synth_split_ratio: Option<f64>,
    /// name:displacement:classes:samples; repeat to replace the defaults.
    #[arg(long, value_parser = parse_ood_mode)]
    pub ood_mode: Vec<OodModeSection>,
}

macro_rules! set {
    ($($src:expr => $dst:expr),* $(,)?) => {
        $(if let Some(v) = $src.clone() { $dst = v.into(); })*
    };
}

impl Overrides {
    pub fn apply(&self, c: &mut PipelineConfig) {
        if let Some(p) = &self.store {
            c.store = Some(p.clone());
        }
        if let Some(p) = &self.taxonomy {
            c.taxonomy = Some(p.clone());
        }
        if let Some(r) = self.split_ratio {
            c.split_ratio = Some(r);
        }
        if let Some(d) = self.max_depth {
            c.forest.max_depth = Some(d);
        }
        if let Some(i) = self.index {
            c.measures.index = match i {
                IndexArg::Flat => IndexChoice::Flat,
                IndexArg::Ivf => IndexChoice::Ivf,
            };
        }
        if let Some(t) = self.threshold_source {
            c.eval.threshold_source = match t {
                ThresholdArg::Validation => ThresholdChoice::Validation,
                ThresholdArg::Training => ThresholdChoice::Training,
            };
        }
        set! {
            self.seed => c.seed,
            self.k => c.measures.k,
            self.pca_components => c.measures.pca_components,
            self.temperature => c.measures.temperature,
            self.nlist => c.measures.nlist,
            self.nprobe => c.measures.nprobe,
            self.shift_distances => c.measures.shift_distances,
            self.n_trees => c.forest.n_trees,
            self.features_per_split => c.forest.features_per_split,
            self.min_samples_split => c.forest.min_samples_split,
            self.min_samples_leaf => c.forest.min_samples_leaf,
            self.bootstrap => c.forest.bootstrap,
            self.prob_threshold => c.eval.prob_threshold,
            self.td_threshold => c.eval.td_threshold,
            self.target_fpr => c.eval.target_fpr,
            self.per_dataset_ood => c.eval.per_dataset_ood,
            self.definition => c.eval.setting.definition,
            self.exclude_incorrect => c.eval.setting.exclude_incorrect,
            self.roc_truth => c.eval.setting.roc_truth,
            self.score => c.eval.setting.score,
            self.n_mc => c.shap.n_mc,
            self.background => c.shap.background,
            self.shap_samples => c.shap.samples,
            self.decimals => c.decimals,
        }
    }
}

impl SynthArgs {
    pub fn apply(&self, c: &mut PipelineConfig) {
        let s = &mut c.synth;
        set! {
            self.n_id_classes => s.n_id_classes,
            self.samples_per_class => s.samples_per_class,
            self.feature_dim => s.feature_dim,
            self.hierarchy_depth => s.hierarchy_depth,
            self.branching => s.branching,
            self.group_offset => s.group_offset,
            self.leaf_offset => s.leaf_offset,
            self.noise_sigma => s.noise_sigma,
            self.measure_train_fraction => s.measure_train_fraction,
            self.synth_split_ratio => s.split_ratio,
        }
        if !self.ood_mode.is_empty() {
            s.ood_modes = self.ood_mode.clone();
        }
    }
}

/// Resolves the configuration: explicit file, else `<out>/config.json`, else
/// defaults; then flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let saved = cli.out.join(CONFIG_FILE);
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None if saved.exists() => PipelineConfig::from_file(&saved)?,
        None => PipelineConfig::default(),
    };
    cli.overrides.apply(&mut config);
    if let Command::Synth(args) = &cli.command {
        args.apply(&mut config);
    }
    Ok(config)
}

/// Runs one subcommand and records the resolved config in `<out>/config.json`.
pub fn run(cli: &Cli) -> Result<String> {
    parallel::init_threads(cli.threads)?;
    let ws = Workspace::new(&cli.out, resolve_config(cli)?)?;
    let out = cli.out.display();
    let summary = match &cli.command {
        Command::Synth(_) => {
            ws.synth()?;
            format!("wrote store and taxonomy under {out}")
        }
        Command::BuildIndex => {
            ws.build_index()?;
            format!("wrote {out}/knn.bin")
        }
        Command::Measures => {
            let t = ws.measures()?;
            format!("wrote {} measure rows to {out}/measures.csv", t.len())
        }
        Command::Train => {
            let m = ws.train()?;
            let oob = m.oob_accuracy().map(|a| format!(", OOB accuracy {:.3}", a)).unwrap_or_default();
            format!("trained {} trees over {} classes{oob}", m.trees().len(), m.n_classes())
        }
        Command::Eval => {
            let o = ws.eval()?;
            format!("AUROC {:.4}, TPR {:.4} at FPR {:.4}; wrote {out}/rejection.md", o.curve.auroc, o.operating.tpr, o.operating.fpr)
        }
        Command::Grid => {
            let rows = ws.grid()?;
            format!("wrote {} settings to {out}/grid.md", rows.len())
        }
        Command::Shap => {
            ws.shap()?;
            format!("wrote {out}/shap.csv")
        }
        Command::Report => {
            ws.report()?;
            format!("wrote {out}/report.md and {out}/roc.svg")
        }
    };
    // Saved only after success so later stages inherit a working config.
    ws.save_config()?;
    Ok(summary)
}
