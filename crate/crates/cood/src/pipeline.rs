//! The eight pipeline stages. Each reads its inputs from the output
//! directory, writes its artifacts there and is deterministic for a fixed
//! configuration.

use std::path::{Path, PathBuf};

use cood_core::data::{split_dataset, FeatureStore, Split};
use cood_core::eval::{
    assign_categories, detection_comparison, enumerate_settings, evaluate_setting, rejection_table, roc_labelled, run_grid_with, tpr_at_fpr, train_classifier,
    ClassifierDefinition, EvalData, GridRow, SettingOutcome, GRID_HEADERS,
};
use cood_core::forest::{summarize_attributions, RandomForestModel};
use cood_core::measures::{measure_names, Measure, MeasureContext, MeasureTable, MeasureVector, KnnModel, MEASURE_COUNT};
use cood_core::seed;
use cood_core::synth::generate_synthetic;

use crate::config::PipelineConfig;
use crate::error::{read_file, write_file, CliError, Result};
use crate::parallel;
use crate::report::{self, Table, DETECTION_HEADERS, SHAP_HEADERS};
use crate::store::{read_store, taxonomy_file, write_store, write_taxonomy, MANIFEST_FILE};

pub const CONFIG_FILE: &str = "config.json";
pub const KNN_FILE: &str = "knn.bin";
pub const MEASURES_FILE: &str = "measures.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const ROC_FILE: &str = "roc.csv";
pub const REJECTION_CSV: &str = "rejection.csv";
pub const REJECTION_MD: &str = "rejection.md";
pub const DETECTION_CSV: &str = "detection.csv";
pub const GRID_CSV: &str = "grid.csv";
pub const GRID_MD: &str = "grid.md";
pub const SHAP_CSV: &str = "shap.csv";
pub const SHAP_MD: &str = "shap.md";
pub const REPORT_MD: &str = "report.md";
pub const ROC_SVG: &str = "roc.svg";
pub const FALLBACK_COLUMN: &str = "class_fre_fallback";

pub fn model_file(definition: ClassifierDefinition) -> String {
    let slug = match definition {
        ClassifierDefinition::MultiClass => "multi-class",
        ClassifierDefinition::IdCorrectVsRest => "id-correct-vs-rest",
        ClassifierDefinition::IdVsOod => "id-vs-ood",
    };
    format!("model-{slug}.bin")
}

/// An output directory and the resolved configuration for it.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub out: PathBuf,
    pub config: PipelineConfig,
}

fn require(path: &Path, producer: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact {
            path: path.to_path_buf(),
            producer,
        })
    }
}

impl Workspace {
    pub fn new(out: impl Into<PathBuf>, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { out: out.into(), config })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        write_file(&self.path(name), bytes)
    }

    pub fn save_config(&self) -> Result<()> {
        self.write(CONFIG_FILE, self.config.to_json())
    }

    fn markdown(&self, title: &str, body: &str) -> String {
        format!("# {title}\n\n{body}\n{}", report::config_block(&self.config.to_json()))
    }

    /// The store, re-split when the configuration asks for it.
    pub fn load_store(&self) -> Result<FeatureStore> {
        let dir = self.config.store_dir(&self.out);
        require(&dir.join(MANIFEST_FILE), "synth")?;
        let store = read_store(&dir)?;
        match self.config.split_ratio {
            Some(ratio) => {
                let assignment = split_dataset(&store, ratio, self.config.stage_seed(seed::SPLIT))?;
                Ok(store.with_splits(&assignment)?)
            }
            None => Ok(store),
        }
    }

    pub fn load_taxonomy(&self) -> Result<cood_core::taxonomy::TaxonTree> {
        let path = self.config.taxonomy_path(&self.out);
        require(&path, "synth")?;
        crate::store::load_taxonomy(&path)
    }

    pub fn load_knn(&self) -> Result<KnnModel> {
        let path = self.path(KNN_FILE);
        require(&path, "build-index")?;
        KnnModel::from_bytes(&read_file(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn load_measures(&self) -> Result<MeasureTable> {
        let path = self.path(MEASURES_FILE);
        require(&path, "measures")?;
        read_measures(&path)
    }

    pub fn load_model(&self, definition: ClassifierDefinition) -> Result<RandomForestModel> {
        let path = self.path(&model_file(definition));
        require(&path, "train")?;
        RandomForestModel::from_bytes(&read_file(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Measures joined with categories for every evaluated sample.
    pub fn eval_data(&self) -> Result<EvalData> {
        let store = self.load_store()?;
        let taxonomy = self.load_taxonomy()?;
        let table = self.load_measures()?;
        let cats = assign_categories(&store, &taxonomy, &self.config.category_config())?;
        Ok(EvalData::new(&store, &table, &cats)?)
    }

    // ---- stages ----

    pub fn synth(&self) -> Result<()> {
        let synth_cfg = self.config.synthetic_config();
        let ds = generate_synthetic(&synth_cfg)?;
        write_store(&ds.store, &self.config.store_dir(&self.out))?;
        write_taxonomy(&taxonomy_file(&ds.taxonomy_specs, &[]), &self.config.taxonomy_path(&self.out))
    }

    pub fn build_index(&self) -> Result<()> {
        let store = self.load_store()?;
        let knn = KnnModel::fit(&store, &self.config.measure_config())?;
        self.write(KNN_FILE, knn.to_bytes())
    }

    pub fn measures(&self) -> Result<MeasureTable> {
        let store = self.load_store()?;
        let taxonomy = self.load_taxonomy()?;
        let knn = self.load_knn()?;
        let ctx = MeasureContext::with_knn(&store, taxonomy, self.config.measure_config(), knn)?;
        let table = parallel::compute_measures(&store, &ctx)?;
        self.write(MEASURES_FILE, measures_csv(&table)?)?;
        Ok(table)
    }

    pub fn train(&self) -> Result<RandomForestModel> {
        let data = self.eval_data()?;
        let setting = self.config.setting()?;
        let model = train_classifier(&data, setting.definition, &self.config.grid_config(), &parallel::train_forest)?;
        self.write(&model_file(setting.definition), model.to_bytes())?;
        Ok(model)
    }

    pub fn eval(&self) -> Result<SettingOutcome> {
        let data = self.eval_data()?;
        let setting = self.config.setting()?;
        let model = self.load_model(setting.definition)?;
        let gc = self.config.grid_config();
        let outcome = evaluate_setting(&data, &model, &setting, &gc)?;
        let d = self.config.decimals;
        let cats = data.categories_of(&outcome.rows);

        let mut scores = Table::new(&["sample_id", "category", "cood"]);
        for (&r, s) in outcome.rows.iter().zip(&outcome.scores) {
            scores.push(vec![data.sample_ids[r].clone(), data.categories[r].to_string(), s.to_string()]);
        }
        self.write(SCORES_FILE, scores.to_csv()?)?;
        self.write(ROC_FILE, report::roc_table(&outcome.curve.points).to_csv()?)?;

        // Max(linear) baseline at its own operating point under the same ROC labels.
        let x = data.x.select_rows(&outcome.rows);
        let base_scores: Vec<f64> = x.iter_rows().map(|r| -r[Measure::MaxLinear.index()]).collect();
        let labels: Vec<Option<bool>> = cats.iter().map(|c| setting.roc_label(c)).collect();
        let base_op = tpr_at_fpr(&roc_labelled(&base_scores, &labels)?, gc.target_fpr);
        let cood_table = rejection_table(&outcome.scores, &cats, outcome.operating.threshold)?;
        let base_table = rejection_table(&base_scores, &cats, base_op.threshold)?;
        let rejection = report::rejection_table(&cood_table, &base_table, d);
        self.write(REJECTION_CSV, rejection.to_csv()?)?;

        let mut detection = Table::new(&DETECTION_HEADERS);
        for row in detection_comparison(&data, &outcome, gc.target_fpr)? {
            detection.push(vec![
                row.dataset.map(|n| format!("OOD:{n}")).unwrap_or_else(|| "all OOD".into()),
                row.count.to_string(),
                report::fixed(100.0 * row.cood_tpr, d),
                row.best_measure.to_string(),
                report::fixed(100.0 * row.best_measure_tpr, d),
                report::opt_fixed(row.rejected_at_pooled.map(|v| 100.0 * v), d),
            ]);
        }
        self.write(DETECTION_CSV, detection.to_csv()?)?;

        let body = format!(
            "{}\n\n{}\n{}",
            operating_summary(&outcome, &setting.to_string(), d),
            rejection.markdown(),
            detection.markdown()
        );
        self.write(REJECTION_MD, self.markdown("Rejection table", &body))?;
        Ok(outcome)
    }

    pub fn grid(&self) -> Result<Vec<GridRow>> {
        let data = self.eval_data()?;
        let outcomes = run_grid_with(&data, &enumerate_settings(), &self.config.grid_config(), &parallel::train_forest)?;
        let rows: Vec<GridRow> = outcomes.iter().map(GridRow::from_outcome).collect();
        let table = grid_table(&rows, self.config.decimals);
        self.write(GRID_CSV, table.to_csv()?)?;
        self.write(GRID_MD, self.markdown("Reference settings grid", &table.markdown()))?;
        Ok(rows)
    }

    pub fn shap(&self) -> Result<Table> {
        let data = self.eval_data()?;
        let setting = self.config.setting()?;
        let model = self.load_model(setting.definition)?;
        let sc = &self.config.shap;
        let train = data.rows(Split::OodTrain);
        let val = data.rows(Split::OodVal);
        let background = data.x.select_rows(&evenly_spaced(&train, sc.background));
        let samples = data.x.select_rows(&evenly_spaced(&val, sc.samples));
        let attrs = parallel::explain_rows(&model, &background, &samples, sc.n_mc, self.config.stage_seed(seed::SHAP))?;
        let features: Vec<String> = measure_names().iter().map(|s| s.to_string()).collect();
        let summary = summarize_attributions(&attrs, model.class_names(), &features)?;

        let mut table = Table::new(&SHAP_HEADERS);
        let mut push = |category: &str, ranking: Vec<(usize, f64)>| {
            for (j, v) in ranking {
                table.push(vec![features[j].clone(), category.to_string(), format!("{v:.6}")]);
            }
        };
        push("overall", summary.overall_ranking());
        for (c, name) in summary.categories.iter().enumerate() {
            push(name, summary.ranking(c));
        }
        self.write(SHAP_CSV, table.to_csv()?)?;

        let within = attrs
            .iter()
            .filter(|a| a.local_accuracy_gap().iter().zip(&a.standard_error).all(|(g, se)| g.abs() <= 3.0 * se + 1e-12))
            .count();
        let mut top = Table::new(&["rank", "measure", "mean |phi|"]);
        for (i, (j, v)) in summary.overall_ranking().into_iter().enumerate() {
            top.push(vec![(i + 1).to_string(), features[j].clone(), format!("{v:.4}")]);
        }
        let body = format!(
            "Model: {}. {} ood-val samples explained against {} ood-train background rows, {} permutations each; \
             {within} of them satisfy local accuracy within 3 standard errors.\n\n{}",
            setting.definition.label(),
            samples.rows(),
            background.rows(),
            sc.n_mc,
            top.markdown()
        );
        self.write(SHAP_MD, self.markdown("Measure attribution", &body))?;
        Ok(table)
    }

    /// Renders `report.md` and `roc.svg` from the eval outputs, adding the grid
    /// and attribution tables when those stages have run.
    pub fn report(&self) -> Result<String> {
        for f in [REJECTION_CSV, DETECTION_CSV, ROC_FILE] {
            require(&self.path(f), "eval")?;
        }
        let rejection = Table::read_csv(&self.path(REJECTION_CSV))?;
        let detection = Table::read_csv(&self.path(DETECTION_CSV))?;
        let roc = Table::read_csv(&self.path(ROC_FILE))?;
        let points = parse_roc(&roc, &self.path(ROC_FILE))?;
        let target = self.config.eval.target_fpr;
        let setting = self.config.setting()?;
        let svg = report::roc_svg(&points, (5.0 * target).min(1.0), target, &format!("COOD ROC ({setting})"));
        self.write(ROC_SVG, svg)?;

        let mut body = format!(
            "Active setting: {setting}. ROC curve: `{ROC_SVG}` (data in `{ROC_FILE}`), marker at {:.1}% FPR.\n\n\
             ## Rejection at the operating point\n\n{}\n## Detection per OOD set\n\n{}\n",
            100.0 * target,
            rejection.markdown(),
            detection.markdown()
        );
        body += "## Reference settings grid\n\n";
        body += &match self.path(GRID_CSV).exists() {
            true => Table::read_csv(&self.path(GRID_CSV))?.markdown(),
            false => "Not run (`cood grid`).\n".into(),
        };
        body += "\n## Measure attribution (overall)\n\n";
        body += &match self.path(SHAP_CSV).exists() {
            true => {
                let shap = Table::read_csv(&self.path(SHAP_CSV))?;
                let mut t = Table::new(&SHAP_HEADERS);
                shap.rows.iter().filter(|r| r[1] == "overall").for_each(|r| t.push(r.clone()));
                t.markdown()
            }
            false => "Not run (`cood shap`).\n".into(),
        };
        let md = self.markdown("COOD report", &body);
        self.write(REPORT_MD, &md)?;
        Ok(md)
    }
}

fn operating_summary(o: &SettingOutcome, setting: &str, d: usize) -> String {
    format!(
        "Setting: {setting}. AUROC {}%, threshold {:.6} (FPR {}%, TPR {}%).",
        report::fixed(100.0 * o.curve.auroc, d),
        o.operating.threshold,
        report::fixed(100.0 * o.operating.fpr, d + 1),
        report::fixed(100.0 * o.operating.tpr, d),
    )
}

pub fn grid_table(rows: &[GridRow], decimals: usize) -> Table {
    let mut t = Table::new(&GRID_HEADERS);
    for r in rows {
        t.push(r.cells(decimals).into_iter().map(Option::unwrap_or_default).collect());
    }
    t
}

/// `count` members spread evenly over `rows` (all of them when fewer).
pub fn evenly_spaced(rows: &[usize], count: usize) -> Vec<usize> {
    if count >= rows.len() {
        return rows.to_vec();
    }
    (0..count).map(|i| rows[i * rows.len() / count]).collect()
}

fn parse_roc(t: &Table, path: &Path) -> Result<Vec<(f64, f64)>> {
    t.rows
        .iter()
        .map(|r| {
            let f = |s: &str| s.parse::<f64>().map_err(|e| CliError::Data(format!("{}: {s:?}: {e}", path.display())));
            Ok((f(&r[0])?, f(&r[1])?))
        })
        .collect()
}

/// Measures table as CSV: `sample_id`, the 19 measure columns, the fallback
/// flag. Values use the shortest exact decimal form, so reading back is
/// lossless.
pub fn measures_csv(table: &MeasureTable) -> Result<Vec<u8>> {
    let mut headers = vec!["sample_id"];
    headers.extend(measure_names());
    headers.push(FALLBACK_COLUMN);
    let mut t = Table::new(&headers);
    for ((id, row), fb) in table.sample_ids.iter().zip(&table.rows).zip(&table.class_fre_fallback) {
        let mut cells = vec![id.clone()];
        cells.extend(row.to_array().iter().map(|v| v.to_string()));
        cells.push(fb.to_string());
        t.push(cells);
    }
    t.to_csv()
}

pub fn read_measures(path: &Path) -> Result<MeasureTable> {
    let t = Table::read_csv(path)?;
    let bad = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut expected = vec!["sample_id".to_string()];
    expected.extend(measure_names().iter().map(|s| s.to_string()));
    expected.push(FALLBACK_COLUMN.into());
    if t.headers != expected {
        return Err(bad("unexpected header".into()));
    }
    let mut table = MeasureTable {
        sample_ids: Vec::with_capacity(t.rows.len()),
        rows: Vec::with_capacity(t.rows.len()),
        class_fre_fallback: Vec::with_capacity(t.rows.len()),
    };
    for r in &t.rows {
        let mut values = [0.0; MEASURE_COUNT];
        for (v, cell) in values.iter_mut().zip(&r[1..=MEASURE_COUNT]) {
            *v = cell.parse().map_err(|e| bad(format!("sample {}: {cell:?}: {e}", r[0])))?;
        }
        table.sample_ids.push(r[0].clone());
        table.rows.push(MeasureVector::from_array(values));
        table.class_fre_fallback.push(
            r[MEASURE_COUNT + 1]
                .parse()
                .map_err(|e| bad(format!("sample {}: {e}", r[0])))?,
        );
    }
    Ok(table)
}
