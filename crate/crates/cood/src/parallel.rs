//! Rayon drivers. Each one produces exactly what the serial core function
//! produces: work items carry their own derived seeds and results are
//! collected in input order.

use cood_core::data::FeatureStore;
use cood_core::forest::{assemble_forest, grow_tree, RandomForestModel, ShapleyAttribution, ShapleyExplainer, TrainConfig, TrainingData};
use cood_core::math::Matrix;
use cood_core::measures::{collect_table, evaluation_rows, MeasureContext, MeasureTable};
use cood_core::seed;
use cood_core::Result;
use rayon::prelude::*;

use crate::error::CliError;

/// Caps the global rayon pool. Only the first call in a process takes effect.
pub fn init_threads(threads: Option<usize>) -> crate::error::Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // A pool that already exists (tests, repeated calls) is left as is.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parallel counterpart of `cood_core::measures::compute_all`.
pub fn compute_measures(store: &FeatureStore, context: &MeasureContext) -> Result<MeasureTable> {
    let rows = evaluation_rows(store);
    let results = rows
        .par_iter()
        .map(|&i| context.measure_record(store, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(collect_table(store, &rows, results))
}

/// Parallel counterpart of `cood_core::forest::train_forest`.
pub fn train_forest(data: &TrainingData<'_>, config: &TrainConfig) -> Result<RandomForestModel> {
    data.validate(config)?;
    let fits = (0..config.n_trees)
        .into_par_iter()
        .map(|i| grow_tree(data, config, i))
        .collect();
    assemble_forest(data, config, fits)
}

/// Explains every row of `x`; row `i` uses the `i`-th derived seed of `shap_seed`.
pub fn explain_rows(model: &RandomForestModel, background: &Matrix, x: &Matrix, n_mc: usize, shap_seed: u64) -> Result<Vec<ShapleyAttribution>> {
    let explainer = ShapleyExplainer::new(|v: &[f64]| model.predict_proba(v), background)?;
    (0..x.rows())
        .into_par_iter()
        .map(|i| explainer.explain(x.row(i), n_mc, seed::derive_indexed(shap_seed, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use cood_core::measures::{compute_all, MeasureConfig};
    use cood_core::synth::{generate_synthetic, SyntheticConfig};

    #[test]
    fn drivers_match_serial_core() {
        let ds = generate_synthetic(&SyntheticConfig {
            samples_per_class: vec![60],
            ood_modes: SyntheticConfig::default()
                .ood_modes
                .into_iter()
                .map(|mut m| {
                    m.n_samples = 60;
                    m
                })
                .collect(),
            ..SyntheticConfig::default()
        })
        .unwrap();
        let ctx = MeasureContext::fit(
            &ds.store,
            ds.taxonomy.clone(),
            MeasureConfig {
                k: 10,
                pca_components: 32,
                index: cood_core::knn::IndexKind::Flat,
                ..MeasureConfig::default()
            },
        )
        .unwrap();
        let table = compute_measures(&ds.store, &ctx).unwrap();
        assert_eq!(table, compute_all(&ds.store, &ctx).unwrap());

        let x = table.matrix();
        let mut d1: Vec<f64> = table.rows.iter().map(|r| r.dist_1st_nn).collect();
        let mid = cood_core::eval::median(&mut d1).unwrap();
        let labels: Vec<usize> = table.rows.iter().map(|r| usize::from(r.dist_1st_nn > mid)).collect();
        let names = cood_core::forest::numbered_features(19);
        let classes = vec!["a".to_string(), "b".to_string()];
        let data = TrainingData {
            x: &x,
            labels: &labels,
            class_names: &classes,
            feature_names: &names,
        };
        let cfg = TrainConfig {
            n_trees: 12,
            seed: 5,
            ..TrainConfig::default()
        };
        let par = train_forest(&data, &cfg).unwrap();
        let serial = cood_core::forest::train_forest(&data, &cfg).unwrap();
        assert_eq!(par.to_bytes(), serial.to_bytes());

        let bg = x.select_rows(&(0..16).collect::<Vec<_>>());
        let q = x.select_rows(&(16..20).collect::<Vec<_>>());
        let got = explain_rows(&par, &bg, &q, 16, 9).unwrap();
        let explainer = ShapleyExplainer::new(|v: &[f64]| serial.predict_proba(v), &bg).unwrap();
        for (i, a) in got.iter().enumerate() {
            assert_eq!(*a, explainer.explain(q.row(i), 16, seed::derive_indexed(9, i as u64)).unwrap());
        }
    }
}
