use cood_core::eval::{
    assign_categories, detection_comparison, enumerate_settings, run_grid, run_grid_with, CategoryConfig, ClassifierDefinition, EvalData, GridConfig, GridRow, RocTruth,
    ThresholdSource,
};
use cood_core::forest::{train_forest, TrainConfig};
use cood_core::measures::{compute_all, MeasureConfig, MeasureContext};
use cood_core::synth::{generate_synthetic, SyntheticConfig};

fn eval_data(seed: u64) -> EvalData {
    let ds = generate_synthetic(&SyntheticConfig {
        samples_per_class: vec![200],
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let ctx = MeasureContext::fit(&ds.store, ds.taxonomy.clone(), MeasureConfig::default()).unwrap();
    let table = compute_all(&ds.store, &ctx).unwrap();
    let cats = assign_categories(&ds.store, &ds.taxonomy, &CategoryConfig::default()).unwrap();
    EvalData::new(&ds.store, &table, &cats).unwrap()
}

fn quick() -> GridConfig {
    GridConfig {
        train: TrainConfig {
            n_trees: 30,
            ..TrainConfig::default()
        },
        ..GridConfig::default()
    }
}

#[test]
fn grid_structure_test() {
    grid_structure();
}

pub fn grid_structure() {
    let data = eval_data(0);
    let rows = run_grid(&data, &enumerate_settings(), &quick()).unwrap();
    assert_eq!(rows.len(), 16);
    let find = |r: &GridRow, truth: RocTruth| {
        rows.iter()
            .find(|o| o.setting.definition == r.setting.definition && o.setting.score == r.setting.score && o.setting.exclude_incorrect && o.setting.truth == truth)
            .unwrap()
    };
    for r in rows.iter().filter(|r| r.setting.exclude_incorrect) {
        let (a, b) = (find(r, RocTruth::IdVsOod), find(r, RocTruth::NotIdCorrect));
        assert_eq!((a.auroc, a.tpr), (b.auroc, b.tpr), "{}", r.setting);
    }
    for r in &rows {
        let (raw, min) = (r.pct_incorrect_rejected.unwrap(), r.pct_incorrect_rejected_min.unwrap());
        assert!((0.0..=100.0).contains(&raw) && (0.0..=100.0).contains(&min));
        if r.setting.definition == ClassifierDefinition::MultiClass {
            assert!(min <= raw, "{}", r.setting);
            assert!(r.accuracy.is_some() && r.f1.is_some());
        } else {
            assert_eq!(min, raw);
            assert!(r.accuracy.is_none() && r.f1.is_none());
        }
    }
}

#[test]
fn training_threshold_and_detection_rows() {
    let data = eval_data(1);
    let settings = [Default::default()];
    let cfg = GridConfig {
        threshold_source: ThresholdSource::Training,
        ..quick()
    };
    let out = run_grid_with(&data, &settings, &cfg, &train_forest).unwrap();
    assert!(out[0].operating.threshold.is_finite());
    let det = detection_comparison(&data, &out[0], 0.01).unwrap();
    let names: Vec<Option<&str>> = det.iter().map(|d| d.dataset.as_deref()).collect();
    assert_eq!(names, [None, Some("far"), Some("mid"), Some("near")]);
    assert_eq!(det[0].count, det[1..].iter().map(|d| d.count).sum::<usize>());
    for d in &det {
        assert!((0.0..=1.0).contains(&d.cood_tpr) && (0.0..=1.0).contains(&d.best_measure_tpr));
    }
}
