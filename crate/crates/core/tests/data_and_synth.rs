use std::collections::BTreeMap;

use cood_core::data::{split_dataset, DatasetManifest, FeatureStore, SampleRecord, SourceTag, Split, STORE_VERSION, OOD_LABEL};
use cood_core::eval::roc;
use cood_core::knn::IndexKind;
use cood_core::measures::{compute_all, MeasureConfig, MeasureContext};
use cood_core::synth::{generate_synthetic, OodMode, SyntheticConfig};

fn store_with_tags(tags: &[(&str, usize)]) -> FeatureStore {
    let mut records = Vec::new();
    for (tag, n) in tags {
        for i in 0..*n {
            let source = if *tag == "ID" { SourceTag::Id } else { SourceTag::Ood((*tag).into()) };
            records.push(SampleRecord {
                sample_id: format!("{tag}-{i}"),
                feature: vec![i as f32],
                logits: vec![0.0, 0.0],
                true_class: if source.is_id() { (i % 2) as u32 } else { OOD_LABEL },
                source,
                split: Split::OodTrain,
            });
        }
    }
    let manifest = DatasetManifest {
        version: STORE_VERSION,
        n_samples: records.len(),
        feature_dim: 1,
        n_classes: 2,
        class_names: vec!["a".into(), "b".into()],
    };
    FeatureStore::new(manifest, records).unwrap()
}

/// Second stratified splitter: per tag, the train count is the nearest
/// integer to `ratio * n` (halves rounded up).
fn oracle_counts(store: &FeatureStore, ratio: f64) -> BTreeMap<String, (usize, usize)> {
    let mut sizes: BTreeMap<String, usize> = BTreeMap::new();
    for r in store.records() {
        *sizes.entry(format!("{:?}", r.source)).or_default() += 1;
    }
    sizes
        .into_iter()
        .map(|(tag, n)| {
            let train = (ratio * n as f64 + 0.5).floor() as usize;
            (tag, (train, n - train))
        })
        .collect()
}

fn counts(store: &FeatureStore, splits: &[Split]) -> BTreeMap<String, (usize, usize)> {
    let mut out: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (r, s) in store.records().iter().zip(splits) {
        let e = out.entry(format!("{:?}", r.source)).or_default();
        match s {
            Split::OodTrain => e.0 += 1,
            Split::OodVal => e.1 += 1,
            Split::MeasureTrain => unreachable!(),
        }
    }
    out
}

#[test]
fn split_counts_match_independent_splitter() {
    let store = store_with_tags(&[("ID", 101)]);
    let a = split_dataset(&store, 0.8, 3).unwrap();
    let got = (a.count(Split::OodTrain), a.count(Split::OodVal));
    assert!(got == (81, 20) || got == (80, 21));
    assert_eq!(counts(&store, &a.splits), oracle_counts(&store, 0.8));

    let store = store_with_tags(&[("ID", 57), ("near", 13), ("far", 7)]);
    for ratio in [0.5, 0.8, 0.33] {
        let a = split_dataset(&store, ratio, 9).unwrap();
        assert_eq!(counts(&store, &a.splits), oracle_counts(&store, ratio));
    }
}

#[test]
fn empty_store_cannot_be_split() {
    let store = store_with_tags(&[]);
    assert!(split_dataset(&store, 0.8, 0).is_err());
}

fn d1_by_source(config: &SyntheticConfig) -> (Vec<f64>, Vec<bool>) {
    let ds = generate_synthetic(config).unwrap();
    let ctx = MeasureContext::fit(
        &ds.store,
        ds.taxonomy.clone(),
        MeasureConfig {
            index: IndexKind::Flat,
            ..MeasureConfig::default()
        },
    )
    .unwrap();
    let table = compute_all(&ds.store, &ctx).unwrap();
    let truth = table
        .sample_ids
        .iter()
        .map(|id| {
            let i = ds.store.records().iter().position(|r| &r.sample_id == id).unwrap();
            !ds.store.records()[i].source.is_id()
        })
        .collect();
    (table.rows.iter().map(|v| v.dist_1st_nn).collect(), truth)
}

fn single_mode(displacement: f64) -> SyntheticConfig {
    SyntheticConfig {
        samples_per_class: vec![150],
        ood_modes: vec![OodMode {
            name: "novel".into(),
            displacement,
            n_classes: 3,
            n_samples: 300,
        }],
        ..SyntheticConfig::default()
    }
}

#[test]
fn far_ood_sits_further_from_its_first_neighbour() {
    let sigma = SyntheticConfig::default().noise_sigma;
    let (d1, ood) = d1_by_source(&single_mode(10.0 * sigma));
    let mean = |want: bool| {
        let v: Vec<f64> = d1.iter().zip(&ood).filter(|(_, o)| **o == want).map(|(d, _)| *d).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(true) > mean(false), "OOD {} vs ID {}", mean(true), mean(false));
}

#[test]
fn d1_separability_grows_with_displacement() {
    let aurocs: Vec<f64> = [1.5, 4.0, 20.0]
        .iter()
        .map(|&disp| {
            let (d1, ood) = d1_by_source(&single_mode(disp));
            roc(&d1, &ood).unwrap().auroc
        })
        .collect();
    assert!(aurocs.windows(2).all(|w| w[0] <= w[1]), "{aurocs:?}");
}
