use cood::store::{read_store, write_store};
use cood_core::data::{DatasetManifest, FeatureStore, SampleRecord, SourceTag, Split, OOD_LABEL, STORE_VERSION};
use proptest::prelude::*;

fn record(i: usize, d: usize, c: usize) -> impl Strategy<Value = SampleRecord> {
    (
        proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), d),
        proptest::collection::vec(-50.0f32..50.0, c),
        prop_oneof![(0..c as u32).prop_map(Some), Just(None)],
        0..3usize,
        0..2usize,
    )
        .prop_map(move |(feature, logits, class, split, ood)| {
            let (true_class, source, split) = match class {
                Some(k) => (k, SourceTag::Id, [Split::MeasureTrain, Split::OodTrain, Split::OodVal][split]),
                None => (
                    OOD_LABEL,
                    SourceTag::Ood(["inat", "places, 365"][ood].into()),
                    [Split::OodTrain, Split::OodVal][split % 2],
                ),
            };
            SampleRecord {
                sample_id: format!("s{i}/img \"{i}\".png"),
                feature,
                logits,
                true_class,
                source,
                split,
            }
        })
}

fn store() -> impl Strategy<Value = FeatureStore> {
    (1..6usize, 1..5usize, 0..12usize).prop_flat_map(|(d, c, n)| {
        (0..n).map(|i| record(i, d, c)).collect::<Vec<_>>().prop_map(move |records| {
            let manifest = DatasetManifest {
                version: STORE_VERSION,
                n_samples: records.len(),
                feature_dim: d,
                n_classes: c,
                class_names: (0..c).map(|k| format!("class {k}")).collect(),
            };
            FeatureStore::new(manifest, records).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn written_store_reads_back_identically(s in store()) {
        let dir = tempfile::tempdir().unwrap();
        write_store(&s, dir.path()).unwrap();
        let back = read_store(dir.path()).unwrap();
        // Bitwise, so -0.0 and subnormals survive too.
        for (a, b) in s.records().iter().zip(back.records()) {
            prop_assert!(a.feature.iter().zip(&b.feature).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        prop_assert_eq!(back, s);
    }
}

#[test]
fn truncated_payload_is_a_data_error() {
    let src = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pyextract");
    let dir = tempfile::tempdir().unwrap();
    write_store(&read_store(&src).unwrap(), dir.path()).unwrap();
    let p = dir.path().join("logits.bin");
    let mut bytes = std::fs::read(&p).unwrap();
    bytes.pop();
    std::fs::write(&p, bytes).unwrap();
    let err = read_store(dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), cood::error::EXIT_DATA);
    assert!(err.to_string().contains("logits.bin"));
}
