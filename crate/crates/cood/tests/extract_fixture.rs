//! The fixture under `fixtures/pyextract` was written by
//! `fixtures/make_pyextract_fixture.py` in the extractor's output format.

use std::path::PathBuf;

use cood::store::read_store;
use cood_core::data::{SourceTag, Split, OOD_LABEL};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pyextract")
}

#[derive(serde::Deserialize)]
struct Head {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[test]
fn extractor_output_loads() {
    let s = read_store(&fixture()).unwrap();
    assert_eq!(s.len(), 10);
    assert_eq!(s.feature_dim(), 8);
    assert_eq!(s.n_classes(), 3);
    assert_eq!(s.indices(Split::MeasureTrain).len(), 4);
    for r in s.records() {
        match &r.source {
            SourceTag::Id => assert!(r.true_class < 3),
            SourceTag::Ood(name) => {
                assert_eq!(name, "imagenet");
                assert_eq!(r.true_class, OOD_LABEL);
            }
        }
    }
}

#[test]
fn logits_match_the_linear_head() {
    let s = read_store(&fixture()).unwrap();
    let head: Head = serde_json::from_slice(&std::fs::read(fixture().join("head.json")).unwrap()).unwrap();
    for r in s.records() {
        let f = r.feature_f64();
        for (k, (w, b)) in head.w.iter().zip(&head.b).enumerate() {
            let z: f64 = w.iter().zip(&f).map(|(a, x)| a * x).sum::<f64>() + b;
            assert!((z - f64::from(r.logits[k])).abs() <= 1e-4, "{} class {k}: {z} vs {}", r.sample_id, r.logits[k]);
        }
    }
}
