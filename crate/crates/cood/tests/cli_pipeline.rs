use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--index", "flat", "--k", "10", "--pca-components", "16", "--n-trees", "40", "--background", "16", "--n-mc", "8",
    "--shap-samples", "12",
];

fn cood(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cood"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = cood(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn synth(out: &Path) {
    let mut args = vec![
        "synth", "--samples-per-class", "80", "--feature-dim", "32", "--ood-mode", "near:3:2:80", "--ood-mode", "mid:6:2:80",
        "--ood-mode", "far:30:2:80",
    ];
    args.extend_from_slice(SMALL);
    ok(out, &args);
}

fn read(out: &Path, name: &str) -> String {
    std::fs::read_to_string(out.join(name)).unwrap()
}

#[test]
fn stages_run_in_order_and_are_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    synth(out);
    for stage in ["build-index", "measures", "train"] {
        ok(out, &[stage]);
    }
    let summary = ok(out, &["eval"]);
    assert!(summary.contains("AUROC"), "{summary}");

    let rejection = read(out, "rejection.md");
    for category in ["ID-correct", "ID-incorrect", "OOD"] {
        assert!(rejection.contains(category), "{rejection}");
    }
    assert!(rejection.contains("```json"));
    let csv = read(out, "rejection.csv");
    assert!(csv.starts_with("\"Dataset, category\",Number of images,"), "{csv}");

    ok(out, &["eval"]);
    assert_eq!(read(out, "rejection.md"), rejection);

    ok(out, &["grid"]);
    let grid = read(out, "grid.csv");
    assert_eq!(grid.lines().count(), 1 + 16);

    ok(out, &["shap"]);
    let shap = read(out, "shap.csv");
    assert_eq!(shap.lines().filter(|l| l.contains(",overall,")).count(), 19);

    ok(out, &["report"]);
    let report = read(out, "report.md");
    assert!(!report.contains("Not run"));
    assert!(read(out, "roc.svg").starts_with("<svg"));
}

#[test]
fn report_marks_missing_optional_sections() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    synth(out);
    for stage in ["build-index", "measures", "train", "eval", "report"] {
        ok(out, &[stage]);
    }
    let report = read(out, "report.md");
    assert_eq!(report.matches("Not run").count(), 2, "{report}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    assert_eq!(cood(out, &["--help"]).status.code(), Some(0));
    assert_eq!(cood(out, &["--version"]).status.code(), Some(0));
    assert_eq!(cood(out, &["eval", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(cood(out, &["measures", "--k", "1"]).status.code(), Some(1));
    assert_eq!(cood(out, &["train", "--definition", "Binary"]).status.code(), Some(1));

    let o = cood(out, &["build-index"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run `cood synth` first"));
    // A failed stage leaves no config behind.
    assert!(!out.join("config.json").exists());

    synth(out);
    let o = cood(out, &["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run `cood measures` first"));

    std::fs::write(out.join("config.json"), "{\"seed\": \"x\"}").unwrap();
    assert_eq!(cood(out, &["build-index"]).status.code(), Some(2));
}

#[test]
fn saved_config_carries_overrides_forward() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    synth(out);
    let cfg: serde_json::Value = serde_json::from_str(&read(out, "config.json")).unwrap();
    assert_eq!(cfg["measures"]["k"], 10);
    assert_eq!(cfg["forest"]["n_trees"], 40);
    ok(out, &["build-index", "--seed", "4"]);
    let cfg: serde_json::Value = serde_json::from_str(&read(out, "config.json")).unwrap();
    assert_eq!(cfg["seed"], 4);
    assert_eq!(cfg["measures"]["k"], 10);
}
