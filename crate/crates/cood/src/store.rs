//! On-disk feature store and taxonomy files.
//!
//! A store directory holds `manifest.json` plus three header-free
//! little-endian payloads: `features.bin` (f32, `n x feature_dim`),
//! `logits.bin` (f32, `n x n_classes`) and `labels.bin` (u32, `n`). Rows are
//! in manifest order.

use std::path::Path;

use cood_core::data::{DatasetManifest, FeatureStore, SampleRecord, SourceTag, Split};
use cood_core::taxonomy::{NodeSpec, TaxonTree};
use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.bin";
pub const LOGITS_FILE: &str = "logits.bin";
pub const LABELS_FILE: &str = "labels.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub sample_id: String,
    /// `ID` or `OOD:<name>`.
    pub source_tag: String,
    /// `measure-train`, `ood-train` or `ood-val`.
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub version: u32,
    pub n_samples: usize,
    pub feature_dim: usize,
    pub n_classes: usize,
    pub class_names: Vec<String>,
    pub samples: Vec<SampleEntry>,
}

fn f32_bytes(values: impl Iterator<Item = f32>) -> Vec<u8> {
    values.flat_map(f32::to_le_bytes).collect()
}

fn decode_f32(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f32>> {
    if bytes.len() != expected * 4 {
        return Err(CliError::Data(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expected * 4,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn decode_u32(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<u32>> {
    if bytes.len() != expected * 4 {
        return Err(CliError::Data(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            expected * 4,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_store(store: &FeatureStore, dir: &Path) -> Result<()> {
    let m = store.manifest();
    let manifest = ManifestFile {
        version: m.version,
        n_samples: m.n_samples,
        feature_dim: m.feature_dim,
        n_classes: m.n_classes,
        class_names: m.class_names.clone(),
        samples: store
            .records()
            .iter()
            .map(|r| SampleEntry {
                sample_id: r.sample_id.clone(),
                source_tag: r.source.to_string(),
                split: r.split.to_string(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(&dir.join(MANIFEST_FILE), json + "\n")?;
    let records = store.records();
    write_file(&dir.join(FEATURES_FILE), f32_bytes(records.iter().flat_map(|r| r.feature.iter().copied())))?;
    write_file(&dir.join(LOGITS_FILE), f32_bytes(records.iter().flat_map(|r| r.logits.iter().copied())))?;
    let labels: Vec<u8> = records.iter().flat_map(|r| r.true_class.to_le_bytes()).collect();
    write_file(&dir.join(LABELS_FILE), labels)
}

/// Loads and validates a store directory.
pub fn read_store(dir: &Path) -> Result<FeatureStore> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: ManifestFile =
        serde_json::from_slice(&read_file(&manifest_path)?).map_err(|e| CliError::json(&manifest_path, e))?;
    if manifest.samples.len() != manifest.n_samples {
        return Err(CliError::Data(format!(
            "{}: n_samples is {} but {} samples are listed",
            manifest_path.display(),
            manifest.n_samples,
            manifest.samples.len()
        )));
    }
    let n = manifest.n_samples;
    let (d, c) = (manifest.feature_dim, manifest.n_classes);
    let path = dir.join(FEATURES_FILE);
    let features = decode_f32(&path, &read_file(&path)?, n * d)?;
    let path = dir.join(LOGITS_FILE);
    let logits = decode_f32(&path, &read_file(&path)?, n * c)?;
    let path = dir.join(LABELS_FILE);
    let labels = decode_u32(&path, &read_file(&path)?, n)?;

    let mut records = Vec::with_capacity(n);
    for (i, s) in manifest.samples.iter().enumerate() {
        let source: SourceTag = s.source_tag.parse().map_err(|e: cood_core::Error| e.for_sample(&s.sample_id))?;
        let split: Split = s.split.parse().map_err(|e: cood_core::Error| e.for_sample(&s.sample_id))?;
        records.push(SampleRecord {
            sample_id: s.sample_id.clone(),
            feature: features[i * d..(i + 1) * d].to_vec(),
            logits: logits[i * c..(i + 1) * c].to_vec(),
            true_class: labels[i],
            source,
            split,
        });
    }
    let core_manifest = DatasetManifest {
        version: manifest.version,
        n_samples: n,
        feature_dim: d,
        n_classes: c,
        class_names: manifest.class_names,
    };
    if core_manifest.version != cood_core::data::STORE_VERSION {
        return Err(CliError::Data(format!(
            "{}: unsupported store version {}",
            manifest_path.display(),
            core_manifest.version
        )));
    }
    Ok(FeatureStore::new(core_manifest, records)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyNode {
    pub id: u64,
    pub name: String,
    pub level: u32,
    pub parent_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyFile {
    pub nodes: Vec<TaxonomyNode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub level_weights: Vec<f64>,
}

/// Accepts either `{"nodes": [...], "level_weights": [...]}` or a bare node list.
#[derive(Deserialize)]
#[serde(untagged)]
enum TaxonomyInput {
    Full(TaxonomyFile),
    Nodes(Vec<TaxonomyNode>),
}

pub fn taxonomy_file(specs: &[NodeSpec], level_weights: &[f64]) -> TaxonomyFile {
    TaxonomyFile {
        nodes: specs
            .iter()
            .map(|s| TaxonomyNode {
                id: s.id,
                name: s.name.clone(),
                level: s.level,
                parent_id: s.parent_id,
            })
            .collect(),
        level_weights: level_weights.to_vec(),
    }
}

pub fn write_taxonomy(file: &TaxonomyFile, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(file).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(path, json + "\n")
}

pub fn load_taxonomy(path: &Path) -> Result<TaxonTree> {
    let input: TaxonomyInput = serde_json::from_slice(&read_file(path)?).map_err(|e| CliError::json(path, e))?;
    let file = match input {
        TaxonomyInput::Full(f) => f,
        TaxonomyInput::Nodes(nodes) => TaxonomyFile {
            nodes,
            level_weights: Vec::new(),
        },
    };
    let specs = file
        .nodes
        .into_iter()
        .map(|n| NodeSpec {
            id: n.id,
            name: n.name,
            level: n.level,
            parent_id: n.parent_id,
        })
        .collect();
    Ok(TaxonTree::new(specs, &file.level_weights)?)
}
