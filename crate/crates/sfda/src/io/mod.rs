//! Hub manifests, binary feature/label files, report files, and the
//! synthetic hub generator.

pub mod binfmt;
pub mod report;
pub mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use binfmt::{read_feature_file, read_labels, write_feature_file, write_label_file, LabelFile};
pub use report::{
    read_ensemble_report, read_evaluation_report, read_ground_truth_csv, read_score_report,
    write_ensemble_report, write_evaluation_report, write_ground_truth_csv, write_score_report,
    EnsembleScoreRow, EnsembleSelectionReport, EvaluationReport, ScoreReport, ScoreRow,
};
pub use synth::{generate_hub_data, generate_synthetic_hub, SyntheticHub, SyntheticHubSpec};

use crate::error::{Error, Result};
use crate::fda::FeatureSet;

/// Hub inventory: one labels file shared by all models, one feature file
/// per model. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubManifest {
    pub dataset_name: String,
    pub num_classes: usize,
    pub labels_path: String,
    pub models: Vec<ManifestModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestModel {
    pub model_id: String,
    pub features_path: String,
    pub feature_dim: usize,
}

pub fn read_manifest(path: &Path) -> Result<HubManifest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_manifest(path: &Path, manifest: &HubManifest) -> Result<()> {
    let text = report::canonical_json(manifest)?;
    binfmt::write_file(path, text.as_bytes())
}

/// Loads a full hub: manifest, shared labels, and one validated
/// [`FeatureSet`] per model.
pub fn load_hub(manifest_path: &Path) -> Result<(HubManifest, Vec<FeatureSet>)> {
    let manifest = read_manifest(manifest_path)?;
    if manifest.models.is_empty() {
        return Err(Error::TooFewModels { got: 0, need: 1 });
    }
    let mut seen = std::collections::HashSet::new();
    for model in &manifest.models {
        if !seen.insert(model.model_id.as_str()) {
            return Err(Error::DuplicateModelId {
                model_id: model.model_id.clone(),
            });
        }
    }

    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let labels_path = base.join(&manifest.labels_path);
    let label_file = binfmt::read_labels(&labels_path)?;
    if let Some(declared) = label_file.declared_classes {
        if declared != manifest.num_classes {
            return Err(Error::Malformed {
                path: labels_path,
                message: format!(
                    "label file declares {declared} classes, manifest says {}",
                    manifest.num_classes
                ),
            });
        }
    }

    let mut feature_sets = Vec::with_capacity(manifest.models.len());
    for model in &manifest.models {
        let features = binfmt::read_feature_file(&base.join(&model.features_path))?;
        if features.ncols() != model.feature_dim {
            return Err(Error::FeatureDimMismatch {
                model_id: model.model_id.clone(),
                declared: model.feature_dim,
                found: features.ncols(),
            });
        }
        if features.nrows() != label_file.labels.len() {
            return Err(Error::SampleCountMismatch {
                model_id: model.model_id.clone(),
                expected: label_file.labels.len(),
                found: features.nrows(),
            });
        }
        feature_sets.push(FeatureSet::new(
            model.model_id.clone(),
            features,
            label_file.labels.clone(),
            manifest.num_classes,
        )?);
    }
    Ok((manifest, feature_sets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use tempfile::tempdir;

    fn write_minimal_hub(dir: &Path) -> HubManifest {
        let manifest = HubManifest {
            dataset_name: "mini".to_string(),
            num_classes: 2,
            labels_path: "labels.bin".to_string(),
            models: vec![ManifestModel {
                model_id: "m0".to_string(),
                features_path: "m0.bin".to_string(),
                feature_dim: 2,
            }],
        };
        binfmt::write_label_file(&dir.join("labels.bin"), &[0, 1, 0, 1], 2).unwrap();
        binfmt::write_feature_file(
            &dir.join("m0.bin"),
            &array![[0.0, 1.0], [2.0, 3.0], [0.5, 1.5], [2.5, 3.5]],
        )
        .unwrap();
        write_manifest(&dir.join("manifest.json"), &manifest).unwrap();
        manifest
    }

    #[test]
    fn manifest_round_trip_and_hub_load() {
        let dir = tempdir().unwrap();
        let manifest = write_minimal_hub(dir.path());
        let parsed = read_manifest(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(parsed, manifest);

        let (loaded, sets) = load_hub(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded, manifest);
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].num_samples(), 4);
        assert_eq!(sets[0].feature_dim(), 2);
    }

    #[test]
    fn load_hub_checks_declared_dimension() {
        let dir = tempdir().unwrap();
        let mut manifest = write_minimal_hub(dir.path());
        manifest.models[0].feature_dim = 3;
        write_manifest(&dir.path().join("manifest.json"), &manifest).unwrap();
        assert!(matches!(
            load_hub(&dir.path().join("manifest.json")),
            Err(Error::FeatureDimMismatch { declared: 3, found: 2, .. })
        ));
    }

    #[test]
    fn load_hub_rejects_duplicate_ids() {
        let dir = tempdir().unwrap();
        let mut manifest = write_minimal_hub(dir.path());
        manifest.models.push(manifest.models[0].clone());
        write_manifest(&dir.path().join("manifest.json"), &manifest).unwrap();
        assert!(matches!(
            load_hub(&dir.path().join("manifest.json")),
            Err(Error::DuplicateModelId { .. })
        ));
    }

    #[test]
    fn load_hub_reports_missing_files() {
        let dir = tempdir().unwrap();
        let manifest = write_minimal_hub(dir.path());
        std::fs::remove_file(dir.path().join("m0.bin")).unwrap();
        write_manifest(&dir.path().join("manifest.json"), &manifest).unwrap();
        assert!(matches!(
            load_hub(&dir.path().join("manifest.json")),
            Err(Error::Io { .. })
        ));
    }
}
