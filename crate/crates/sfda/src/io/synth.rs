//! Synthetic hub generation: Gaussian class clusters on scaled simplex
//! vertices, per-model feature quality knobs, and a brute-force
//! nearest-mean oracle accuracy evaluated on a held-out draw.
//!
//! All randomness comes from ChaCha8 streams keyed by the spec seed and
//! the model index, so identical specs produce byte-identical hubs on
//! any platform.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{binfmt, report, HubManifest, ManifestModel};
use crate::error::{Error, Result};
use crate::fda::FeatureSet;
use crate::rank_eval::{GroundTruth, GroundTruthRow};

const HELDOUT_SAMPLES: usize = 4000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticHubSpec {
    pub seed: u64,
    #[serde(default = "default_dataset_name")]
    pub dataset_name: String,
    pub num_samples: usize,
    pub num_classes: usize,
    pub models: Vec<SyntheticModelSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticModelSpec {
    /// Defaults to `model_{index:02}`.
    #[serde(default)]
    pub model_id: Option<String>,
    pub feature_dim: usize,
    /// Distance of class means from the origin along simplex vertices.
    pub class_separation: f64,
    /// Isotropic Gaussian noise stddev around the class mean.
    pub within_scatter: f64,
    /// Fraction of samples whose features are drawn from a uniformly
    /// chosen *different* class, in [0, 1). At (C−1)/C this is
    /// equivalent to fully shuffled labels.
    #[serde(default)]
    pub label_noise_rate: f64,
}

fn default_dataset_name() -> String {
    "synthetic".to_string()
}

/// In-memory hub plus its oracle: the Bayes-style nearest-true-mean
/// accuracy per model on a fresh held-out draw, as a percentage.
#[derive(Debug, Clone)]
pub struct SyntheticHub {
    pub feature_sets: Vec<FeatureSet>,
    pub labels: Vec<usize>,
    pub oracle: GroundTruth,
}

fn validate(spec: &SyntheticHubSpec) -> Result<Vec<String>> {
    if spec.num_classes < 2 {
        return Err(Error::SpecInvalid {
            message: format!("num_classes must be >= 2, got {}", spec.num_classes),
        });
    }
    if spec.num_samples < spec.num_classes {
        return Err(Error::SpecInvalid {
            message: format!(
                "num_samples ({}) must be >= num_classes ({})",
                spec.num_samples, spec.num_classes
            ),
        });
    }
    if spec.models.is_empty() {
        return Err(Error::SpecInvalid {
            message: "at least one model is required".to_string(),
        });
    }
    let mut ids = Vec::with_capacity(spec.models.len());
    let mut seen = std::collections::HashSet::new();
    for (index, model) in spec.models.iter().enumerate() {
        let id = model
            .model_id
            .clone()
            .unwrap_or_else(|| format!("model_{index:02}"));
        if !seen.insert(id.clone()) {
            return Err(Error::SpecInvalid {
                message: format!("duplicate model id '{id}'"),
            });
        }
        if model.feature_dim < spec.num_classes {
            return Err(Error::SpecInvalid {
                message: format!(
                    "model '{id}': feature_dim ({}) must be >= num_classes ({}) \
                     to place simplex class means",
                    model.feature_dim, spec.num_classes
                ),
            });
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(model.class_separation) || !finite_nonneg(model.within_scatter) {
            return Err(Error::SpecInvalid {
                message: format!("model '{id}': separation and scatter must be finite and >= 0"),
            });
        }
        if !(0.0..1.0).contains(&model.label_noise_rate) {
            return Err(Error::SpecInvalid {
                message: format!(
                    "model '{id}': label_noise_rate must be in [0, 1), got {}",
                    model.label_noise_rate
                ),
            });
        }
        ids.push(id);
    }
    Ok(ids)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Unit-norm centered simplex vertices in the first C coordinates,
/// scaled by the separation.
fn class_means(c: usize, d: usize, separation: f64) -> Array2<f64> {
    let norm = (1.0 - 1.0 / c as f64).sqrt();
    let mut means = Array2::<f64>::zeros((c, d));
    for class in 0..c {
        for j in 0..c {
            let e = if j == class { 1.0 } else { 0.0 };
            means[(class, j)] = separation * (e - 1.0 / c as f64) / norm;
        }
    }
    means
}

/// Draws one feature matrix: per sample, pick the effective class (the
/// true one, or a uniformly chosen different one at the noise rate),
/// then add isotropic Gaussian noise around its mean. Values are rounded
/// through f32 so in-memory data is identical to what the binary feature
/// format stores.
fn draw_features(
    rng: &mut ChaCha8Rng,
    labels: &[usize],
    means: &Array2<f64>,
    within_scatter: f64,
    noise_rate: f64,
) -> Array2<f64> {
    let c = means.nrows();
    let d = means.ncols();
    let mut features = Array2::<f64>::zeros((labels.len(), d));
    for (mut row, &label) in features.outer_iter_mut().zip(labels) {
        let flip = rng.gen::<f64>() < noise_rate;
        let effective = if flip {
            let offset = rng.gen_range(0..c - 1);
            if offset >= label {
                offset + 1
            } else {
                offset
            }
        } else {
            label
        };
        for (j, v) in row.iter_mut().enumerate() {
            let g: f64 = rng.sample(StandardNormal);
            let value = means[(effective, j)] + within_scatter * g;
            *v = (value as f32) as f64;
        }
    }
    features
}

fn nearest_mean_accuracy(features: &Array2<f64>, labels: &[usize], means: &Array2<f64>) -> f64 {
    let mut correct = 0usize;
    for (row, &label) in features.outer_iter().zip(labels) {
        let mut best_class = 0usize;
        let mut best_dist = f64::INFINITY;
        for (class, mean) in means.outer_iter().enumerate() {
            let dist: f64 = row
                .iter()
                .zip(mean.iter())
                .map(|(&x, &m)| (x - m) * (x - m))
                .sum();
            if dist < best_dist {
                best_dist = dist;
                best_class = class;
            }
        }
        if best_class == label {
            correct += 1;
        }
    }
    correct as f64 / labels.len() as f64
}

fn round_robin_labels(n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|i| i % c).collect()
}

/// Parses a spec file (JSON).
pub fn read_spec(path: &Path) -> Result<SyntheticHubSpec> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes a spec file (canonical JSON).
pub fn write_spec(path: &Path, spec: &SyntheticHubSpec) -> Result<()> {
    let text = report::canonical_json(spec)?;
    binfmt::write_file(path, text.as_bytes())
}

/// Generates the hub in memory together with its oracle accuracies.
pub fn generate_hub_data(spec: &SyntheticHubSpec) -> Result<SyntheticHub> {
    let ids = validate(spec)?;
    let c = spec.num_classes;
    let labels = round_robin_labels(spec.num_samples, c);
    let heldout_labels = round_robin_labels(HELDOUT_SAMPLES, c);

    let mut feature_sets = Vec::with_capacity(spec.models.len());
    let mut oracle_rows = Vec::with_capacity(spec.models.len());
    for (index, (model, id)) in spec.models.iter().zip(&ids).enumerate() {
        let means = class_means(c, model.feature_dim, model.class_separation);

        let mut train_rng = stream_rng(spec.seed, 2 * index as u64);
        let features = draw_features(
            &mut train_rng,
            &labels,
            &means,
            model.within_scatter,
            model.label_noise_rate,
        );
        feature_sets.push(FeatureSet::new(id.clone(), features, labels.clone(), c)?);

        // Oracle: same generative process, fresh draw, nearest-true-mean
        // classification (Bayes-optimal for this mixture up to a noise
        // rate of (C−1)/C).
        let mut heldout_rng = stream_rng(spec.seed, 2 * index as u64 + 1);
        let heldout = draw_features(
            &mut heldout_rng,
            &heldout_labels,
            &means,
            model.within_scatter,
            model.label_noise_rate,
        );
        let accuracy = nearest_mean_accuracy(&heldout, &heldout_labels, &means);
        oracle_rows.push(GroundTruthRow {
            model_id: id.clone(),
            accuracy: 100.0 * accuracy,
        });
    }

    Ok(SyntheticHub {
        feature_sets,
        labels,
        oracle: GroundTruth::new(oracle_rows)?,
    })
}

/// Writes a complete hub directory: `manifest.json`, `labels.bin`, one
/// feature file per model, and `oracle.csv` with the oracle accuracies
/// in the ground-truth CSV format.
pub fn generate_synthetic_hub(
    spec: &SyntheticHubSpec,
    dir: &Path,
) -> Result<(HubManifest, SyntheticHub)> {
    let hub = generate_hub_data(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    binfmt::write_label_file(&dir.join("labels.bin"), &hub.labels, spec.num_classes)?;
    let mut models = Vec::with_capacity(hub.feature_sets.len());
    for fs in &hub.feature_sets {
        let file_name = format!("features_{}.bin", fs.model_id);
        binfmt::write_feature_file(&dir.join(&file_name), &fs.features)?;
        models.push(ManifestModel {
            model_id: fs.model_id.clone(),
            features_path: file_name,
            feature_dim: fs.feature_dim(),
        });
    }
    report::write_ground_truth_csv(&dir.join("oracle.csv"), &hub.oracle)?;

    let manifest = HubManifest {
        dataset_name: spec.dataset_name.clone(),
        num_classes: spec.num_classes,
        labels_path: "labels.bin".to_string(),
        models,
    };
    super::write_manifest(&dir.join("manifest.json"), &manifest)?;
    Ok((manifest, hub))
}
