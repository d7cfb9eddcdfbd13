//! Top-k model ensemble selection: project every model into the shared
//! (C−1)-dimensional Fisher space, measure how much each model adds to
//! the stacked per-sample embedding matrix through a nuclear-norm
//! ablation, and combine that complementarity with the transferability
//! score into one ranking.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fda::{FdaModel, FeatureSet};
use crate::linalg::nuclear_norm;
use crate::pipeline::TransferScore;

/// Knobs for [`ensemble_rank`]; defaults are the published operating
/// point (r = 0.5, k = 3, N_ens = 3000).
#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    /// Weight of the transferability score against complementarity,
    /// in [0, 1].
    pub r: f64,
    /// Number of models to select.
    pub k: usize,
    /// Number of samples used for complementarity, recorded in the
    /// report. Callers subsample with [`ensemble_sample_indices`].
    pub n_ens: usize,
    /// Min-max normalize both score vectors before combining. The two
    /// scores live on unrelated scales (a mean log-probability vs a
    /// nuclear-norm gap), so this is on by default; turning it off
    /// reproduces the raw combination.
    pub normalize: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            r: 0.5,
            k: 3,
            n_ens: 3000,
            normalize: true,
        }
    }
}

/// One row of the ensemble report, in the score space that was combined
/// (normalized when [`EnsembleOptions::normalize`] is set).
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRow {
    pub model_id: String,
    pub t_sfda: f64,
    pub t_com: f64,
    pub t_ens: f64,
}

/// Result of [`ensemble_rank`]: rows sorted by descending combined
/// score, plus the two top-k lists (combined and transferability-only).
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleReport {
    pub per_model: Vec<EnsembleRow>,
    /// Top-k by combined score, descending, ties in input order.
    pub selected_top_k: Vec<String>,
    /// Top-k by the transferability score alone, for comparison.
    pub sfda_top_k: Vec<String>,
    pub r: f64,
    pub n_ens: usize,
    pub normalized: bool,
}

/// Deterministic complementarity subsample: the first `min(n, n_ens)`
/// samples in dataset order.
pub fn ensemble_sample_indices(n: usize, n_ens: usize) -> Vec<usize> {
    (0..n.min(n_ens)).collect()
}

/// Projects every model's features into its Fisher space. All models
/// must land in the same dimension D' = C−1, which requires every
/// feature dimension to be at least C−1; a model below that cannot be
/// stacked and is rejected.
pub fn fisher_embeddings(hub: &[FeatureSet], models: &[FdaModel]) -> Result<Vec<Array2<f64>>> {
    if hub.len() != models.len() {
        return Err(Error::LengthMismatch {
            left: hub.len(),
            right: models.len(),
        });
    }
    let first = hub.first().ok_or(Error::TooFewModels { got: 0, need: 1 })?;
    let required = first.num_classes - 1;
    hub.iter()
        .zip(models)
        .map(|(fs, model)| {
            if fs.labels != first.labels || fs.num_classes != first.num_classes {
                return Err(Error::LabelMismatch {
                    model_id: fs.model_id.clone(),
                });
            }
            if model.num_classes() != fs.num_classes {
                return Err(Error::InvalidParameter {
                    name: "models",
                    message: format!(
                        "model '{}' was fitted with {} classes, hub has {}",
                        fs.model_id,
                        model.num_classes(),
                        fs.num_classes
                    ),
                });
            }
            if model.projection_dim() != required {
                return Err(Error::HeterogeneousProjection {
                    model_id: fs.model_id.clone(),
                    feature_dim: model.feature_dim(),
                    required,
                });
            }
            model.project(&fs.features)
        })
        .collect()
}

/// Per-model complementarity: for each selected sample, stack one
/// embedding row per model into F (M × D') and charge model m the drop
/// in nuclear norm when its row is removed, `‖F‖σ − ‖F ⊙ 1_m‖σ`;
/// scores are averaged over the samples in a fixed order.
pub fn complementarity_scores(
    embeddings: &[Array2<f64>],
    sample_indices: &[usize],
) -> Result<Vec<f64>> {
    let m = embeddings.len();
    if m < 2 {
        return Err(Error::TooFewModels { got: m, need: 2 });
    }
    if sample_indices.is_empty() {
        return Err(Error::InvalidParameter {
            name: "sample_indices",
            message: "at least one sample is required".to_string(),
        });
    }
    let d = embeddings[0].ncols();
    let n = embeddings[0].nrows();
    for e in embeddings {
        if e.ncols() != d {
            return Err(Error::DimensionMismatch {
                what: "embedding dimension",
                expected: d,
                got: e.ncols(),
            });
        }
        if e.nrows() != n {
            return Err(Error::DimensionMismatch {
                what: "embedding rows",
                expected: n,
                got: e.nrows(),
            });
        }
    }
    if let Some(&bad) = sample_indices.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidParameter {
            name: "sample_indices",
            message: format!("index {bad} out of range for {n} samples"),
        });
    }

    // Per-sample contributions computed in parallel, then reduced in
    // index order so results do not depend on scheduling.
    let per_sample: Vec<Vec<f64>> = sample_indices
        .par_iter()
        .map(|&sample| {
            let mut stacked = Array2::<f64>::zeros((m, d));
            for (row, e) in stacked.outer_iter_mut().zip(embeddings) {
                e.row(sample).assign_to(row);
            }
            let full = nuclear_norm(&stacked)?;
            let mut contributions = Vec::with_capacity(m);
            for masked_row in 0..m {
                let mut masked = Array2::<f64>::zeros((m - 1, d));
                let mut dst = 0;
                for src in 0..m {
                    if src != masked_row {
                        stacked.row(src).assign_to(masked.row_mut(dst));
                        dst += 1;
                    }
                }
                let remaining = nuclear_norm(&masked)?;
                contributions.push((full - remaining).max(0.0));
            }
            Ok(contributions)
        })
        .collect::<Result<_>>()?;

    let mut totals = vec![0.0f64; m];
    for contributions in &per_sample {
        for (t, c) in totals.iter_mut().zip(contributions) {
            *t += c;
        }
    }
    let count = sample_indices.len() as f64;
    Ok(totals.into_iter().map(|t| t / count).collect())
}

fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        values.iter().map(|v| (v - min) / (max - min)).collect()
    } else {
        // Constant vector: midpoint, which is ranking-neutral.
        vec![0.5; values.len()]
    }
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap_or(std::cmp::Ordering::Equal));
    order
}

/// Combines transferability and complementarity into
/// `T_ens = r·T_sfda + (1−r)·T_com` per model and ranks descending.
pub fn ensemble_rank(
    scores: &[TransferScore],
    t_com: &[f64],
    options: &EnsembleOptions,
) -> Result<EnsembleReport> {
    let m = scores.len();
    if t_com.len() != m {
        return Err(Error::LengthMismatch {
            left: m,
            right: t_com.len(),
        });
    }
    if m == 0 {
        return Err(Error::TooFewModels { got: 0, need: 1 });
    }
    if options.k == 0 {
        return Err(Error::InvalidParameter {
            name: "k",
            message: "must be >= 1".to_string(),
        });
    }
    if options.k > m {
        return Err(Error::KTooLarge {
            k: options.k,
            len: m,
        });
    }
    if !(0.0..=1.0).contains(&options.r) {
        return Err(Error::InvalidParameter {
            name: "r",
            message: format!("must be in [0, 1], got {}", options.r),
        });
    }

    let raw_sfda: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let (t_sfda, t_com_scaled) = if options.normalize {
        (min_max_normalize(&raw_sfda), min_max_normalize(t_com))
    } else {
        (raw_sfda.clone(), t_com.to_vec())
    };
    let t_ens: Vec<f64> = t_sfda
        .iter()
        .zip(&t_com_scaled)
        .map(|(&s, &c)| options.r * s + (1.0 - options.r) * c)
        .collect();

    let order = descending_order(&t_ens);
    let sfda_order = descending_order(&raw_sfda);

    let per_model = order
        .iter()
        .map(|&i| EnsembleRow {
            model_id: scores[i].model_id.clone(),
            t_sfda: t_sfda[i],
            t_com: t_com_scaled[i],
            t_ens: t_ens[i],
        })
        .collect();
    let selected_top_k = order[..options.k]
        .iter()
        .map(|&i| scores[i].model_id.clone())
        .collect();
    let sfda_top_k = sfda_order[..options.k]
        .iter()
        .map(|&i| scores[i].model_id.clone())
        .collect();

    Ok(EnsembleReport {
        per_model,
        selected_top_k,
        sfda_top_k,
        r: options.r,
        n_ens: options.n_ens,
        normalized: options.normalize,
    })
}
