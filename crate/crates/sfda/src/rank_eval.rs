//! Ranking-quality measures between predicted transferability scores and
//! ground-truth fine-tuning accuracies: Kendall's τ, a top-weighted τ_w,
//! Pearson r, a weighted r_w, and top-k relative accuracy.

use crate::error::{Error, Result};

/// Ground-truth fine-tuning accuracy per model, as printed percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub rows: Vec<GroundTruthRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRow {
    pub model_id: String,
    pub accuracy: f64,
}

impl GroundTruth {
    pub fn new(rows: Vec<GroundTruthRow>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for row in &rows {
            if !row.accuracy.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "ground truth",
                    message: format!("non-finite accuracy for model '{}'", row.model_id),
                });
            }
            if !seen.insert(row.model_id.as_str()) {
                return Err(Error::DuplicateModelId {
                    model_id: row.model_id.clone(),
                });
            }
        }
        Ok(GroundTruth { rows })
    }

    pub fn accuracy_for(&self, model_id: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|row| row.model_id == model_id)
            .map(|row| row.accuracy)
    }
}

fn check_pair(t: &[f64], g: &[f64]) -> Result<usize> {
    if t.len() != g.len() {
        return Err(Error::LengthMismatch {
            left: t.len(),
            right: g.len(),
        });
    }
    if t.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "rank vectors",
            message: format!("need at least 2 entries, got {}", t.len()),
        });
    }
    Ok(t.len())
}

fn sign(x: f64) -> i64 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Kendall's τ: concordant minus discordant pairs over M(M−1)/2, with
/// ties contributing zero (sgn(0) = 0).
pub fn kendall_tau(t: &[f64], g: &[f64]) -> Result<f64> {
    let m = check_pair(t, g)?;
    let mut sum: i64 = 0;
    for i in 0..m {
        for j in (i + 1)..m {
            sum += sign(g[i] - g[j]) * sign(t[i] - t[j]);
        }
    }
    Ok(2.0 * sum as f64 / (m * (m - 1)) as f64)
}

/// Descending ranks (0 = largest); ties keep input order.
fn descending_ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0usize; values.len()];
    for (position, &index) in order.iter().enumerate() {
        ranks[index] = position;
    }
    ranks
}

fn hyperbolic_weights(values: &[f64]) -> Vec<f64> {
    descending_ranks(values)
        .into_iter()
        .map(|rank| 1.0 / (1.0 + rank as f64))
        .collect()
}

fn weighted_tau_one_sided(t: &[f64], g: &[f64], weights: &[f64]) -> f64 {
    let m = t.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let w = weights[i] + weights[j];
            num += w * (sign(g[i] - g[j]) * sign(t[i] - t[j])) as f64;
            den += w;
        }
    }
    num / den
}

/// Weighted Kendall's τ emphasizing the top of the ranking: each pair is
/// weighted by `w_i + w_j` with `w_i = 1/(1 + rank_i)` under descending
/// ranks, normalized by the total pair weight. Computed once with ranks
/// from `g` and once with ranks from `t`, then averaged, so the measure
/// is symmetric in its arguments.
pub fn weighted_kendall_tau(t: &[f64], g: &[f64]) -> Result<f64> {
    check_pair(t, g)?;
    let by_g = weighted_tau_one_sided(t, g, &hyperbolic_weights(g));
    let by_t = weighted_tau_one_sided(t, g, &hyperbolic_weights(t));
    Ok(0.5 * (by_g + by_t))
}

fn pearson_with_weights(t: &[f64], g: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    let m = t.len();
    let uniform = vec![1.0; m];
    let w = weights.unwrap_or(&uniform);
    let total: f64 = w.iter().sum();
    let mean_t: f64 = t.iter().zip(w).map(|(&v, &w)| v * w).sum::<f64>() / total;
    let mean_g: f64 = g.iter().zip(w).map(|(&v, &w)| v * w).sum::<f64>() / total;
    let mut cov = 0.0;
    let mut var_t = 0.0;
    let mut var_g = 0.0;
    for ((&tv, &gv), &wv) in t.iter().zip(g).zip(w) {
        cov += wv * (tv - mean_t) * (gv - mean_g);
        var_t += wv * (tv - mean_t) * (tv - mean_t);
        var_g += wv * (gv - mean_g) * (gv - mean_g);
    }
    if var_t == 0.0 {
        return Err(Error::ZeroVariance {
            what: "first vector",
        });
    }
    if var_g == 0.0 {
        return Err(Error::ZeroVariance {
            what: "second vector",
        });
    }
    Ok((cov / (var_t * var_g).sqrt()).clamp(-1.0, 1.0))
}

/// Product-moment correlation.
pub fn pearson(t: &[f64], g: &[f64]) -> Result<f64> {
    check_pair(t, g)?;
    pearson_with_weights(t, g, None)
}

/// Pearson correlation with the same hyperbolic rank weights as
/// [`weighted_kendall_tau`] applied to the weighted means and
/// covariances, symmetrized over which vector supplies the ranks.
pub fn weighted_pearson(t: &[f64], g: &[f64]) -> Result<f64> {
    check_pair(t, g)?;
    let by_g = pearson_with_weights(t, g, Some(&hyperbolic_weights(g)))?;
    let by_t = pearson_with_weights(t, g, Some(&hyperbolic_weights(t)))?;
    Ok(0.5 * (by_g + by_t))
}

/// Best ground-truth accuracy among the top-k models ranked by `t`,
/// relative to the best accuracy overall. Accuracies must be positive.
pub fn rel_at_k(t: &[f64], g: &[f64], k: usize) -> Result<f64> {
    let m = check_pair(t, g)?;
    if k == 0 {
        return Err(Error::InvalidParameter {
            name: "k",
            message: "must be >= 1".to_string(),
        });
    }
    if k > m {
        return Err(Error::KTooLarge { k, len: m });
    }
    if let Some(&bad) = g.iter().find(|&&v| v.is_nan() || v <= 0.0) {
        return Err(Error::InvalidParameter {
            name: "ground truth",
            message: format!("accuracies must be > 0, got {bad}"),
        });
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| t[j].partial_cmp(&t[i]).unwrap_or(std::cmp::Ordering::Equal));
    let best_top_k = order[..k].iter().map(|&i| g[i]).fold(f64::MIN, f64::max);
    let best = g.iter().copied().fold(f64::MIN, f64::max);
    Ok(best_top_k / best)
}

/// Bundle of every measure for one (scores, ground-truth) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RankEvaluation {
    pub tau: f64,
    pub tau_w: f64,
    pub pearson_r: f64,
    pub pearson_rw: f64,
    /// (k, Rel@k), ascending in k.
    pub rel_at_k: Vec<(usize, f64)>,
}

/// Evaluates all measures; `ks` values larger than M are skipped.
pub fn evaluate_ranking(t: &[f64], g: &[f64], ks: &[usize]) -> Result<RankEvaluation> {
    let m = check_pair(t, g)?;
    let mut rels = Vec::new();
    let mut sorted_ks: Vec<usize> = ks.iter().copied().filter(|&k| k >= 1 && k <= m).collect();
    sorted_ks.sort_unstable();
    sorted_ks.dedup();
    for k in sorted_ks {
        rels.push((k, rel_at_k(t, g, k)?));
    }
    Ok(RankEvaluation {
        tau: kendall_tau(t, g)?,
        tau_w: weighted_kendall_tau(t, g)?,
        pearson_r: pearson(t, g)?,
        pearson_rw: weighted_pearson(t, g)?,
        rel_at_k: rels,
    })
}
