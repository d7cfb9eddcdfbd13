//! Regularized Fisher discriminant analysis on a labeled feature set:
//! adaptive regularization strength, projection solve, and per-sample
//! class probabilities through the linear Bayes score function.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg;

/// One model's extracted features for the target dataset.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub model_id: String,
    /// Shape (N, D), finite entries.
    pub features: Array2<f64>,
    /// Length N, values in `[0, num_classes)`, every class non-empty.
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl FeatureSet {
    pub fn new(
        model_id: impl Into<String>,
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let model_id = model_id.into();
        let (n, d) = features.dim();
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                what: "labels",
                expected: n,
                got: labels.len(),
            });
        }
        if d < 1 || num_classes < 2 || n < num_classes {
            return Err(Error::InvalidParameter {
                name: "feature set",
                message: format!(
                    "need D >= 1 and N >= C >= 2, got N = {n}, D = {d}, C = {num_classes}"
                ),
            });
        }
        let mut counts = vec![0usize; num_classes];
        for (index, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    index,
                    label,
                    num_classes,
                });
            }
            counts[label] += 1;
        }
        if let Some(class) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass { class });
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "features",
                message: format!("non-finite entry in features of model '{model_id}'"),
            });
        }
        Ok(FeatureSet {
            model_id,
            features,
            labels,
            num_classes,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Same labels/classes, different feature matrix of identical shape
    /// constraints. Used for re-fitting on perturbed features.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        FeatureSet::new(
            self.model_id.clone(),
            features,
            self.labels.clone(),
            self.num_classes,
        )
    }
}

/// Rule for the adaptive regularization strength λ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaVariant {
    /// λ = exp(−a·σ(S_W)): stronger within-scatter ⇒ smaller λ ⇒ harder
    /// supervision on minimizing within scatter. The default.
    #[default]
    ExpWithin,
    /// λ = 1 / (1 + exp(−a·σ(S_B))): sigmoid of the between-scatter
    /// spectral norm, kept for comparison runs.
    SigmoidBetween,
}

/// Fit-time knobs; defaults match the published hyperparameters.
#[derive(Debug, Clone)]
pub struct FdaOptions {
    /// Regularization sharpness, must be > 0.
    pub a: f64,
    pub lambda_variant: LambdaVariant,
    /// Rounds of the largest-eigenvalue iteration.
    pub power_steps: usize,
    /// Per-dimension standardization before fitting. Off by default:
    /// λ is deliberately scale-sensitive.
    pub standardize: bool,
}

impl Default for FdaOptions {
    fn default() -> Self {
        FdaOptions {
            a: 4.0,
            lambda_variant: LambdaVariant::default(),
            power_steps: 3,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone)]
struct Standardizer {
    mean: Array1<f64>,
    inv_std: Array1<f64>,
}

impl Standardizer {
    fn fit(features: &Array2<f64>) -> Self {
        let n = features.nrows() as f64;
        let mean = features.sum_axis(ndarray::Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(features.ncols());
        for row in features.outer_iter() {
            for (v, (&x, &m)) in var.iter_mut().zip(row.iter().zip(mean.iter())) {
                *v += (x - m) * (x - m);
            }
        }
        let inv_std = var.mapv(|v| {
            let std = (v / n).sqrt();
            if std > 0.0 {
                std.recip()
            } else {
                1.0
            }
        });
        Standardizer { mean, inv_std }
    }

    fn apply(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut out = features.clone();
        for mut row in out.outer_iter_mut() {
            row -= &self.mean;
            row *= &self.inv_std;
        }
        out
    }
}

/// Adaptive regularization strength from the within-scatter matrix:
/// `λ = exp(−a·σ(S_W))` with `σ` estimated by three rounds of
/// [`linalg::power_iteration_largest`]. Returns `(λ, σ)`.
pub fn adaptive_lambda(s_w: &Array2<f64>, a: f64) -> Result<(f64, f64)> {
    if a.is_nan() || a <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "a",
            message: format!("must be > 0, got {a}"),
        });
    }
    let sigma = linalg::power_iteration_largest(s_w, 3);
    Ok((lambda_exp_within(sigma, a), sigma))
}

fn lambda_exp_within(sigma: f64, a: f64) -> f64 {
    // exp underflows to +0 for large σ; keep λ strictly positive.
    (-a * sigma).exp().max(f64::MIN_POSITIVE)
}

fn lambda_sigmoid_between(sigma_b: f64, a: f64) -> f64 {
    (1.0 / (1.0 + (-a * sigma_b).exp())).max(f64::MIN_POSITIVE)
}

/// Fitted Reg-FDA state: the Fisher projection and everything needed to
/// score new samples.
#[derive(Debug, Clone)]
pub struct FdaModel {
    /// U, shape (D, D') with D' = min(D, C−1); columns are generalized
    /// eigenvectors ordered by descending eigenvalue, `uᵀ S̃_W u = 1`.
    pub projection: Array2<f64>,
    /// Uᵀμ_c per class, shape (C, D').
    pub projected_class_means: Array2<f64>,
    /// q_c = N_c / N.
    pub class_priors: Vec<f64>,
    /// Regularization strength actually used, in (0, 1].
    pub lambda: f64,
    /// Sharpness hyperparameter the model was fitted with.
    pub a: f64,
    /// Largest-eigenvalue estimate of S_W.
    pub sigma_w: f64,
    /// Generalized eigenvalues paired with the columns of `projection`.
    pub eigenvalues: Vec<f64>,
    /// True when every generalized eigenvalue is <= 1e-12: no
    /// between-class signal; scores are still produced.
    pub degenerate: bool,
    standardizer: Option<Standardizer>,
    feature_dim: usize,
}

impl FdaModel {
    /// Fits Reg-FDA on a feature set: scatter matrices, adaptive λ,
    /// and the top-D' solution of `S_B u = v [(1−λ)S_W + λI] u`.
    pub fn fit(fs: &FeatureSet, options: &FdaOptions) -> Result<FdaModel> {
        if options.a.is_nan() || options.a <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "a",
                message: format!("must be > 0, got {}", options.a),
            });
        }
        if options.power_steps == 0 {
            return Err(Error::InvalidParameter {
                name: "power_steps",
                message: "must be >= 1".to_string(),
            });
        }

        let standardizer = options.standardize.then(|| Standardizer::fit(&fs.features));
        let features = match &standardizer {
            Some(s) => s.apply(&fs.features),
            None => fs.features.clone(),
        };

        let d = features.ncols();
        let n = features.nrows();
        let scatter = linalg::scatter_matrices(&features, &fs.labels, fs.num_classes)?;
        let sigma_w = linalg::power_iteration_largest(&scatter.within, options.power_steps);
        let lambda = match options.lambda_variant {
            LambdaVariant::ExpWithin => lambda_exp_within(sigma_w, options.a),
            LambdaVariant::SigmoidBetween => {
                let sigma_b =
                    linalg::power_iteration_largest(&scatter.between, options.power_steps);
                lambda_sigmoid_between(sigma_b, options.a)
            }
        };

        let mut regularized = &scatter.within * (1.0 - lambda);
        for i in 0..d {
            regularized[(i, i)] += lambda;
        }

        let d_prime = d.min(fs.num_classes - 1);
        let factor = linalg::between_scatter_factor(&scatter);
        let eig = linalg::generalized_symmetric_eig_gram(&factor, &regularized, d_prime)?;
        let degenerate = eig.values.iter().all(|&v| v <= 1e-12);

        let projected_class_means = scatter.class_means.dot(&eig.vectors);
        let class_priors = scatter
            .class_counts
            .iter()
            .map(|&c| c as f64 / n as f64)
            .collect();

        Ok(FdaModel {
            projection: eig.vectors,
            projected_class_means,
            class_priors,
            lambda,
            a: options.a,
            sigma_w,
            eigenvalues: eig.values,
            degenerate,
            standardizer,
            feature_dim: d,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn projection_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.projected_class_means.nrows()
    }

    /// Projects features into the Fisher space: rows `Uᵀ x̂`, shape (N, D').
    pub fn project(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                what: "feature dimension",
                expected: self.feature_dim,
                got: features.ncols(),
            });
        }
        match &self.standardizer {
            Some(s) => Ok(s.apply(features).dot(&self.projection)),
            None => Ok(features.dot(&self.projection)),
        }
    }

    /// Linear Bayes scores, shape (N, C): entry (n, c) is
    /// `(Uᵀx̂_n)·(Uᵀμ_c) − ½‖Uᵀμ_c‖² + log q_c`.
    pub fn class_scores(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        let projected = self.project(features)?;
        let mut scores = projected.dot(&self.projected_class_means.t());
        let offsets: Vec<f64> = self
            .projected_class_means
            .outer_iter()
            .zip(&self.class_priors)
            .map(|(m, &q)| -0.5 * m.dot(&m) + q.ln())
            .collect();
        for mut row in scores.outer_iter_mut() {
            for (v, &o) in row.iter_mut().zip(&offsets) {
                *v += o;
            }
        }
        Ok(scores)
    }

    /// Row-wise softmax of [`FdaModel::class_scores`].
    pub fn predict_proba(&self, features: &Array2<f64>) -> Result<ProbabilityTable> {
        let mut probs = self.class_scores(features)?;
        for row in probs.outer_iter_mut() {
            linalg::softmax_inplace(row);
        }
        Ok(ProbabilityTable { probs })
    }
}

/// Per-sample class probabilities; each row sums to 1.
#[derive(Debug, Clone)]
pub struct ProbabilityTable {
    /// Shape (N, C).
    pub probs: Array2<f64>,
}

impl ProbabilityTable {
    /// Probability assigned to each sample's own label.
    pub fn label_confidences(&self, labels: &[usize]) -> Result<Vec<f64>> {
        if labels.len() != self.probs.nrows() {
            return Err(Error::DimensionMismatch {
                what: "labels",
                expected: self.probs.nrows(),
                got: labels.len(),
            });
        }
        Ok(labels
            .iter()
            .enumerate()
            .map(|(n, &y)| self.probs[(n, y)])
            .collect())
    }
}
