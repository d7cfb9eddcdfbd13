//! Two-stage self-challenging scoring: a first Reg-FDA fit yields
//! per-sample confidences, ConfMix drags each sample toward its
//! outer-class mean by the complement of that confidence, a second
//! Reg-FDA is fitted on the perturbed features, and the mean
//! log-likelihood of the second stage is the transferability score.

use std::time::{Duration, Instant};

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fda::{FdaModel, FdaOptions, FeatureSet, ProbabilityTable};

/// Log-probabilities are clamped here to avoid −∞ from underflow.
pub const LOG_PROB_FLOOR: f64 = -690.7755278982137; // ln(1e-300)

const PROB_FLOOR: f64 = 1e-300;

/// Transferability score of one model with per-stage diagnostics.
///
/// `score` is the stage-2 mean log-probability; the sum form over all
/// samples is available through [`TransferScore::sum_logp`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransferScore {
    pub model_id: String,
    /// Mean stage-2 log-probability of the true labels; always <= 0.
    pub score: f64,
    pub stage1_mean_logp: f64,
    pub stage2_mean_logp: f64,
    pub lambda_stage1: f64,
    pub lambda_stage2: f64,
    /// Set when either stage had no between-class signal.
    pub degenerate: bool,
    /// Per-stage counts of samples whose log-probability hit
    /// [`LOG_PROB_FLOOR`].
    pub clamped_stage1: usize,
    pub clamped_stage2: usize,
    pub n_samples: usize,
}

impl TransferScore {
    /// Total log-likelihood (score × N): the sum form of the metric,
    /// identical in ranking to the mean for a fixed dataset.
    pub fn sum_logp(&self) -> f64 {
        self.score * self.n_samples as f64
    }
}

/// ConfMix result: the perturbed features plus what produced them.
#[derive(Debug, Clone)]
pub struct ConfMixOutput {
    /// Shape (N, D): row n is `p_n·x̂_n + (1−p_n)·μ_{c≠y_n}`.
    pub mixed_features: Array2<f64>,
    /// p_n: stage-1 probability of each sample's own label.
    pub confidences: Vec<f64>,
    /// Shape (C, D): row c is the mean of all samples whose label ≠ c.
    pub outer_means: Array2<f64>,
}

/// Mean of all samples outside each class: row c averages every sample
/// with label ≠ c.
pub fn outer_class_means(fs: &FeatureSet) -> Result<Array2<f64>> {
    let (n, d) = fs.features.dim();
    let c = fs.num_classes;
    let mut class_sums = Array2::<f64>::zeros((c, d));
    let mut counts = vec![0usize; c];
    for (row, &label) in fs.features.outer_iter().zip(&fs.labels) {
        let mut sum = class_sums.row_mut(label);
        sum += &row;
        counts[label] += 1;
    }
    let total = class_sums.sum_axis(ndarray::Axis(0));

    let mut outer = Array2::<f64>::zeros((c, d));
    for (class, mut out) in outer.outer_iter_mut().enumerate() {
        let rest = n - counts[class];
        if rest == 0 {
            return Err(Error::InvalidParameter {
                name: "outer_class_means",
                message: format!("class {class} contains every sample"),
            });
        }
        out.assign(&(&total - &class_sums.row(class)));
        out /= rest as f64;
    }
    Ok(outer)
}

/// Convex combination of each sample with its outer-class mean, weighted
/// by the sample's own confidence. The endpoints are exact: p = 1 keeps
/// the sample bit-for-bit, p = 0 lands on the outer mean bit-for-bit.
pub fn confmix(fs: &FeatureSet, probs: &ProbabilityTable) -> Result<ConfMixOutput> {
    let (n, d) = fs.features.dim();
    if probs.probs.dim() != (n, fs.num_classes) {
        return Err(Error::DimensionMismatch {
            what: "probability table rows",
            expected: n,
            got: probs.probs.nrows(),
        });
    }
    let confidences = probs.label_confidences(&fs.labels)?;
    let outer_means = outer_class_means(fs)?;

    let mut mixed_features = Array2::<f64>::zeros((n, d));
    for (i, (mut out, &label)) in mixed_features
        .outer_iter_mut()
        .zip(&fs.labels)
        .enumerate()
    {
        let p = confidences[i];
        if p == 1.0 {
            out.assign(&fs.features.row(i));
        } else if p == 0.0 {
            out.assign(&outer_means.row(label));
        } else {
            let x = fs.features.row(i);
            let m = outer_means.row(label);
            let q = 1.0 - p;
            for ((o, &xv), &mv) in out.iter_mut().zip(x.iter()).zip(m.iter()) {
                *o = p * xv + q * mv;
            }
        }
    }
    Ok(ConfMixOutput {
        mixed_features,
        confidences,
        outer_means,
    })
}

fn mean_logp(confidences: &[f64]) -> (f64, usize) {
    let mut clamped = 0usize;
    let mut sum = 0.0;
    for &p in confidences {
        if p < PROB_FLOOR {
            clamped += 1;
            sum += LOG_PROB_FLOOR;
        } else {
            sum += p.ln();
        }
    }
    (sum / confidences.len() as f64, clamped)
}

/// One scored model with the fitted per-stage state, for callers that go
/// on to build Fisher embeddings or inspect the fits.
#[derive(Debug, Clone)]
pub struct ScoredModel {
    pub score: TransferScore,
    pub stage1: FdaModel,
    pub stage2: FdaModel,
    /// Wall-clock time of the scoring computation itself.
    pub elapsed: Duration,
}

/// Scores one feature set by the two-stage pipeline.
pub fn sfda_score(fs: &FeatureSet, options: &FdaOptions) -> Result<TransferScore> {
    sfda_score_detailed(fs, options).map(|m| m.score)
}

/// [`sfda_score`] keeping the fitted stage models and timing.
pub fn sfda_score_detailed(fs: &FeatureSet, options: &FdaOptions) -> Result<ScoredModel> {
    let start = Instant::now();
    let in_stage = |stage: u8| {
        let model_id = fs.model_id.clone();
        move |source: Error| Error::StageFailed {
            model_id,
            stage,
            source: Box::new(source),
        }
    };

    let stage1 = FdaModel::fit(fs, options).map_err(in_stage(1))?;
    let probs1 = stage1.predict_proba(&fs.features).map_err(in_stage(1))?;
    let conf1 = probs1.label_confidences(&fs.labels)?;
    let (stage1_mean_logp, clamped_stage1) = mean_logp(&conf1);

    let mix = confmix(fs, &probs1)?;
    let challenged = fs.with_features(mix.mixed_features).map_err(in_stage(2))?;

    let stage2 = FdaModel::fit(&challenged, options).map_err(in_stage(2))?;
    let probs2 = stage2
        .predict_proba(&challenged.features)
        .map_err(in_stage(2))?;
    let conf2 = probs2.label_confidences(&challenged.labels)?;
    let (stage2_mean_logp, clamped_stage2) = mean_logp(&conf2);

    let score = TransferScore {
        model_id: fs.model_id.clone(),
        score: stage2_mean_logp,
        stage1_mean_logp,
        stage2_mean_logp,
        lambda_stage1: stage1.lambda,
        lambda_stage2: stage2.lambda,
        degenerate: stage1.degenerate || stage2.degenerate,
        clamped_stage1,
        clamped_stage2,
        n_samples: fs.num_samples(),
    };
    Ok(ScoredModel {
        score,
        stage1,
        stage2,
        elapsed: start.elapsed(),
    })
}

fn validate_hub(hub: &[FeatureSet]) -> Result<()> {
    let first = hub.first().ok_or(Error::TooFewModels { got: 0, need: 1 })?;
    for fs in &hub[1..] {
        if fs.labels != first.labels || fs.num_classes != first.num_classes {
            return Err(Error::LabelMismatch {
                model_id: fs.model_id.clone(),
            });
        }
    }
    Ok(())
}

/// Scores every model in the hub. All feature sets must share labels and
/// class count; feature dimensions may differ per model. Models are
/// scored in parallel and results keep the input order.
pub fn score_hub(hub: &[FeatureSet], options: &FdaOptions) -> Result<Vec<TransferScore>> {
    Ok(score_hub_detailed(hub, options)?
        .into_iter()
        .map(|m| m.score)
        .collect())
}

/// [`score_hub`] keeping per-model fitted state and timing.
pub fn score_hub_detailed(hub: &[FeatureSet], options: &FdaOptions) -> Result<Vec<ScoredModel>> {
    validate_hub(hub)?;
    hub.par_iter()
        .map(|fs| sfda_score_detailed(fs, options))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn two_class_1d() -> FeatureSet {
        FeatureSet::new(
            "toy",
            array![[0.0], [2.0], [4.0], [6.0]],
            vec![0, 0, 1, 1],
            2,
        )
        .unwrap()
    }

    fn clusters(
        rng: &mut ChaCha8Rng,
        model_id: &str,
        means: &[Vec<f64>],
        per_class: usize,
        noise: f64,
    ) -> FeatureSet {
        let c = means.len();
        let d = means[0].len();
        let n = c * per_class;
        let mut features = Array2::<f64>::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % c;
            labels.push(class);
            for j in 0..d {
                let g: f64 = rng.sample(StandardNormal);
                features[(i, j)] = means[class][j] + noise * g;
            }
        }
        FeatureSet::new(model_id, features, labels, c).unwrap()
    }

    fn simplex_means(c: usize, d: usize, separation: f64) -> Vec<Vec<f64>> {
        (0..c)
            .map(|i| {
                let mut m = vec![0.0; d];
                m[i % d] = separation;
                m
            })
            .collect()
    }

    #[test]
    fn outer_means_two_class_example() {
        let fs = two_class_1d();
        let outer = outer_class_means(&fs).unwrap();
        assert_abs_diff_eq!(outer[(0, 0)], 5.0);
        assert_abs_diff_eq!(outer[(1, 0)], 1.0);
    }

    #[test]
    fn outer_means_identical_class_means() {
        // Three classes, all centered on the same point: every outer mean
        // equals that point.
        let features = array![
            [1.0, -1.0],
            [3.0, -3.0],
            [1.0, -1.0],
            [3.0, -3.0],
            [1.0, -1.0],
            [3.0, -3.0]
        ];
        let fs = FeatureSet::new("m", features, vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        let outer = outer_class_means(&fs).unwrap();
        for row in outer.outer_iter() {
            assert_abs_diff_eq!(row[0], 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(row[1], -2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn outer_means_match_direct_loop_and_algebraic_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for trial in 0..20 {
            let c = 2 + trial % 4;
            let d = 1 + trial % 5;
            let fs = clusters(&mut rng, "m", &simplex_means(c, d, 2.0), 3 + trial % 6, 0.7);
            let outer = outer_class_means(&fs).unwrap();
            let n = fs.num_samples();

            // Direct per-sample oracle.
            for class in 0..c {
                let mut sum = vec![0.0; d];
                let mut count = 0usize;
                for (row, &label) in fs.features.outer_iter().zip(&fs.labels) {
                    if label != class {
                        count += 1;
                        for (s, &v) in sum.iter_mut().zip(row.iter()) {
                            *s += v;
                        }
                    }
                }
                for (j, s) in sum.iter().enumerate() {
                    assert_abs_diff_eq!(outer[(class, j)], s / count as f64, epsilon = 1e-10);
                }
            }

            // (N·μ − N_c·μ_c) / (N − N_c) identity.
            let scatter =
                crate::linalg::scatter_matrices(&fs.features, &fs.labels, fs.num_classes)
                    .unwrap();
            for class in 0..c {
                let nc = scatter.class_counts[class] as f64;
                for j in 0..d {
                    let expected = (n as f64 * scatter.mean[j]
                        - nc * scatter.class_means[(class, j)])
                        / (n as f64 - nc);
                    assert_abs_diff_eq!(outer[(class, j)], expected, epsilon = 1e-9);
                }
            }
        }
    }

    fn uniform_probs(fs: &FeatureSet, p_own: f64) -> ProbabilityTable {
        let c = fs.num_classes;
        let other = (1.0 - p_own) / (c as f64 - 1.0);
        let mut probs = Array2::<f64>::from_elem((fs.num_samples(), c), other);
        for (n, &y) in fs.labels.iter().enumerate() {
            probs[(n, y)] = p_own;
        }
        ProbabilityTable { probs }
    }

    #[test]
    fn confmix_endpoints_are_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fs = clusters(&mut rng, "m", &simplex_means(3, 4, 1.5), 6, 0.9);

        let out = confmix(&fs, &uniform_probs(&fs, 1.0)).unwrap();
        for (a, b) in out.mixed_features.iter().zip(fs.features.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        let out = confmix(&fs, &uniform_probs(&fs, 0.0)).unwrap();
        for (row, &y) in out.mixed_features.outer_iter().zip(&fs.labels) {
            for (a, b) in row.iter().zip(out.outer_means.row(y).iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn confmix_hand_arithmetic() {
        // x̂ = 0 with label A, outer-A mean 5, p = 0.6 ⇒ mixed = 2.0.
        let fs = FeatureSet::new(
            "m",
            array![[0.0], [4.0], [6.0]],
            vec![0, 1, 1],
            2,
        )
        .unwrap();
        let mut probs = Array2::<f64>::zeros((3, 2));
        probs[(0, 0)] = 0.6;
        probs[(0, 1)] = 0.4;
        probs[(1, 1)] = 1.0;
        probs[(2, 1)] = 1.0;
        let out = confmix(&fs, &ProbabilityTable { probs }).unwrap();
        assert_abs_diff_eq!(out.outer_means[(0, 0)], 5.0);
        assert_abs_diff_eq!(out.mixed_features[(0, 0)], 2.0, epsilon = 1e-15);
        // p = 1 rows pass through.
        assert_eq!(out.mixed_features[(1, 0)], 4.0);
        assert_eq!(out.mixed_features[(2, 0)], 6.0);
    }

    #[test]
    fn high_confidence_fixed_point() {
        // Far-apart classes with tiny within-scatter: p ≈ 1 everywhere, so
        // stage 2 sees almost the same features and T ≈ stage-1 mean.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let fs = clusters(&mut rng, "m", &simplex_means(3, 3, 50.0), 10, 0.01);
        let scored = sfda_score(&fs, &FdaOptions::default()).unwrap();
        assert!(scored.stage1_mean_logp > -1e-6);
        assert!((scored.score - scored.stage1_mean_logp).abs() < 1e-6);
    }

    #[test]
    fn shuffled_labels_score_log_uniform() {
        // No class signal: T should be close to log(1/C).
        let c = 4;
        let mut total = 0.0;
        let trials = 50;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let n = 200;
            let d = 8;
            let features =
                Array2::<f64>::from_shape_fn((n, d), |_| rng.sample(StandardNormal));
            let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
            // Fisher–Yates with the same generator keeps this deterministic.
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                labels.swap(i, j);
            }
            let fs = FeatureSet::new("m", features, labels, c).unwrap();
            total += sfda_score(&fs, &FdaOptions::default()).unwrap().score;
        }
        let mean = total / trials as f64;
        let expected = (1.0 / c as f64).ln();
        assert!(
            (mean - expected).abs() <= 0.1,
            "mean {mean} vs log(1/C) {expected}"
        );
    }

    #[test]
    fn informative_model_beats_noisy_copy() {
        let mut wins = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
            let clean = clusters(&mut rng, "clean", &simplex_means(3, 6, 2.0), 20, 0.8);
            let noisy_features = &clean.features
                + &Array2::<f64>::from_shape_fn(clean.features.dim(), |_| {
                    4.0 * rng.sample::<f64, _>(StandardNormal)
                });
            let noisy = FeatureSet::new(
                "noisy",
                noisy_features,
                clean.labels.clone(),
                clean.num_classes,
            )
            .unwrap();
            let t_clean = sfda_score(&clean, &FdaOptions::default()).unwrap().score;
            let t_noisy = sfda_score(&noisy, &FdaOptions::default()).unwrap().score;
            if t_clean > t_noisy {
                wins += 1;
            }
        }
        assert!(wins >= 95, "clean model won only {wins}/100 trials");
    }

    #[test]
    fn self_challenge_never_raises_confidence_on_corpus() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..40 {
            let c = 2 + trial % 4;
            let d = 2 + trial % 6;
            let sep = 0.5 + (trial % 7) as f64 * 0.5;
            let noise = 0.3 + (trial % 5) as f64 * 0.4;
            let fs = clusters(&mut rng, "m", &simplex_means(c, d, sep), 12, noise);
            let s = sfda_score(&fs, &FdaOptions::default()).unwrap();
            assert!(
                s.stage2_mean_logp <= s.stage1_mean_logp + 1e-6,
                "stage2 {} > stage1 {}",
                s.stage2_mean_logp,
                s.stage1_mean_logp
            );
            assert!(s.score <= 0.0);
        }
    }

    #[test]
    fn score_hub_singleton_and_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let fs = clusters(&mut rng, "a", &simplex_means(3, 4, 2.0), 10, 0.6);
        let single = score_hub(std::slice::from_ref(&fs), &FdaOptions::default()).unwrap();
        let direct = sfda_score(&fs, &FdaOptions::default()).unwrap();
        assert_eq!(single[0], direct);

        let mut dup = fs.clone();
        dup.model_id = "b".to_string();
        let scores = score_hub(&[fs, dup], &FdaOptions::default()).unwrap();
        assert_eq!(scores[0].score.to_bits(), scores[1].score.to_bits());
    }

    #[test]
    fn errors_carry_the_stage_index() {
        let fs = two_class_1d();
        let bad = FdaOptions {
            a: 0.0,
            ..FdaOptions::default()
        };
        match sfda_score(&fs, &bad) {
            Err(Error::StageFailed { model_id, stage: 1, .. }) => assert_eq!(model_id, "toy"),
            other => panic!("expected StageFailed in stage 1, got {other:?}"),
        }
    }

    #[test]
    fn score_hub_rejects_label_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a = clusters(&mut rng, "a", &simplex_means(2, 3, 2.0), 8, 0.5);
        let mut b = clusters(&mut rng, "b", &simplex_means(2, 3, 2.0), 8, 0.5);
        b.labels.swap(0, 1);
        match score_hub(&[a, b], &FdaOptions::default()) {
            Err(Error::LabelMismatch { model_id }) => assert_eq!(model_id, "b"),
            other => panic!("expected LabelMismatch, got {other:?}"),
        }
    }

    #[test]
    fn graded_noise_orders_scores() {
        let mut wins = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
            let base = clusters(&mut rng, "m0", &simplex_means(3, 5, 2.5), 15, 0.5);
            let mut hub = vec![base.clone()];
            for (i, extra) in [1.5, 3.5].iter().enumerate() {
                let noisy = &base.features
                    + &Array2::<f64>::from_shape_fn(base.features.dim(), |_| {
                        extra * rng.sample::<f64, _>(StandardNormal)
                    });
                hub.push(
                    FeatureSet::new(
                        format!("m{}", i + 1),
                        noisy,
                        base.labels.clone(),
                        base.num_classes,
                    )
                    .unwrap(),
                );
            }
            let scores = score_hub(&hub, &FdaOptions::default()).unwrap();
            if scores[0].score > scores[1].score && scores[1].score > scores[2].score {
                wins += 1;
            }
        }
        assert!(wins >= 95, "noise ordering held in only {wins}/100 trials");
    }

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let hub: Vec<FeatureSet> = (0..6)
            .map(|i| {
                clusters(
                    &mut rng,
                    &format!("m{i}"),
                    &simplex_means(3, 4 + i, 2.0),
                    10,
                    0.4 + 0.2 * i as f64,
                )
            })
            .collect();
        let options = FdaOptions::default();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| score_hub(&hub, &options))
            .unwrap();
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| score_hub(&hub, &options))
            .unwrap();
        assert_eq!(one, many);

        // Determinism across repeated runs.
        let again = score_hub(&hub, &options).unwrap();
        assert_eq!(one, again);
    }
}
