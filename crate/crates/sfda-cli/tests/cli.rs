//! Behavioral tests of the command-line interface: exit codes, ranking
//! order guarantees, ensemble flags, and id-mismatch reporting.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sfda::io::synth::SyntheticModelSpec;
use sfda::io::{self, SyntheticHubSpec};

fn sfda_bin() -> &'static str {
    env!("CARGO_BIN_EXE_sfda")
}

fn run(args: &[&str]) -> Output {
    Command::new(sfda_bin()).args(args).output().unwrap()
}

fn gen_hub(dir: &Path, seed: u64, models: usize) -> PathBuf {
    let spec = SyntheticHubSpec {
        seed,
        dataset_name: "clihub".to_string(),
        num_samples: 200,
        num_classes: 4,
        models: (0..models)
            .map(|m| SyntheticModelSpec {
                model_id: Some(format!("m{m}")),
                feature_dim: 6 + 2 * m,
                class_separation: 2.2,
                within_scatter: 0.8,
                label_noise_rate: 0.15 * m as f64,
            })
            .collect(),
    };
    let hub = dir.join(format!("hub_{seed}_{models}"));
    io::generate_synthetic_hub(&spec, &hub).unwrap();
    hub.join("manifest.json")
}

#[test]
fn score_single_model_hub_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_hub(dir.path(), 1, 1);
    let out = dir.path().join("scores.json");
    let output = run(&[
        "score",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let report = io::read_score_report(&out).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].model_id, "m0");
    // Per-model wall-clock goes to stderr.
    assert!(String::from_utf8_lossy(&output.stderr).contains("scored m0"));
}

#[test]
fn missing_labels_file_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_hub(dir.path(), 2, 2);
    let labels = manifest.parent().unwrap().join("labels.bin");
    std::fs::remove_file(&labels).unwrap();
    let out = dir.path().join("scores.json");
    let output = run(&[
        "score",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("labels.bin"), "stderr: {stderr}");
}

#[test]
fn corrupt_manifest_exits_3_not_panic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.json");
    std::fs::write(&manifest, "{ not json").unwrap();
    let out = dir.path().join("scores.json");
    let output = run(&[
        "score",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn declared_dimension_mismatch_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = gen_hub(dir.path(), 3, 1);
    let mut manifest = io::read_manifest(&manifest_path).unwrap();
    manifest.models[0].feature_dim += 1;
    io::write_manifest(&manifest_path, &manifest).unwrap();
    let output = run(&[
        "score",
        "--manifest",
        manifest_path.to_str().unwrap(),
        "--out",
        dir.path().join("s.json").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3));
}

/// Builds a hub by hand so duplicate models and tie cases are exact.
fn write_manual_hub(
    dir: &Path,
    dataset: &str,
    labels: &[usize],
    num_classes: usize,
    models: &[(&str, &Array2<f64>)],
) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    sfda::io::write_label_file(&dir.join("labels.bin"), labels, num_classes).unwrap();
    let manifest = io::HubManifest {
        dataset_name: dataset.to_string(),
        num_classes,
        labels_path: "labels.bin".to_string(),
        models: models
            .iter()
            .map(|(id, features)| {
                let file = format!("{id}.bin");
                sfda::io::write_feature_file(&dir.join(&file), features).unwrap();
                io::ManifestModel {
                    model_id: id.to_string(),
                    features_path: file,
                    feature_dim: features.ncols(),
                }
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    io::write_manifest(&path, &manifest).unwrap();
    path
}

/// Class-informative features along the given dimensions; rounded
/// through f32 so the binary format stores them exactly.
fn informative_features(
    rng: &mut ChaCha8Rng,
    labels: &[usize],
    d: usize,
    active: &[usize],
    separation: f64,
    noise: f64,
) -> Array2<f64> {
    let mut features = Array2::<f64>::zeros((labels.len(), d));
    for (mut row, &y) in features.outer_iter_mut().zip(labels) {
        for (j, v) in row.iter_mut().enumerate() {
            let mean = if active.contains(&j) {
                // Offset each class along the active dims.
                separation * ((y + j) % 3) as f64
            } else {
                0.0
            };
            let g: f64 = rng.sample(StandardNormal);
            *v = ((mean + noise * g) as f32) as f64;
        }
    }
    features
}

#[test]
fn rank_ties_preserve_manifest_order_and_reversal_keeps_multiset() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let labels: Vec<usize> = (0..120).map(|i| i % 3).collect();
    let features = informative_features(&mut rng, &labels, 6, &[0, 1], 2.0, 0.6);
    let weaker = informative_features(&mut rng, &labels, 6, &[0, 1], 2.0, 1.8);

    // Duplicate features under two ids: identical scores, a true tie.
    let manifest = write_manual_hub(
        &dir.path().join("h1"),
        "ties",
        &labels,
        3,
        &[("alpha", &features), ("beta", &features), ("gamma", &weaker)],
    );
    let output = run(&["rank", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    let alpha = lines.iter().position(|l| l.contains("alpha")).unwrap();
    let beta = lines.iter().position(|l| l.contains("beta")).unwrap();
    assert!(alpha < beta, "tied models must keep manifest order:\n{stdout}");
    // Top row is the maximum score.
    assert!(lines[1].contains("alpha"), "{stdout}");

    // Reversed manifest: same score multiset.
    let manifest_rev = write_manual_hub(
        &dir.path().join("h2"),
        "ties",
        &labels,
        3,
        &[("gamma", &weaker), ("beta", &features), ("alpha", &features)],
    );
    let out1 = dir.path().join("r1.json");
    let out2 = dir.path().join("r2.json");
    run(&["rank", "--manifest", manifest.to_str().unwrap(), "--out", out1.to_str().unwrap()]);
    run(&[
        "rank",
        "--manifest",
        manifest_rev.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    let mut scores1: Vec<u64> = io::read_score_report(&out1)
        .unwrap()
        .rows
        .iter()
        .map(|r| r.score.to_bits())
        .collect();
    let mut scores2: Vec<u64> = io::read_score_report(&out2)
        .unwrap()
        .rows
        .iter()
        .map(|r| r.score.to_bits())
        .collect();
    scores1.sort_unstable();
    scores2.sort_unstable();
    assert_eq!(scores1, scores2);

    // In the tied pair, manifest order now favors beta.
    let report2 = io::read_score_report(&out2).unwrap();
    let beta_pos = report2.rows.iter().position(|r| r.model_id == "beta").unwrap();
    let alpha_pos = report2.rows.iter().position(|r| r.model_id == "alpha").unwrap();
    assert!(beta_pos < alpha_pos);
}

#[test]
fn ensemble_r1_equals_sfda_ranking_and_k_equals_m_selects_all() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_hub(dir.path(), 21, 4);
    let out = dir.path().join("ens.json");

    let output = run(&[
        "ensemble",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--k",
        "2",
        "--r",
        "1.0",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let report = io::read_ensemble_report(&out).unwrap();
    assert_eq!(report.selected_top_k, report.sfda_top_k);

    let output = run(&[
        "ensemble",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--k",
        "4",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let report = io::read_ensemble_report(&out).unwrap();
    assert_eq!(report.selected_top_k.len(), 4);
    let mut ids = report.selected_top_k.clone();
    ids.sort();
    assert_eq!(ids, vec!["m0", "m1", "m2", "m3"]);
}

#[test]
fn ensemble_demotes_a_duplicated_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let labels: Vec<usize> = (0..600).map(|i| i % 3).collect();

    // strong + near-duplicate: best transferability, redundant embeddings.
    let strong = informative_features(&mut rng, &labels, 8, &[0, 1], 2.5, 0.5);
    let near_dup = {
        let mut f = strong.clone();
        for v in f.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v = ((*v + 0.01 * g) as f32) as f64;
        }
        f
    };
    // distinct: weaker score but a different informative subspace.
    let distinct = informative_features(&mut rng, &labels, 8, &[4, 5], 2.5, 0.9);

    let manifest = write_manual_hub(
        &dir.path().join("dup"),
        "dup",
        &labels,
        3,
        &[
            ("strong", &strong),
            ("strong_dup", &near_dup),
            ("distinct", &distinct),
        ],
    );
    let out = dir.path().join("ens.json");
    let output = run(&[
        "ensemble",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--k",
        "2",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let report = io::read_ensemble_report(&out).unwrap();

    let mut sfda_pair = report.sfda_top_k.clone();
    sfda_pair.sort();
    assert_eq!(
        sfda_pair,
        vec!["strong", "strong_dup"],
        "transferability alone should pick the duplicate pair"
    );
    assert!(
        report.selected_top_k.contains(&"distinct".to_string()),
        "combined score should promote the complementary model: {report:?}"
    );
    assert!(
        !(report.selected_top_k.contains(&"strong".to_string())
            && report.selected_top_k.contains(&"strong_dup".to_string())),
        "combined score should not keep both duplicates: {report:?}"
    );
}

#[test]
fn ensemble_exclusion_below_k_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    // C = 4 needs D >= 3 for the shared Fisher space; a 2-D model is
    // excluded, leaving one model for k = 2.
    let labels: Vec<usize> = (0..160).map(|i| i % 4).collect();
    let wide = informative_features(&mut rng, &labels, 6, &[0, 1], 2.0, 0.7);
    let thin = informative_features(&mut rng, &labels, 2, &[0, 1], 2.0, 0.7);
    let manifest = write_manual_hub(
        &dir.path().join("thin"),
        "thin",
        &labels,
        4,
        &[("wide", &wide), ("thin", &thin)],
    );
    let output = run(&[
        "ensemble",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().join("e.json").to_str().unwrap(),
        "--k",
        "2",
    ]);
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("excluding model 'thin'"), "stderr: {stderr}");
}

#[test]
fn eval_id_mismatch_exits_3_with_symmetric_difference() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_hub(dir.path(), 51, 2);
    let scores = dir.path().join("scores.json");
    run(&[
        "score",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        scores.to_str().unwrap(),
    ]);
    let truth = dir.path().join("truth.csv");
    std::fs::write(&truth, "model_id,accuracy\nm0,90.0\nmX,80.0\n").unwrap();
    let output = run(&[
        "eval",
        "--scores",
        scores.to_str().unwrap(),
        "--ground-truth",
        truth.to_str().unwrap(),
        "--out",
        dir.path().join("eval.json").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("m1") && stderr.contains("mX"), "stderr: {stderr}");
}

#[test]
fn fda_flags_reach_the_fit() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_hub(dir.path(), 61, 2);
    let out_default = dir.path().join("default.json");
    let out_sigmoid = dir.path().join("sigmoid.json");
    run(&[
        "score",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out_default.to_str().unwrap(),
    ]);
    let output = run(&[
        "score",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out_sigmoid.to_str().unwrap(),
        "--lambda-variant",
        "sigmoid-between",
        "--power-steps",
        "5",
        "--a",
        "2.5",
        "--standardize",
    ]);
    assert_eq!(output.status.code(), Some(0));

    let default_report = io::read_score_report(&out_default).unwrap();
    let sigmoid_report = io::read_score_report(&out_sigmoid).unwrap();
    // The sigmoid rule keeps lambda in (1/2, 1); the default rule
    // underflows toward 0 on sum-scale scatter.
    for row in &sigmoid_report.rows {
        assert!(row.lambda_stage1 > 0.5, "{row:?}");
    }
    for row in &default_report.rows {
        assert!(row.lambda_stage1 < 0.5, "{row:?}");
    }
}

#[test]
fn gen_rejects_invalid_spec_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.json");
    std::fs::write(
        &spec_path,
        r#"{"seed":1,"num_samples":10,"num_classes":4,
            "models":[{"feature_dim":2,"class_separation":1.0,"within_scatter":1.0}]}"#,
    )
    .unwrap();
    let output = run(&[
        "gen",
        "--spec",
        spec_path.to_str().unwrap(),
        "--out",
        dir.path().join("hub").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3));
}
