//! Command-line front end: score a hub of feature sets, rank the models,
//! select top-k ensembles, evaluate score files against ground-truth
//! accuracies, and generate synthetic hubs.
//!
//! Exit codes: 0 success, 2 I/O error, 3 data-validation error,
//! 4 internal error.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use sfda::ensemble::{
    complementarity_scores, ensemble_rank, ensemble_sample_indices, fisher_embeddings,
    EnsembleOptions,
};
use sfda::error::Error;
use sfda::io::{self, EnsembleSelectionReport, EvaluationReport, ScoreReport};
use sfda::pipeline::score_hub_detailed;
use sfda::rank_eval::evaluate_ranking;
use sfda::{FdaOptions, LambdaVariant, Result};

#[derive(Parser)]
#[command(
    name = "sfda",
    version,
    about = "Score, rank, and ensemble-select pre-trained model feature hubs"
)]
struct Cli {
    /// Worker threads (default: all cores; also settable via SFDA_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every model in a hub and write a transfer-score report.
    Score(ScoreArgs),
    /// Score a hub and print the ranking, best model first.
    Rank(RankArgs),
    /// Select a top-k ensemble by combining transferability with
    /// nuclear-norm complementarity.
    Ensemble(EnsembleArgs),
    /// Evaluate a score report against ground-truth accuracies.
    Eval(EvalArgs),
    /// Generate a synthetic hub directory from a spec file.
    Gen(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LambdaFlag {
    /// λ = exp(−a·σ(S_W))
    ExpWithin,
    /// λ = 1/(1 + exp(−a·σ(S_B)))
    SigmoidBetween,
}

#[derive(Args)]
struct FdaFlags {
    /// Regularization sharpness (must be > 0).
    #[arg(long, default_value_t = 4.0)]
    a: f64,

    /// Rule for the adaptive regularization strength.
    #[arg(long, value_enum, default_value_t = LambdaFlag::ExpWithin)]
    lambda_variant: LambdaFlag,

    /// Rounds of the largest-eigenvalue iteration.
    #[arg(long, default_value_t = 3)]
    power_steps: usize,

    /// Standardize features per dimension before fitting.
    #[arg(long)]
    standardize: bool,
}

impl FdaFlags {
    fn to_options(&self) -> FdaOptions {
        FdaOptions {
            a: self.a,
            lambda_variant: match self.lambda_variant {
                LambdaFlag::ExpWithin => LambdaVariant::ExpWithin,
                LambdaFlag::SigmoidBetween => LambdaVariant::SigmoidBetween,
            },
            power_steps: self.power_steps,
            standardize: self.standardize,
        }
    }
}

#[derive(Args)]
struct ScoreArgs {
    /// Hub manifest path.
    #[arg(long)]
    manifest: PathBuf,
    /// Output report path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    fda: FdaFlags,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Optional report path; the ranking always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    fda: FdaFlags,
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of models to select.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Weight of the transferability score against complementarity.
    #[arg(long, default_value_t = 0.5)]
    r: f64,
    /// Samples used for the complementarity score.
    #[arg(long, default_value_t = 3000)]
    n_ens: usize,
    /// Combine raw scores instead of min-max normalized ones.
    #[arg(long)]
    no_normalize_ensemble: bool,
    #[command(flatten)]
    fda: FdaFlags,
}

#[derive(Args)]
struct EvalArgs {
    /// Transfer-score report produced by `score` or `rank`.
    #[arg(long)]
    scores: PathBuf,
    /// Ground-truth CSV (`model_id,accuracy`).
    #[arg(long)]
    ground_truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    /// Synthetic hub spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Hub directory to create.
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let code = match std::panic::catch_unwind(run) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            exit_code(&e)
        }
        Err(_) => {
            eprintln!("internal error: unexpected panic");
            4
        }
    };
    std::process::exit(code);
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 2,
        Error::Numerical { .. } => 4,
        Error::StageFailed { source, .. } => exit_code(source),
        _ => 3,
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var("SFDA_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(threads) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|_| Error::InvalidParameter {
                name: "threads",
                message: "thread pool already initialized".to_string(),
            })?;
    }
    match cli.command {
        Command::Score(args) => cmd_score(args),
        Command::Rank(args) => cmd_rank(args),
        Command::Ensemble(args) => cmd_ensemble(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gen(args) => cmd_gen(args),
    }
}

fn score_hub_from_manifest(
    manifest_path: &Path,
    fda: &FdaFlags,
) -> Result<(io::HubManifest, Vec<sfda::FeatureSet>, Vec<sfda::ScoredModel>)> {
    let (manifest, hub) = io::load_hub(manifest_path)?;
    let scored = score_hub_detailed(&hub, &fda.to_options())?;
    // Wall-clock per model covers only the scoring computation, not file
    // reads.
    for s in &scored {
        eprintln!(
            "scored {} in {:.1} ms",
            s.score.model_id,
            s.elapsed.as_secs_f64() * 1e3
        );
    }
    Ok((manifest, hub, scored))
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let (manifest, _, scored) = score_hub_from_manifest(&args.manifest, &args.fda)?;
    let scores: Vec<_> = scored.into_iter().map(|s| s.score).collect();
    let report = ScoreReport::from_scores(&manifest.dataset_name, &scores)?;
    io::write_score_report(&args.out, &report)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_rank(args: RankArgs) -> Result<()> {
    let (manifest, _, scored) = score_hub_from_manifest(&args.manifest, &args.fda)?;
    let scores: Vec<_> = scored.into_iter().map(|s| s.score).collect();
    let report = ScoreReport::from_scores(&manifest.dataset_name, &scores)?;
    println!("rank  model_id                          score");
    for (position, row) in report.rows.iter().enumerate() {
        println!("{:>4}  {:<32}  {:.9e}", position + 1, row.model_id, row.score);
    }
    if let Some(out) = &args.out {
        io::write_score_report(out, &report)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn cmd_ensemble(args: EnsembleArgs) -> Result<()> {
    let (manifest, hub, scored) = score_hub_from_manifest(&args.manifest, &args.fda)?;

    // Models whose feature dimension cannot reach the shared Fisher
    // dimension C-1 are excluded from selection (they are still scored).
    let required = manifest.num_classes - 1;
    let mut kept_hub = Vec::new();
    let mut kept_models = Vec::new();
    let mut kept_scores = Vec::new();
    for (fs, s) in hub.into_iter().zip(scored) {
        if fs.feature_dim() >= required {
            kept_hub.push(fs);
            kept_models.push(s.stage2);
            kept_scores.push(s.score);
        } else {
            eprintln!(
                "warning: excluding model '{}' from ensemble selection \
                 (feature dimension {} < C-1 = {})",
                fs.model_id,
                fs.feature_dim(),
                required
            );
        }
    }
    if kept_scores.len() < args.k {
        return Err(Error::KTooLarge {
            k: args.k,
            len: kept_scores.len(),
        });
    }

    let embeddings = fisher_embeddings(&kept_hub, &kept_models)?;
    let n = kept_hub[0].num_samples();
    let indices = ensemble_sample_indices(n, args.n_ens);
    let t_com = complementarity_scores(&embeddings, &indices)?;
    let options = EnsembleOptions {
        r: args.r,
        k: args.k,
        n_ens: indices.len(),
        normalize: !args.no_normalize_ensemble,
    };
    let report = ensemble_rank(&kept_scores, &t_com, &options)?;

    let file = EnsembleSelectionReport::from_report(&manifest.dataset_name, &report)?;
    io::write_ensemble_report(&args.out, &file)?;
    println!("selected top-{}: {}", args.k, report.selected_top_k.join(", "));
    println!("sfda-only top-{}: {}", args.k, report.sfda_top_k.join(", "));
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let scores = io::read_score_report(&args.scores)?;
    let truth = io::read_ground_truth_csv(&args.ground_truth)?;

    let score_ids: BTreeSet<&str> = scores.rows.iter().map(|r| r.model_id.as_str()).collect();
    let truth_ids: BTreeSet<&str> = truth.rows.iter().map(|r| r.model_id.as_str()).collect();
    if score_ids != truth_ids {
        return Err(Error::ModelIdMismatch {
            only_in_scores: score_ids
                .difference(&truth_ids)
                .map(|s| s.to_string())
                .collect(),
            only_in_truth: truth_ids
                .difference(&score_ids)
                .map(|s| s.to_string())
                .collect(),
        });
    }

    let t: Vec<f64> = scores.rows.iter().map(|r| r.score).collect();
    let g: Vec<f64> = scores
        .rows
        .iter()
        .map(|r| truth.accuracy_for(&r.model_id).expect("id sets match"))
        .collect();
    let eval = evaluate_ranking(&t, &g, &[1, 3])?;
    let report = EvaluationReport::from_evaluation(&scores.dataset_name, t.len(), &eval)?;
    io::write_evaluation_report(&args.out, &report)?;
    println!(
        "tau {:.6}  tau_w {:.6}  r {:.6}  r_w {:.6}",
        report.tau, report.tau_w, report.pearson_r, report.pearson_rw
    );
    for entry in &report.rel_at_k {
        println!("rel@{} {:.6}", entry.k, entry.rel);
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let spec = io::synth::read_spec(&args.spec)?;
    let (manifest, hub) = io::generate_synthetic_hub(&spec, &args.out)?;
    println!(
        "generated hub '{}' with {} models at {}",
        manifest.dataset_name,
        manifest.models.len(),
        args.out.display()
    );
    println!("oracle accuracies ({}):", args.out.join("oracle.csv").display());
    for row in &hub.oracle.rows {
        println!("  {:<32} {:.4}", row.model_id, row.accuracy);
    }
    Ok(())
}
