//! Report files: canonical JSON with deterministic byte-level output.
//!
//! Every float is rendered with exactly nine significant digits in
//! scientific notation, keys follow struct declaration order, and rows
//! are sorted by descending primary score, so identical inputs always
//! produce identical bytes and parse→serialize is idempotent.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter, Serializer};

use crate::ensemble;
use crate::error::{Error, Result};
use crate::pipeline::TransferScore;
use crate::rank_eval::{GroundTruth, GroundTruthRow, RankEvaluation};

pub const SCHEMA_VERSION: u32 = 1;
pub const KIND_SCORES: &str = "transfer-scores";
pub const KIND_ENSEMBLE: &str = "ensemble-selection";
pub const KIND_EVALUATION: &str = "rank-evaluation";

/// Pretty JSON with nine-significant-digit floats.
struct CanonicalFormatter<'a> {
    inner: PrettyFormatter<'a>,
}

impl<'a> CanonicalFormatter<'a> {
    fn new() -> Self {
        CanonicalFormatter {
            inner: PrettyFormatter::new(),
        }
    }
}

impl<'a> Formatter for CanonicalFormatter<'a> {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.8e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{:.8e}", value as f64)
    }

    fn begin_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_array(writer)
    }

    fn end_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object(writer)
    }

    fn end_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_object_value(writer)
    }
}

/// Canonical JSON bytes (with trailing newline) for any serializable
/// value. All floats inside must already be finite.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut serializer = Serializer::with_formatter(&mut out, CanonicalFormatter::new());
    value.serialize(&mut serializer).map_err(|e| Error::Malformed {
        path: "<memory>".into(),
        message: e.to_string(),
    })?;
    out.push(b'\n');
    String::from_utf8(out).map_err(|e| Error::Malformed {
        path: "<memory>".into(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = canonical_json(value)?;
    super::binfmt::write_file(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn check_kind(path: &Path, schema_version: u32, kind: &str, expected: &str) -> Result<()> {
    if schema_version != SCHEMA_VERSION {
        return Err(Error::VersionUnsupported {
            path: path.to_path_buf(),
            version: schema_version,
        });
    }
    if kind != expected {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            message: format!("report kind is '{kind}', expected '{expected}'"),
        });
    }
    Ok(())
}

fn ensure_finite(values: impl IntoIterator<Item = f64>, what: &'static str) -> Result<()> {
    for v in values {
        if !v.is_finite() {
            return Err(Error::InvalidParameter {
                name: what,
                message: format!("non-finite value {v} cannot be serialized"),
            });
        }
    }
    Ok(())
}

/// Transferability scores for a hub, rows sorted by descending score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub schema_version: u32,
    pub kind: String,
    pub dataset_name: String,
    pub rows: Vec<ScoreRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model_id: String,
    pub score: f64,
    pub stage1_mean_logp: f64,
    pub stage2_mean_logp: f64,
    pub lambda_stage1: f64,
    pub lambda_stage2: f64,
    pub degenerate: bool,
    pub clamped_stage1: u64,
    pub clamped_stage2: u64,
    pub n_samples: u64,
}

impl ScoreReport {
    pub fn from_scores(dataset_name: &str, scores: &[TransferScore]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyReport);
        }
        let mut rows: Vec<ScoreRow> = scores
            .iter()
            .map(|s| {
                ensure_finite(
                    [
                        s.score,
                        s.stage1_mean_logp,
                        s.stage2_mean_logp,
                        s.lambda_stage1,
                        s.lambda_stage2,
                    ],
                    "transfer score",
                )?;
                Ok(ScoreRow {
                    model_id: s.model_id.clone(),
                    score: s.score,
                    stage1_mean_logp: s.stage1_mean_logp,
                    stage2_mean_logp: s.stage2_mean_logp,
                    lambda_stage1: s.lambda_stage1,
                    lambda_stage2: s.lambda_stage2,
                    degenerate: s.degenerate,
                    clamped_stage1: s.clamped_stage1 as u64,
                    clamped_stage2: s.clamped_stage2 as u64,
                    n_samples: s.n_samples as u64,
                })
            })
            .collect::<Result<_>>()?;
        rows.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
        Ok(ScoreReport {
            schema_version: SCHEMA_VERSION,
            kind: KIND_SCORES.to_string(),
            dataset_name: dataset_name.to_string(),
            rows,
        })
    }
}

pub fn write_score_report(path: &Path, report: &ScoreReport) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    write_json(path, report)
}

pub fn read_score_report(path: &Path) -> Result<ScoreReport> {
    let report: ScoreReport = read_json(path)?;
    check_kind(path, report.schema_version, &report.kind, KIND_SCORES)?;
    Ok(report)
}

/// Ensemble selection results: combined scores, both top-k lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSelectionReport {
    pub schema_version: u32,
    pub kind: String,
    pub dataset_name: String,
    pub r: f64,
    pub n_ens: u64,
    pub normalized: bool,
    pub selected_top_k: Vec<String>,
    pub sfda_top_k: Vec<String>,
    pub rows: Vec<EnsembleScoreRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleScoreRow {
    pub model_id: String,
    pub t_sfda: f64,
    pub t_com: f64,
    pub t_ens: f64,
}

impl EnsembleSelectionReport {
    pub fn from_report(dataset_name: &str, report: &ensemble::EnsembleReport) -> Result<Self> {
        if report.per_model.is_empty() {
            return Err(Error::EmptyReport);
        }
        let rows = report
            .per_model
            .iter()
            .map(|row| {
                ensure_finite([row.t_sfda, row.t_com, row.t_ens], "ensemble score")?;
                Ok(EnsembleScoreRow {
                    model_id: row.model_id.clone(),
                    t_sfda: row.t_sfda,
                    t_com: row.t_com,
                    t_ens: row.t_ens,
                })
            })
            .collect::<Result<_>>()?;
        Ok(EnsembleSelectionReport {
            schema_version: SCHEMA_VERSION,
            kind: KIND_ENSEMBLE.to_string(),
            dataset_name: dataset_name.to_string(),
            r: report.r,
            n_ens: report.n_ens as u64,
            normalized: report.normalized,
            selected_top_k: report.selected_top_k.clone(),
            sfda_top_k: report.sfda_top_k.clone(),
            rows,
        })
    }
}

pub fn write_ensemble_report(path: &Path, report: &EnsembleSelectionReport) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    write_json(path, report)
}

pub fn read_ensemble_report(path: &Path) -> Result<EnsembleSelectionReport> {
    let report: EnsembleSelectionReport = read_json(path)?;
    check_kind(path, report.schema_version, &report.kind, KIND_ENSEMBLE)?;
    Ok(report)
}

/// Ranking-quality metrics of a score file against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub kind: String,
    pub dataset_name: String,
    pub num_models: u64,
    pub tau: f64,
    pub tau_w: f64,
    pub pearson_r: f64,
    pub pearson_rw: f64,
    pub rel_at_k: Vec<RelAtKEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelAtKEntry {
    pub k: u64,
    pub rel: f64,
}

impl EvaluationReport {
    pub fn from_evaluation(
        dataset_name: &str,
        num_models: usize,
        eval: &RankEvaluation,
    ) -> Result<Self> {
        ensure_finite(
            [eval.tau, eval.tau_w, eval.pearson_r, eval.pearson_rw],
            "evaluation",
        )?;
        ensure_finite(eval.rel_at_k.iter().map(|&(_, rel)| rel), "evaluation")?;
        Ok(EvaluationReport {
            schema_version: SCHEMA_VERSION,
            kind: KIND_EVALUATION.to_string(),
            dataset_name: dataset_name.to_string(),
            num_models: num_models as u64,
            tau: eval.tau,
            tau_w: eval.tau_w,
            pearson_r: eval.pearson_r,
            pearson_rw: eval.pearson_rw,
            rel_at_k: eval
                .rel_at_k
                .iter()
                .map(|&(k, rel)| RelAtKEntry { k: k as u64, rel })
                .collect(),
        })
    }
}

pub fn write_evaluation_report(path: &Path, report: &EvaluationReport) -> Result<()> {
    write_json(path, report)
}

pub fn read_evaluation_report(path: &Path) -> Result<EvaluationReport> {
    let report: EvaluationReport = read_json(path)?;
    check_kind(path, report.schema_version, &report.kind, KIND_EVALUATION)?;
    Ok(report)
}

/// Ground-truth CSV: header `model_id,accuracy`, accuracy as printed
/// percentage.
pub fn read_ground_truth_csv(path: &Path) -> Result<GroundTruth> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::Malformed {
        path: path.to_path_buf(),
        message: "ground truth CSV is not UTF-8".to_string(),
    })?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "model_id,accuracy" => {}
        Some((_, header)) => {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                line: 1,
                message: format!("expected header 'model_id,accuracy', got '{}'", header.trim()),
            })
        }
        None => {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                message: "empty ground truth CSV".to_string(),
            })
        }
    }
    let mut rows = Vec::new();
    for (line_index, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (model_id, accuracy) = line.split_once(',').ok_or_else(|| Error::Csv {
            path: path.to_path_buf(),
            line: line_index + 1,
            message: "expected 'model_id,accuracy'".to_string(),
        })?;
        let accuracy: f64 = accuracy.trim().parse().map_err(|_| Error::Csv {
            path: path.to_path_buf(),
            line: line_index + 1,
            message: format!("bad accuracy '{}'", accuracy.trim()),
        })?;
        rows.push(GroundTruthRow {
            model_id: model_id.trim().to_string(),
            accuracy,
        });
    }
    GroundTruth::new(rows)
}

/// Writes the ground-truth CSV with four decimal places.
pub fn write_ground_truth_csv(path: &Path, truth: &GroundTruth) -> Result<()> {
    let mut text = String::from("model_id,accuracy\n");
    for row in &truth.rows {
        ensure_finite([row.accuracy], "ground truth accuracy")?;
        text.push_str(&format!("{},{:.4}\n", row.model_id, row.accuracy));
    }
    super::binfmt::write_file(path, text.as_bytes())
}
