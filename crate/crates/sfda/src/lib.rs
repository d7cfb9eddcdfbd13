//! Scoring, ranking, and ensemble selection for hubs of pre-trained model
//! feature sets, using self-challenging Fisher discriminant analysis
//! (SFDA), plus the rank-correlation measures used to evaluate such
//! rankings against fine-tuning ground truth.

pub mod ensemble;
pub mod error;
pub mod fda;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod rank_eval;

pub use ensemble::{EnsembleOptions, EnsembleReport};
pub use error::{Error, Result};
pub use io::{HubManifest, SyntheticHubSpec};
pub use rank_eval::{GroundTruth, RankEvaluation};
pub use fda::{FdaModel, FdaOptions, FeatureSet, LambdaVariant, ProbabilityTable};
pub use pipeline::{score_hub, sfda_score, ScoredModel, TransferScore};
