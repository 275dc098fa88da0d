//! Cascaded and unified evaluation, per-language tables, reconstruction,
//! noise sweeps, the leave-one-language-out protocol and error breakdowns.

mod report;
mod run;
mod zero_shot;

pub use report::{
    config_hash, AggregateRow, EvalReport, LangRow, ReportOptions, RunMeta, UttFailure, UttOutcome, UttScore,
};
pub use run::{
    breakdown_from_romans, cascade_romans, error_breakdown, evaluate_cascaded, evaluate_unified, noise_sweep,
    noise_table_csv, noisy_utterance, reconstruction_test, romanize_testset, ErrorBreakdown, EvalOptions, NoiseRow,
    ReferenceKind, DEFAULT_SNRS,
};
pub use zero_shot::{test_subset, zero_shot_matrix_csv, zero_shot_protocol, UnifiedSetup, ZeroShotConfig, ZeroShotOutcome};

use crate::bridge::BridgeError;
use crate::frontend::FrontendError;
use crate::romanizer::RomanizerError;
use crate::text::TextError;
use crate::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Romanizer(#[from] RomanizerError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Text(#[from] TextError),
}
