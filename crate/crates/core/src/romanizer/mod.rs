//! Audio-visual romanizer: modality encoders, channel fusion, a transformer
//! encoder and a CTC head over the roman alphabet.

mod config;
mod ctc;
mod decode;
mod model;
mod train;

pub use config::{Modality, RomanizerConfig, VisualFrontend};
pub use ctc::{ctc_loss, ctc_loss_with_grad};
pub use decode::{collapse_ctc, ctc_beam_decode, ctc_greedy_decode, greedy_ids};
pub use model::{Posteriorgram, RomanizerModel, CHECKPOINT_KIND};
pub use train::{
    ctc_grad_check, ctc_grad_check_masked, train_romanizer, GradCheckItem, NoisePolicy, RomanizerTrainConfig,
    TrainLog, TrainRecord,
};

use crate::nn::CheckpointError;
use crate::text::TextError;

#[derive(Debug, thiserror::Error)]
pub enum RomanizerError {
    #[error("invalid romanizer config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("target of length {target} needs {required} frames but only {frames} are available")]
    TargetTooLong {
        target: usize,
        required: usize,
        frames: usize,
    },
    #[error("CTC target contains the blank token at position {0}")]
    BlankInTarget(usize),
    #[error("training loss diverged at step {step} (loss {loss})")]
    DivergedLoss { step: u64, loss: f64 },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
