//! Learning-rate schedules and the two-task bridge training loops.

mod schedule;
mod tasks;

pub use schedule::{CosineSchedule, Schedule, TriStageSchedule};
pub use tasks::{
    check_text_coverage, draw_task, multitask_loop, prepare_task1, train_step, train_task1, train_task2,
    write_metrics_csv, BridgeTrainConfig, MetricRow, MultitaskMode, Task, Task1Item, TaskData, TrainReport,
    TrainState, STATE_CHECKPOINT_KIND,
};

use crate::bridge::BridgeError;
use crate::nn::{CheckpointError, Gradients};
use crate::romanizer::RomanizerError;
use crate::par::Execution;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("utterance {utterance} is in language {lang}, which is not a seen language")]
    SeenLanguageViolation { utterance: String, lang: String },
    #[error("no text-only data for language {0}")]
    MissingLanguage(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("frozen parameters changed during {task} step {step}")]
    FreezeViolation { step: u64, task: String },
    #[error("loss diverged at step {step} ({loss})")]
    DivergedLoss { step: u64, loss: f64 },
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Romanizer(#[from] RomanizerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Runs `f` on every job (in parallel when allowed), then averages losses
/// and gradients in job order.
pub fn batch_gradients<T, E, F>(exec: Execution, jobs: &[T], n_params: usize, f: F) -> Result<(f64, Gradients), E>
where
    T: Sync,
    E: Send,
    F: Fn(&T) -> Result<(f64, Gradients), E> + Sync + Send,
{
    let results = exec.map(jobs, f);
    let mut loss = 0.0;
    let mut parts = Vec::with_capacity(results.len());
    for r in results {
        let (l, g) = r?;
        loss += l;
        parts.push(g);
    }
    let n = jobs.len().max(1) as f64;
    let mut grads = Gradients::sum_ordered(n_params, parts);
    grads.scale(1.0 / n);
    Ok((loss / n, grads))
}
