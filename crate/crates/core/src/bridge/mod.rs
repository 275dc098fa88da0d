//! Everything between romanizer output and graphemes: instruction prompts
//! and de-romanizer backends for the cascaded pipeline, and the toy LM with
//! length compressor, adapter and LoRA for the unified one.

mod adapters;
mod backend;
mod lm;
mod prompt;
mod remote;
mod unified;
mod vocab;

pub use adapters::{lora_apply, Adapter, LengthCompressor, LoraAdapter};
pub use backend::{DeromanizerBackend, DEFAULT_MAX_LEN};
pub use lm::{
    lm_grad_check, pretrain_toy_lm, sequence_nll, text_sequence, Generation, LmConfig, PretrainConfig, PretrainLog, TextForm,
    ToyLm, LM_CHECKPOINT_KIND,
};
pub use prompt::{build_prompt, extract_answer, ANSWER_CLOSE, ANSWER_OPEN, PROMPT_TEMPLATE, PROMPT_VERSION};
pub use remote::{RemoteChatBackend, RemoteSettings, ResponseCache};
pub use unified::{embed_multimodal, embed_multimodal_on, BridgeConfig, ZeroAvsrBridge, BRIDGE_CHECKPOINT_KIND};
pub use vocab::{Vocab, VocabToken, BOS, EOS, SEP};

use crate::corpus::CorpusError;
use crate::nn::CheckpointError;

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("language {0:?} is not registered")]
    UnknownLanguage(String),
    #[error("no text for language {0:?}")]
    MissingLanguage(String),
    #[error("character {0:?} is not in the LM vocabulary")]
    UnknownToken(char),
    #[error("backend timed out (request {0})")]
    BackendTimeout(String),
    #[error("backend reply could not be parsed: {0}")]
    BackendRefusal(String),
    #[error("backend unreachable: {0}")]
    BackendUnavailable(String),
    #[error("sequence of length {0} is too short to compress")]
    SequenceTooShort(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("embedding width {found} does not match the LM width {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("target sequence is empty")]
    EmptyTarget,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training loss diverged at step {step} (loss {loss})")]
    DivergedLoss { step: u64, loss: f64 },
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
