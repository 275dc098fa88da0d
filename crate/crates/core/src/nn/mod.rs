//! Minimal neural-network toolkit: parameter stores, a reverse-mode tape,
//! transformer layers with LoRA hooks, AdamW and a checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;

pub use checkpoint::{Checkpoint, CheckpointError, DType};
pub use gradcheck::finite_difference_check;
pub use layers::{
    linear_with_lora, sinusoidal_positions, AttentionLora, FeedForward, LayerNorm, Linear, Lora,
    MultiHeadAttention, StackConfig, TransformerBlock, TransformerStack,
};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Mat, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
