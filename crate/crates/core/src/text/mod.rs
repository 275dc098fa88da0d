//! Roman text handling shared by every stage: normalization, the fixed
//! language-agnostic alphabet, and edit-distance error rates.

mod alphabet;
mod metrics;
mod normalize;

pub use alphabet::{RomanAlphabet, TextPair, TokenId, BLANK_ID};
pub use metrics::{cer, edit_distance, wer, ErrorCounts};
pub use normalize::{normalize_text, NORMALIZER_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TextError {
    #[error("character {ch:?} at position {position} is not in the roman alphabet")]
    UnknownToken { ch: char, position: usize },
    #[error("token id {0} is outside the alphabet")]
    UnknownId(TokenId),
    #[error("reference text is empty")]
    EmptyReference,
    #[error("text pair has an empty language code")]
    EmptyLanguage,
}
