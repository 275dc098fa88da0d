//! Deterministic synthetic multilingual corpora: toy languages that share one
//! phone inventory, utterance rendering, and confidence-filtered manifests.

mod features;
mod generate;
mod language;
mod manifest;
mod utterance;

pub use features::{read_features, write_features};
pub use generate::{lang_code, load_utterance, generate_corpus, CorpusConfig, Split, SynthCorpus};
pub use language::{
    deromanize_oracle, gen_language, n_scripts, romanize, script_letters, LanguageSpec,
    PhoneInventory, PhonePrototype, ToyLanguage,
};
pub use manifest::{build_manifest, read_manifest, write_manifest, ManifestEntry};
pub use utterance::{gen_utterance, render_frames, Utterance};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CorpusError {
    #[error("invalid language spec: {0}")]
    InvalidSpec(String),
    #[error("could not build an unambiguous mapping: {0}")]
    InfeasibleMapping(String),
    #[error("grapheme {symbol:?} at position {position} is not in the language")]
    UnknownGrapheme { symbol: char, position: usize },
    #[error("roman word {0:?} maps to more than one lexicon word")]
    AmbiguousWord(String),
    #[error("unknown language {0}")]
    UnknownLanguage(String),
    #[error("feature file: {0}")]
    Features(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e.to_string())
    }
}
