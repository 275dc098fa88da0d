use std::collections::BTreeMap;

use super::remote::RemoteChatBackend;
use super::unified::ZeroAvsrBridge;
use super::BridgeError;
use crate::corpus::{deromanize_oracle, ToyLanguage};
use crate::par::Execution;

/// Upper bound on generated grapheme tokens for the toy-LM backend.
pub const DEFAULT_MAX_LEN: usize = 96;

/// Pluggable roman→grapheme converter for the cascaded pipeline.
#[derive(Debug)]
pub enum DeromanizerBackend {
    RemoteChat(Box<RemoteChatBackend>),
    /// Lexicon lookup with the synthetic languages' ground truth.
    LexiconOracle(BTreeMap<String, ToyLanguage>),
    ToyLm { bridge: Box<ZeroAvsrBridge>, max_len: usize },
    /// Returns the roman text unchanged (pipeline sanity checks).
    Identity,
}

impl DeromanizerBackend {
    pub fn oracle(languages: &[ToyLanguage]) -> Self {
        let mut map = BTreeMap::new();
        for l in languages {
            let mut l = l.clone();
            l.reindex().expect("corpus languages have unique romanizations");
            map.insert(l.lang.clone(), l);
        }
        Self::LexiconOracle(map)
    }

    pub fn toy_lm(bridge: ZeroAvsrBridge) -> Self {
        Self::ToyLm {
            bridge: Box::new(bridge),
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::RemoteChat(_) => "remote-chat",
            Self::LexiconOracle(_) => "lexicon-oracle",
            Self::ToyLm { .. } => "toy-lm",
            Self::Identity => "identity",
        }
    }

    pub fn deromanize(&self, roman: &str, lang: &str) -> Result<String, BridgeError> {
        match self {
            Self::RemoteChat(r) => r.deromanize(roman, lang),
            Self::LexiconOracle(langs) => {
                let l = langs.get(lang).ok_or_else(|| BridgeError::UnknownLanguage(lang.to_string()))?;
                Ok(deromanize_oracle(roman, l)?)
            }
            Self::ToyLm { bridge, max_len } => bridge.deromanize(roman, lang, *max_len),
            Self::Identity => Ok(roman.to_string()),
        }
    }

    /// Converts `(roman, lang)` items, in input order. Remote calls use the
    /// backend's bounded concurrency; local kinds follow `exec`.
    pub fn deromanize_many(&self, items: &[(String, String)], exec: Execution) -> Vec<Result<String, BridgeError>> {
        match self {
            Self::RemoteChat(r) => r.deromanize_many(items),
            _ => exec.map(items, |(roman, lang)| self.deromanize(roman, lang)),
        }
    }
}
