use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::BridgeError;
use crate::corpus::ToyLanguage;
use crate::text::RomanAlphabet;

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const SEP: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "t", content = "v", rename_all = "snake_case")]
pub enum VocabToken {
    Bos,
    Eos,
    Sep,
    Lang(String),
    Roman(char),
    Grapheme(char),
}

/// Character-level joint vocabulary: control tokens, one tag per language,
/// the roman alphabet and the grapheme symbols of every language (plus the
/// grapheme-side word separator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<VocabToken>", into = "Vec<VocabToken>")]
pub struct Vocab {
    tokens: Vec<VocabToken>,
    index: HashMap<VocabToken, usize>,
}

impl From<Vec<VocabToken>> for Vocab {
    fn from(tokens: Vec<VocabToken>) -> Self {
        let index = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<VocabToken> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn build(languages: &[ToyLanguage], alphabet: &RomanAlphabet) -> Self {
        let mut tokens = vec![VocabToken::Bos, VocabToken::Eos, VocabToken::Sep];
        tokens.extend(languages.iter().map(|l| VocabToken::Lang(l.lang.clone())));
        tokens.extend(alphabet.tokens().iter().map(|&c| VocabToken::Roman(c)));
        let graphemes: BTreeSet<char> = languages
            .iter()
            .flat_map(|l| l.graphemes.iter().copied())
            .chain(std::iter::once(' '))
            .collect();
        tokens.extend(graphemes.into_iter().map(VocabToken::Grapheme));
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&VocabToken> {
        self.tokens.get(id)
    }

    pub fn id(&self, t: &VocabToken) -> Option<usize> {
        self.index.get(t).copied()
    }

    pub fn lang_id(&self, lang: &str) -> Result<usize, BridgeError> {
        self.id(&VocabToken::Lang(lang.to_string()))
            .ok_or_else(|| BridgeError::UnknownLanguage(lang.to_string()))
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().filter_map(|t| match t {
            VocabToken::Lang(l) => Some(l.as_str()),
            _ => None,
        })
    }

    pub fn encode_roman(&self, text: &str) -> Result<Vec<usize>, BridgeError> {
        text.chars()
            .map(|c| self.id(&VocabToken::Roman(c)).ok_or(BridgeError::UnknownToken(c)))
            .collect()
    }

    pub fn encode_graphemes(&self, text: &str) -> Result<Vec<usize>, BridgeError> {
        text.chars()
            .map(|c| self.id(&VocabToken::Grapheme(c)).ok_or(BridgeError::UnknownToken(c)))
            .collect()
    }

    /// Renders roman and grapheme tokens as text; control and language
    /// tokens are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter_map(|&i| match self.tokens.get(i) {
                Some(VocabToken::Roman(c)) | Some(VocabToken::Grapheme(c)) => Some(*c),
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_language, LanguageSpec, PhoneInventory};

    #[test]
    fn covers_every_grapheme_and_round_trips() {
        let inv = PhoneInventory::new(RomanAlphabet::standard(), 4, 4, 5, 1);
        let langs: Vec<_> = (0..2)
            .map(|i| {
                let spec = LanguageSpec { script: i, ..Default::default() };
                gen_language(&format!("l{i}"), i as u64, &spec, &inv).unwrap()
            })
            .collect();
        let v = Vocab::build(&langs, &RomanAlphabet::standard());
        for l in &langs {
            for &g in &l.graphemes {
                assert!(v.id(&VocabToken::Grapheme(g)).is_some());
            }
        }
        assert_eq!(v.id(&VocabToken::Sep), Some(SEP));
        let word = &langs[1].lexicon[0];
        assert_eq!(&v.decode(&v.encode_graphemes(word).unwrap()), word);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
        assert!(matches!(v.lang_id("xx"), Err(BridgeError::UnknownLanguage(_))));
    }
}
