use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::TextError;

pub type TokenId = u32;

/// Id reserved for the CTC blank. It never maps to a character.
pub const BLANK_ID: TokenId = 0;

/// The language-agnostic output alphabet: `a`–`z`, space and apostrophe.
///
/// Character ids start at 1; id 0 is the CTC blank, so a posteriorgram over
/// this alphabet has `len() + 1` columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<char>", into = "Vec<char>")]
pub struct RomanAlphabet {
    tokens: Vec<char>,
    token_to_id: HashMap<char, TokenId>,
}

impl RomanAlphabet {
    pub fn standard() -> Self {
        let mut tokens: Vec<char> = ('a'..='z').collect();
        tokens.push(' ');
        tokens.push('\'');
        Self::from_tokens(tokens).expect("standard alphabet is valid")
    }

    pub fn from_tokens(tokens: Vec<char>) -> Result<Self, String> {
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, &c) in tokens.iter().enumerate() {
            if token_to_id.insert(c, i as TokenId + 1).is_some() {
                return Err(format!("duplicate alphabet token {c:?}"));
            }
        }
        Ok(Self { tokens, token_to_id })
    }

    /// Number of characters, excluding the blank.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Output width of a CTC head over this alphabet.
    pub fn n_classes(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn tokens(&self) -> &[char] {
        &self.tokens
    }

    pub fn letters(&self) -> impl Iterator<Item = char> + '_ {
        self.tokens.iter().copied().filter(|c| c.is_alphabetic())
    }

    pub fn contains(&self, c: char) -> bool {
        self.token_to_id.contains_key(&c)
    }

    pub fn id(&self, c: char) -> Option<TokenId> {
        self.token_to_id.get(&c).copied()
    }

    pub fn char_of(&self, id: TokenId) -> Option<char> {
        if id == BLANK_ID {
            return None;
        }
        self.tokens.get(id as usize - 1).copied()
    }

    pub fn space_id(&self) -> Option<TokenId> {
        self.id(' ')
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, TextError> {
        text.chars()
            .enumerate()
            .map(|(position, ch)| {
                self.id(ch)
                    .ok_or(TextError::UnknownToken { ch, position })
            })
            .collect()
    }

    /// Inverse of [`tokenize`](Self::tokenize). Blanks are skipped.
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String, TextError> {
        let mut out = String::with_capacity(ids.len());
        for &id in ids {
            if id == BLANK_ID {
                continue;
            }
            out.push(self.char_of(id).ok_or(TextError::UnknownId(id))?);
        }
        Ok(out)
    }
}

impl Default for RomanAlphabet {
    fn default() -> Self {
        Self::standard()
    }
}

impl TryFrom<Vec<char>> for RomanAlphabet {
    type Error = String;

    fn try_from(tokens: Vec<char>) -> Result<Self, Self::Error> {
        Self::from_tokens(tokens)
    }
}

impl From<RomanAlphabet> for Vec<char> {
    fn from(a: RomanAlphabet) -> Self {
        a.tokens
    }
}

/// A transcript in three renderings: native graphemes, roman text, language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPair {
    pub grapheme: String,
    pub roman: String,
    pub lang: String,
}

impl TextPair {
    pub fn new(
        grapheme: impl Into<String>,
        roman: impl Into<String>,
        lang: impl Into<String>,
        alphabet: &RomanAlphabet,
    ) -> Result<Self, TextError> {
        let pair = Self {
            grapheme: grapheme.into(),
            roman: roman.into(),
            lang: lang.into(),
        };
        if pair.lang.is_empty() {
            return Err(TextError::EmptyLanguage);
        }
        alphabet.tokenize(&pair.roman)?;
        Ok(pair)
    }
}
