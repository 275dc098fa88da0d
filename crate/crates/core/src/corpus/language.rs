use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::nn::params::{normal, quantize_f32};
use crate::text::RomanAlphabet;

/// Contiguous runs of caseless-in-practice lowercase letters; each toy
/// language draws its graphemes from one script so inventories are disjoint.
const SCRIPTS: &[(&str, u32, u32)] = &[
    ("greek", 0x03B1, 0x03C9),
    ("cyrillic", 0x0430, 0x044F),
    ("armenian", 0x0561, 0x0586),
    ("georgian", 0x10D0, 0x10F0),
    ("hebrew", 0x05D0, 0x05EA),
    ("tifinagh", 0x2D30, 0x2D65),
    ("runic", 0x16A0, 0x16EA),
    ("ethiopic", 0x1200, 0x1248),
];

pub fn script_letters(script: usize) -> Vec<char> {
    let (_, lo, hi) = SCRIPTS[script % SCRIPTS.len()];
    (lo..=hi)
        .filter_map(char::from_u32)
        .filter(|&c| c != '\u{03C2}') // final sigma
        .collect()
}

pub fn n_scripts() -> usize {
    SCRIPTS.len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonePrototype {
    pub audio: Vec<f64>,
    pub video: Vec<f64>,
}

/// The phone inventory shared by every toy language: one audio prototype per
/// roman character and one visual prototype per viseme class.
///
/// Several characters share a viseme, so video alone is less discriminative
/// than clean audio, as with real lip reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneInventory {
    pub alphabet: RomanAlphabet,
    pub d_audio: usize,
    pub d_video: usize,
    pub n_visemes: usize,
    pub seed: u64,
    pub prototypes: BTreeMap<char, PhonePrototype>,
}

impl PhoneInventory {
    pub fn new(alphabet: RomanAlphabet, d_audio: usize, d_video: usize, n_visemes: usize, seed: u64) -> Self {
        assert!(n_visemes >= 2, "need at least two visemes");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let visemes: Vec<_> = (0..n_visemes)
            .map(|_| normal(1, d_video, 1.0, &mut rng))
            .collect();
        let mut prototypes = BTreeMap::new();
        let mut letter_idx = 0;
        for &c in alphabet.tokens() {
            let mut audio = normal(1, d_audio, 1.0, &mut rng);
            quantize_f32(&mut audio);
            // viseme 0 is the closed-mouth pose used by the space
            let v = if c.is_alphabetic() {
                letter_idx += 1;
                1 + (letter_idx - 1) % (n_visemes - 1)
            } else {
                0
            };
            let mut video = visemes[v].clone();
            quantize_f32(&mut video);
            prototypes.insert(
                c,
                PhonePrototype {
                    audio: audio.into_raw_vec_and_offset().0,
                    video: video.into_raw_vec_and_offset().0,
                },
            );
        }
        Self {
            alphabet,
            d_audio,
            d_video,
            n_visemes,
            seed,
            prototypes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub n_graphemes: usize,
    /// Maximum roman expansion of one grapheme (1–3).
    pub max_roman_len: usize,
    pub lexicon_size: usize,
    pub min_word_len: usize,
    pub max_word_len: usize,
    /// Fraction of the 26 letters this language's romanization uses.
    pub letter_coverage: f64,
    /// Index into the script table; determines the grapheme symbols.
    pub script: usize,
}

impl Default for LanguageSpec {
    fn default() -> Self {
        Self {
            n_graphemes: 20,
            max_roman_len: 3,
            lexicon_size: 200,
            min_word_len: 2,
            max_word_len: 6,
            letter_coverage: 0.6,
            script: 0,
        }
    }
}

/// A synthetic language: its own grapheme script, a grapheme→roman rule
/// table over a subset of the shared letters, and a lexicon whose words
/// all have distinct romanizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLanguage {
    pub lang: String,
    pub seed: u64,
    pub graphemes: Vec<char>,
    pub g2r: BTreeMap<char, String>,
    pub phone_prototypes: BTreeMap<char, PhonePrototype>,
    pub lexicon: Vec<String>,
    #[serde(skip)]
    roman_index: HashMap<String, usize>,
}

const MAX_ATTEMPTS_PER_WORD: usize = 200;

fn roman_weights(max_len: usize) -> &'static [f64] {
    match max_len {
        1 => &[1.0],
        2 => &[0.6, 0.4],
        _ => &[0.5, 0.35, 0.15],
    }
}

fn has_adjacent_repeat(s: &str) -> bool {
    s.as_bytes().windows(2).any(|w| w[0] == w[1])
}

pub fn gen_language(
    lang: &str,
    seed: u64,
    spec: &LanguageSpec,
    inventory: &PhoneInventory,
) -> Result<ToyLanguage, CorpusError> {
    if spec.n_graphemes < 2 {
        return Err(CorpusError::InvalidSpec("n_graphemes must be at least 2".into()));
    }
    if !(1..=3).contains(&spec.max_roman_len) || spec.min_word_len == 0 || spec.min_word_len > spec.max_word_len {
        return Err(CorpusError::InvalidSpec("bad roman or word length bounds".into()));
    }
    let symbols = script_letters(spec.script);
    if spec.n_graphemes > symbols.len() {
        return Err(CorpusError::InvalidSpec(format!(
            "script {} has only {} symbols",
            spec.script,
            symbols.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut letters: Vec<char> = inventory.alphabet.letters().collect();
    letters.shuffle(&mut rng);
    let n_letters = ((spec.letter_coverage * letters.len() as f64).ceil() as usize).clamp(2, letters.len());
    letters.truncate(n_letters);
    letters.sort_unstable();

    let graphemes: Vec<char> = symbols[..spec.n_graphemes].to_vec();
    let weights = roman_weights(spec.max_roman_len);
    let mut used = HashSet::new();
    let mut g2r = BTreeMap::new();
    for &g in &graphemes {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS_PER_WORD {
            let len = weighted_index(weights, &mut rng) + 1;
            let mut s = String::with_capacity(len);
            while s.len() < len {
                let c = *letters.choose(&mut rng).expect("non-empty letters");
                if s.ends_with(c) {
                    continue;
                }
                s.push(c);
            }
            if used.insert(s.clone()) {
                g2r.insert(g, s);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(CorpusError::InfeasibleMapping(format!(
                "no unused roman string for grapheme {g:?}"
            )));
        }
    }

    let mut lexicon = Vec::with_capacity(spec.lexicon_size);
    let mut roman_index = HashMap::new();
    let mut seen_words = HashSet::new();
    let budget = spec.lexicon_size * MAX_ATTEMPTS_PER_WORD;
    let mut attempts = 0;
    while lexicon.len() < spec.lexicon_size {
        attempts += 1;
        if attempts > budget {
            return Err(CorpusError::InfeasibleMapping(format!(
                "only {} of {} unambiguous lexicon words found",
                lexicon.len(),
                spec.lexicon_size
            )));
        }
        let len = rng.random_range(spec.min_word_len..=spec.max_word_len);
        let word: String = (0..len)
            .map(|_| *graphemes.choose(&mut rng).expect("graphemes"))
            .collect();
        let roman: String = word.chars().map(|g| g2r[&g].as_str()).collect();
        if has_adjacent_repeat(&roman) || seen_words.contains(&word) || roman_index.contains_key(&roman) {
            continue;
        }
        seen_words.insert(word.clone());
        roman_index.insert(roman, lexicon.len());
        lexicon.push(word);
    }

    Ok(ToyLanguage {
        lang: lang.to_string(),
        seed,
        graphemes,
        g2r,
        phone_prototypes: inventory.prototypes.clone(),
        lexicon,
        roman_index,
    })
}

fn weighted_index(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

impl ToyLanguage {
    /// Rebuilds the derived roman→word index (after deserialization).
    pub fn reindex(&mut self) -> Result<(), CorpusError> {
        self.roman_index.clear();
        for (i, w) in self.lexicon.iter().enumerate() {
            let r = romanize(w, self)?;
            if self.roman_index.insert(r.clone(), i).is_some() {
                return Err(CorpusError::AmbiguousWord(r));
            }
        }
        Ok(())
    }

    /// Roman letters this language's rules can produce.
    pub fn letters(&self) -> Vec<char> {
        let mut set: Vec<char> = self.g2r.values().flat_map(|s| s.chars()).collect();
        set.sort_unstable();
        set.dedup();
        set
    }

    pub fn lexicon_roman(&self, i: usize) -> String {
        romanize(&self.lexicon[i], self).expect("lexicon words romanize")
    }
}

/// Applies the grapheme→roman rules; spaces pass through.
pub fn romanize(grapheme: &str, lang: &ToyLanguage) -> Result<String, CorpusError> {
    let mut out = String::with_capacity(grapheme.len() * 2);
    for (position, g) in grapheme.chars().enumerate() {
        if g == ' ' {
            out.push(' ');
            continue;
        }
        match lang.g2r.get(&g) {
            Some(r) => out.push_str(r),
            None => return Err(CorpusError::UnknownGrapheme { symbol: g, position }),
        }
    }
    Ok(out)
}

/// Lexicon-lookup de-romanizer. Each roman word maps back to the unique
/// lexicon word with that romanization; unknown words pass through as-is.
pub fn deromanize_oracle(roman: &str, lang: &ToyLanguage) -> Result<String, CorpusError> {
    if lang.roman_index.is_empty() && !lang.lexicon.is_empty() {
        let mut fixed = lang.clone();
        fixed.reindex()?;
        return deromanize_oracle(roman, &fixed);
    }
    let words: Vec<&str> = roman
        .split_whitespace()
        .map(|w| match lang.roman_index.get(w) {
            Some(&i) => lang.lexicon[i].as_str(),
            None => w,
        })
        .collect();
    Ok(words.join(" "))
}
