use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{read_features, write_features};
use super::language::{gen_language, n_scripts, LanguageSpec, PhoneInventory, ToyLanguage};
use super::manifest::{build_manifest, read_manifest, write_manifest, ManifestEntry};
use super::utterance::{gen_utterance, Utterance};
use super::CorpusError;
use crate::par::Execution;
use crate::text::{RomanAlphabet, TextPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    fn code(self) -> u64 {
        self as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_languages: usize,
    pub train_per_language: usize,
    pub valid_per_language: usize,
    pub test_per_language: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub noise_sigma: f64,
    pub d_audio: usize,
    pub d_video: usize,
    pub n_visemes: usize,
    pub language: LanguageSpec,
    /// Fraction of records given a wrong language label with a low
    /// identification confidence, to exercise manifest filtering.
    pub mislabel_rate: f64,
    pub confidence_threshold: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_languages: 5,
            train_per_language: 400,
            valid_per_language: 50,
            test_per_language: 150,
            min_words: 1,
            max_words: 3,
            noise_sigma: 0.3,
            d_audio: 24,
            d_video: 16,
            n_visemes: 9,
            language: LanguageSpec::default(),
            mislabel_rate: 0.05,
            confidence_threshold: 0.95,
            seed: 0,
        }
    }
}

/// A generated corpus: shared inventory, languages, and the confidence-
/// filtered utterances of each split.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub config: CorpusConfig,
    pub inventory: PhoneInventory,
    pub languages: Vec<ToyLanguage>,
    pub train: Vec<Utterance>,
    pub valid: Vec<Utterance>,
    pub test: Vec<Utterance>,
    /// Every record before filtering, with its identification confidence.
    pub raw_entries: Vec<(Split, ManifestEntry)>,
}

pub fn lang_code(i: usize) -> String {
    format!("l{i}")
}

fn mix(seed: u64, parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut z = seed;
    for &p in parts {
        z = z.wrapping_add(p.wrapping_add(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

pub fn generate_corpus(cfg: &CorpusConfig, exec: Execution) -> Result<SynthCorpus, CorpusError> {
    if cfg.n_languages == 0 || cfg.n_languages > n_scripts() {
        return Err(CorpusError::InvalidSpec(format!(
            "n_languages must be in 1..={}",
            n_scripts()
        )));
    }
    if cfg.min_words == 0 || cfg.min_words > cfg.max_words {
        return Err(CorpusError::InvalidSpec("bad word-count bounds".into()));
    }
    let inventory = PhoneInventory::new(
        RomanAlphabet::standard(),
        cfg.d_audio,
        cfg.d_video,
        cfg.n_visemes,
        mix(cfg.seed, &[0xFEED]),
    );
    let languages = (0..cfg.n_languages)
        .map(|i| {
            let spec = LanguageSpec {
                script: i,
                ..cfg.language.clone()
            };
            gen_language(&lang_code(i), mix(cfg.seed, &[1, i as u64]), &spec, &inventory)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut jobs = Vec::new();
    for split in Split::ALL {
        let n = match split {
            Split::Train => cfg.train_per_language,
            Split::Valid => cfg.valid_per_language,
            Split::Test => cfg.test_per_language,
        };
        for li in 0..languages.len() {
            for k in 0..n {
                jobs.push((split, li, k));
            }
        }
    }
    let rendered = exec.map(&jobs, |&(split, li, k)| {
        let seed = mix(cfg.seed, &[2, split.code(), li as u64, k as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FF_EE00);
        let n_words = rng.random_range(cfg.min_words..=cfg.max_words);
        let mut u = gen_utterance(&languages[li], n_words, cfg.noise_sigma, seed);
        u.id = format!("{}-{}-{k:05}", languages[li].lang, split.name());
        let (label, confidence) = if languages.len() > 1 && rng.random_bool(cfg.mislabel_rate) {
            let other = (li + rng.random_range(1..languages.len())) % languages.len();
            (languages[other].lang.clone(), rng.random_range(0.3..0.95))
        } else {
            let tail: f64 = -0.01 * (1.0 - rng.random::<f64>()).ln();
            (u.lang.clone(), (1.0 - tail).max(0.0))
        };
        let entry = ManifestEntry {
            id: u.id.clone(),
            lang: label,
            confidence,
            grapheme: u.pair.grapheme.clone(),
            roman: u.pair.roman.clone(),
            n_frames: u.n_frames(),
            feature_ref: format!("features/{}/{}", split.name(), u.id),
        };
        (split, entry, u)
    });

    let mut corpus = SynthCorpus {
        config: cfg.clone(),
        inventory,
        languages,
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        raw_entries: Vec::with_capacity(rendered.len()),
    };
    for (split, entry, u) in rendered {
        let keep = !build_manifest(std::slice::from_ref(&entry), cfg.confidence_threshold).is_empty();
        corpus.raw_entries.push((split, entry));
        if keep {
            corpus.split_mut(split).push(u);
        }
    }
    Ok(corpus)
}

impl SynthCorpus {
    pub fn split(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<Utterance> {
        match split {
            Split::Train => &mut self.train,
            Split::Valid => &mut self.valid,
            Split::Test => &mut self.test,
        }
    }

    pub fn language(&self, code: &str) -> Option<&ToyLanguage> {
        self.languages.iter().find(|l| l.lang == code)
    }

    pub fn lang_codes(&self) -> Vec<String> {
        self.languages.iter().map(|l| l.lang.clone()).collect()
    }

    /// Grapheme/roman text for every lexicon word combination used as the
    /// text-only corpus: `n_per_language` sentences per language.
    pub fn text_pairs(&self, n_per_language: usize, seed: u64) -> Vec<TextPair> {
        let mut out = Vec::with_capacity(n_per_language * self.languages.len());
        for (li, lang) in self.languages.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, &[3, li as u64]));
            for _ in 0..n_per_language {
                let n = rng.random_range(self.config.min_words..=self.config.max_words);
                let words: Vec<usize> = (0..n).map(|_| rng.random_range(0..lang.lexicon.len())).collect();
                out.push(TextPair {
                    grapheme: words.iter().map(|&w| lang.lexicon[w].as_str()).collect::<Vec<_>>().join(" "),
                    roman: words.iter().map(|&w| lang.lexicon_roman(w)).collect::<Vec<_>>().join(" "),
                    lang: lang.lang.clone(),
                });
            }
        }
        out
    }

    /// Writes `languages.json`, one manifest per language and split (after
    /// confidence filtering) and the per-utterance feature files.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), CorpusError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("manifests"))?;
        let meta = serde_json::json!({
            "config": self.config,
            "inventory": self.inventory,
            "languages": self.languages,
        });
        fs::write(
            dir.join("languages.json"),
            serde_json::to_vec_pretty(&meta).map_err(|e| CorpusError::Io(e.to_string()))?,
        )?;
        for split in Split::ALL {
            let by_id: std::collections::HashMap<&str, &Utterance> =
                self.split(split).iter().map(|u| (u.id.as_str(), u)).collect();
            let entries: Vec<ManifestEntry> = self
                .raw_entries
                .iter()
                .filter(|(s, _)| *s == split)
                .map(|(_, e)| e.clone())
                .collect();
            let kept = build_manifest(&entries, self.config.confidence_threshold);
            for lang in &self.languages {
                let mine: Vec<_> = kept.iter().filter(|e| e.lang == lang.lang).cloned().collect();
                for e in &mine {
                    let u = by_id[e.id.as_str()];
                    write_features(dir.join(format!("{}.audio.f32", e.feature_ref)), &u.audio_feats)?;
                    write_features(dir.join(format!("{}.video.f32", e.feature_ref)), &u.video_feats)?;
                }
                write_manifest(
                    dir.join("manifests").join(format!("{}.{}.jsonl", lang.lang, split.name())),
                    &mine,
                )?;
            }
        }
        Ok(())
    }

    /// Loads a corpus written by [`save`](Self::save). Raw (unfiltered)
    /// records are not persisted, so `raw_entries` holds the kept ones.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let dir = dir.as_ref();
        let meta: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("languages.json"))?)
            .map_err(|e| CorpusError::Io(e.to_string()))?;
        let parse = |k: &str| meta.get(k).cloned().ok_or_else(|| CorpusError::Io(format!("languages.json lacks {k}")));
        let config: CorpusConfig = serde_json::from_value(parse("config")?).map_err(|e| CorpusError::Io(e.to_string()))?;
        let inventory: PhoneInventory =
            serde_json::from_value(parse("inventory")?).map_err(|e| CorpusError::Io(e.to_string()))?;
        let mut languages: Vec<ToyLanguage> =
            serde_json::from_value(parse("languages")?).map_err(|e| CorpusError::Io(e.to_string()))?;
        for l in &mut languages {
            l.reindex()?;
        }
        let mut corpus = SynthCorpus {
            config,
            inventory,
            languages,
            train: Vec::new(),
            valid: Vec::new(),
            test: Vec::new(),
            raw_entries: Vec::new(),
        };
        for split in Split::ALL {
            let mut entries = Vec::new();
            for lang in corpus.lang_codes() {
                let p = dir.join("manifests").join(format!("{lang}.{}.jsonl", split.name()));
                if p.exists() {
                    entries.extend(read_manifest(p)?);
                }
            }
            entries.sort_by(|a, b| a.id.cmp(&b.id));
            for e in entries {
                let u = load_utterance(dir, &e)?;
                corpus.split_mut(split).push(u);
                corpus.raw_entries.push((split, e));
            }
        }
        Ok(corpus)
    }
}

pub fn load_utterance(root: &Path, e: &ManifestEntry) -> Result<Utterance, CorpusError> {
    let audio = read_features(root.join(format!("{}.audio.f32", e.feature_ref)))?;
    let video = read_features(root.join(format!("{}.video.f32", e.feature_ref)))?;
    if audio.nrows() != video.nrows() || audio.nrows() != e.n_frames {
        return Err(CorpusError::Features(format!("{}: frame counts disagree", e.id)));
    }
    Ok(Utterance {
        id: e.id.clone(),
        audio_feats: audio,
        video_feats: video,
        pair: TextPair {
            grapheme: e.grapheme.clone(),
            roman: e.roman.clone(),
            lang: e.lang.clone(),
        },
        lang: e.lang.clone(),
    })
}
