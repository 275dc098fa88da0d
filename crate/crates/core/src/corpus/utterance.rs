use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::language::{romanize, ToyLanguage};
use crate::nn::params::{quantize_f32, Mat};
use crate::text::TextPair;

pub const MIN_FRAMES_PER_CHAR: usize = 2;
pub const MAX_FRAMES_PER_CHAR: usize = 5;

/// Frame-synchronous audio and visual features with their transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub audio_feats: Mat,
    pub video_feats: Mat,
    pub pair: TextPair,
    pub lang: String,
}

impl Utterance {
    pub fn n_frames(&self) -> usize {
        self.audio_feats.nrows()
    }
}

/// Renders roman text as prototype frames: each character lasts 2–5 frames,
/// every frame gets isotropic Gaussian noise of scale `noise_sigma`.
pub fn render_frames(
    roman: &str,
    lang: &ToyLanguage,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> (Mat, Mat) {
    let first = lang.phone_prototypes.values().next().expect("prototypes");
    let (da, dv) = (first.audio.len(), first.video.len());
    let mut durations = Vec::with_capacity(roman.len());
    for _ in roman.chars() {
        durations.push(rng.random_range(MIN_FRAMES_PER_CHAR..=MAX_FRAMES_PER_CHAR));
    }
    let t: usize = durations.iter().sum();
    let mut audio = Mat::zeros((t, da));
    let mut video = Mat::zeros((t, dv));
    let mut row = 0;
    for (c, &d) in roman.chars().zip(&durations) {
        let proto = &lang.phone_prototypes[&c];
        for _ in 0..d {
            for (dst, src) in audio.row_mut(row).iter_mut().zip(&proto.audio) {
                *dst = *src;
            }
            for (dst, src) in video.row_mut(row).iter_mut().zip(&proto.video) {
                *dst = *src;
            }
            row += 1;
        }
    }
    if noise_sigma > 0.0 {
        let n = Normal::new(0.0, noise_sigma).expect("finite sigma");
        audio.mapv_inplace(|v| v + n.sample(rng));
        video.mapv_inplace(|v| v + n.sample(rng));
    }
    quantize_f32(&mut audio);
    quantize_f32(&mut video);
    (audio, video)
}

/// Samples `n_words` lexicon words and renders them.
pub fn gen_utterance(lang: &ToyLanguage, n_words: usize, noise_sigma: f64, seed: u64) -> Utterance {
    assert!(n_words >= 1, "n_words must be at least 1");
    assert!(noise_sigma >= 0.0, "noise_sigma must be non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<&str> = (0..n_words)
        .map(|_| lang.lexicon.choose(&mut rng).expect("non-empty lexicon").as_str())
        .collect();
    let grapheme = words.join(" ");
    let roman = romanize(&grapheme, lang).expect("lexicon words romanize");
    let (audio_feats, video_feats) = render_frames(&roman, lang, noise_sigma, &mut rng);
    Utterance {
        id: format!("{}-{seed:08x}", lang.lang),
        audio_feats,
        video_feats,
        pair: TextPair {
            grapheme,
            roman,
            lang: lang.lang.clone(),
        },
        lang: lang.lang.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_language, LanguageSpec, PhoneInventory};
    use crate::text::RomanAlphabet;

    fn lang() -> ToyLanguage {
        let inv = PhoneInventory::new(RomanAlphabet::standard(), 6, 3, 5, 1);
        gen_language("x", 2, &LanguageSpec::default(), &inv).unwrap()
    }

    #[test]
    fn noiseless_frames_copy_prototypes() {
        let mut l = lang();
        l.lexicon = vec![l.graphemes[0].to_string()];
        l.reindex().unwrap();
        let u = gen_utterance(&l, 1, 0.0, 3);
        assert_eq!(u.audio_feats.nrows(), u.video_feats.nrows());
        let first = u.pair.roman.chars().next().unwrap();
        let p = &l.phone_prototypes[&first];
        assert_eq!(u.audio_feats.row(0).to_vec(), p.audio);
        assert_eq!(u.video_feats.row(0).to_vec(), p.video);
        let n = u.pair.roman.len();
        assert!(u.n_frames() >= 2 * n && u.n_frames() <= 5 * n);
    }

    #[test]
    fn deterministic_by_seed() {
        let l = lang();
        assert_eq!(gen_utterance(&l, 3, 0.3, 9), gen_utterance(&l, 3, 0.3, 9));
    }

    #[test]
    fn roman_length_is_sum_of_expansions() {
        let l = lang();
        let u = gen_utterance(&l, 3, 0.1, 5);
        let words: Vec<&str> = u.pair.grapheme.split(' ').collect();
        assert_eq!(words.len(), 3);
        let expected: usize = words
            .iter()
            .flat_map(|w| w.chars())
            .map(|g| l.g2r[&g].len())
            .sum::<usize>()
            + 2;
        assert_eq!(u.pair.roman.len(), expected);
    }
}
