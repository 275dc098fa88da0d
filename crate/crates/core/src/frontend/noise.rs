use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AudioWave, FrontendError};
use crate::nn::params::Mat;

fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Measured SNR in dB between a clean signal and the noise added to it.
pub fn snr_db(clean: &[f64], added: &[f64]) -> f64 {
    10.0 * (power(clean) / power(added)).log10()
}

/// Scales `noise` (already aligned to `clean`) so the mixture has the
/// requested SNR, returning the scaled noise.
fn scale_to_snr(clean: &[f64], noise: &[f64], snr: f64) -> Result<Vec<f64>, FrontendError> {
    let pc = power(clean);
    if pc == 0.0 {
        return Err(FrontendError::DegenerateSignal);
    }
    let pn = power(noise);
    if pn == 0.0 {
        return Err(FrontendError::SilentNoise);
    }
    let k = (pc / (pn * 10f64.powf(snr / 10.0))).sqrt();
    Ok(noise.iter().map(|v| v * k).collect())
}

/// Tiles or crops `noise` to `len` samples starting from a seeded offset.
fn align(noise: &[f64], len: usize, stride: usize, seed: u64) -> Vec<f64> {
    let units = noise.len() / stride;
    let offset = ChaCha8Rng::seed_from_u64(seed).random_range(0..units.max(1)) * stride;
    (0..len).map(|i| noise[(offset + i) % noise.len()]).collect()
}

/// Adds `noise` to `clean` at `snr_db`, with SNR measured on mean power.
pub fn mix_noise(clean: &AudioWave, noise: &AudioWave, snr_db: f64, seed: u64) -> Result<AudioWave, FrontendError> {
    if clean.sample_rate != noise.sample_rate {
        return Err(FrontendError::SampleRateMismatch {
            expected: clean.sample_rate,
            found: noise.sample_rate,
        });
    }
    if power(&noise.samples) == 0.0 {
        return Err(FrontendError::SilentNoise);
    }
    let aligned = align(&noise.samples, clean.samples.len(), 1, seed);
    let scaled = scale_to_snr(&clean.samples, &aligned, snr_db)?;
    let samples = clean.samples.iter().zip(&scaled).map(|(c, n)| c + n).collect();
    Ok(AudioWave::new(samples, clean.sample_rate))
}

/// Frame-domain counterpart of [`mix_noise`] for precomputed features:
/// whole noise frames are tiled along time from a seeded offset.
pub fn mix_noise_features(clean: &Mat, noise: &Mat, snr_db: f64, seed: u64) -> Result<Mat, FrontendError> {
    if clean.ncols() != noise.ncols() {
        return Err(FrontendError::BadDimensions {
            expected: format!("{} noise columns", clean.ncols()),
            found: noise.ncols().to_string(),
        });
    }
    let c = clean.as_standard_layout();
    let n = noise.as_standard_layout();
    let (cs, ns) = (c.as_slice().unwrap(), n.as_slice().unwrap());
    if power(ns) == 0.0 {
        return Err(FrontendError::SilentNoise);
    }
    let aligned = align(ns, cs.len(), clean.ncols().max(1), seed);
    let scaled = scale_to_snr(cs, &aligned, snr_db)?;
    let data = cs.iter().zip(&scaled).map(|(a, b)| a + b).collect();
    Ok(Mat::from_shape_vec(clean.dim(), data).expect("shape preserved"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    /// Temporally correlated noise (AR(1) with coefficient 0.95 along time).
    Pink,
    /// Sum of three competing utterances drawn from the bank's sources.
    Babble,
}

/// Stand-in noise categories, sampled uniformly per utterance.
#[derive(Debug, Clone, Default)]
pub struct NoiseBank {
    pub kinds: Vec<NoiseKind>,
    pub sources: Vec<Mat>,
}

impl NoiseBank {
    pub fn new(kinds: Vec<NoiseKind>, sources: Vec<Mat>) -> Self {
        assert!(!kinds.is_empty(), "noise bank needs at least one kind");
        Self { kinds, sources }
    }

    pub fn white() -> Self {
        Self::new(vec![NoiseKind::White], Vec::new())
    }

    pub fn pick(&self, seed: u64) -> NoiseKind {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6B69_6E64);
        let mut k = self.kinds[rng.random_range(0..self.kinds.len())];
        if k == NoiseKind::Babble && self.sources.is_empty() {
            k = NoiseKind::White;
        }
        k
    }

    /// A `t × d` noise matrix of a uniformly drawn category.
    pub fn features(&self, t: usize, d: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self.pick(seed) {
            NoiseKind::White => Mat::from_shape_fn((t, d), |_| StandardNormal.sample(&mut rng)),
            NoiseKind::Pink => {
                let mut m = Mat::zeros((t, d));
                let a: f64 = 0.95;
                let innov = (1.0 - a * a).sqrt();
                for j in 0..d {
                    let mut prev: f64 = StandardNormal.sample(&mut rng);
                    for i in 0..t {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        prev = a * prev + innov * e;
                        m[[i, j]] = prev;
                    }
                }
                m
            }
            NoiseKind::Babble => {
                let mut m = Mat::zeros((t, d));
                for _ in 0..3 {
                    let src = &self.sources[rng.random_range(0..self.sources.len())];
                    assert_eq!(src.ncols(), d, "babble source width");
                    let off = rng.random_range(0..src.nrows().max(1));
                    for i in 0..t {
                        let mut row = m.row_mut(i);
                        row += &src.row((off + i) % src.nrows());
                    }
                }
                m
            }
        }
    }

    /// Waveform noise of `len` samples (babble sources are ignored here).
    pub fn wave(&self, len: usize, sample_rate: u32, seed: u64) -> AudioWave {
        let m = match self.pick(seed) {
            NoiseKind::Babble => NoiseBank::white().features(len, 1, seed),
            _ => self.features(len, 1, seed),
        };
        AudioWave::new(m.into_raw_vec_and_offset().0, sample_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn sine(n: usize) -> AudioWave {
        AudioWave::new((0..n).map(|i| (i as f64 * 0.05).sin() + 0.2).collect(), 16_000)
    }

    fn added(clean: &AudioWave, mixed: &AudioWave) -> Vec<f64> {
        mixed.samples.iter().zip(&clean.samples).map(|(m, c)| m - c).collect()
    }

    #[test]
    fn zero_db_balances_powers() {
        let c = sine(4000);
        let n = NoiseBank::white().wave(1000, 16_000, 3);
        let m = mix_noise(&c, &n, 0.0, 7).unwrap();
        assert!(snr_db(&c.samples, &added(&c, &m)).abs() < 0.1);
    }

    #[test]
    fn high_snr_is_nearly_clean() {
        let c = sine(4000);
        let n = NoiseBank::white().wave(4000, 16_000, 3);
        let m = mix_noise(&c, &n, 60.0, 1).unwrap();
        let rms = power(&c.samples).sqrt();
        let dev = added(&c, &m).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(dev < 1e-2 * rms, "{dev}");
        // max deviation is a few noise sigmas; the RMS deviation is 1e-3 of clean RMS
        assert!((power(&added(&c, &m)).sqrt() / rms - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let c = sine(100);
        let silent = AudioWave::new(vec![0.0; 50], 16_000);
        assert_eq!(mix_noise(&c, &silent, 0.0, 0), Err(FrontendError::SilentNoise));
        let zero = AudioWave::new(vec![0.0; 100], 16_000);
        assert_eq!(mix_noise(&zero, &c, 0.0, 0), Err(FrontendError::DegenerateSignal));
        let other = AudioWave::new(vec![1.0; 10], 8_000);
        assert!(matches!(
            mix_noise(&c, &other, 0.0, 0),
            Err(FrontendError::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn feature_mixing_hits_target() {
        let clean = Mat::from_shape_fn((30, 4), |(i, j)| ((i + j) as f64).cos());
        for kind in [NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble] {
            let bank = NoiseBank::new(vec![kind], vec![clean.clone()]);
            let n = bank.features(10, 4, 5);
            let m = mix_noise_features(&clean, &n, -5.0, 2).unwrap();
            let add = &m - &clean;
            let s = snr_db(clean.as_slice().unwrap(), add.as_slice().unwrap());
            assert!((s + 5.0).abs() < 1e-9, "{kind:?} {s}");
        }
    }

    #[test]
    fn bank_samples_every_kind() {
        let bank = NoiseBank::new(
            vec![NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble],
            vec![Mat::ones((5, 2))],
        );
        let kinds: std::collections::HashSet<_> = (0..50).map(|s| bank.pick(s)).collect();
        assert_eq!(kinds.len(), 3);
    }

    proptest! {
        #[test]
        fn target_snr_within_tenth_db(seed in 0u64..1000, snr in -10.0f64..30.0, n in 50usize..400) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = AudioWave::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), 16_000);
            let noise = NoiseBank::white().wave(97, 16_000, seed + 1);
            let m = mix_noise(&c, &noise, snr, seed).unwrap();
            prop_assert!((snr_db(&c.samples, &added(&c, &m)) - snr).abs() < 0.1);
        }
    }
}
