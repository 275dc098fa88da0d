use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioWave, FeatureSequence, FrontendError, FRAME_RATE, SAMPLE_RATE};
use crate::nn::params::Mat;

pub const N_MELS: usize = 26;
/// Consecutive 100 Hz frames stacked into one 25 Hz frame.
pub const FBANK_STACK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbankConfig {
    pub window: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub stack: usize,
    pub log_floor: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            window: 400,
            hop: 160,
            n_fft: 512,
            n_mels: N_MELS,
            stack: FBANK_STACK,
            log_floor: 1e-10,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    1127.0 * (1.0 + f / 700.0).ln()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * ((m / 1127.0).exp() - 1.0)
}

/// Triangular mel filters over the positive FFT bins, `n_mels × (n_fft/2+1)`.
fn mel_filters(cfg: &FbankConfig, sample_rate: f64) -> Mat {
    let n_bins = cfg.n_fft / 2 + 1;
    let lo = hz_to_mel(0.0);
    let hi = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate / cfg.n_fft as f64;
    Mat::from_shape_fn((cfg.n_mels, n_bins), |(m, b)| {
        let f = b as f64 * bin_hz;
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        if f <= l || f >= r {
            0.0
        } else if f <= c {
            (f - l) / (c - l)
        } else {
            (r - f) / (r - c)
        }
    })
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i - 1 } else { 2 * n - 1 - i };
    }
    i as usize
}

/// Log mel filterbank at 100 frames/s stacked to 25 frames/s.
///
/// Framing follows the non-snipping convention: `(N + hop/2) / hop` frames,
/// each centred on its hop, with edges mirrored. One second of audio gives
/// 100 fbank frames and 25 stacked frames of width `n_mels · stack`.
pub fn extract_audio_features(wave: &AudioWave) -> Result<FeatureSequence, FrontendError> {
    extract_with(wave, &FbankConfig::default())
}

pub fn extract_with(wave: &AudioWave, cfg: &FbankConfig) -> Result<FeatureSequence, FrontendError> {
    if wave.sample_rate != SAMPLE_RATE {
        return Err(FrontendError::SampleRateMismatch {
            expected: SAMPLE_RATE,
            found: wave.sample_rate,
        });
    }
    let n = wave.samples.len();
    let n_frames = if n == 0 { 0 } else { (n + cfg.hop / 2) / cfg.hop };
    let n_stacked = n_frames / cfg.stack;
    let d = cfg.n_mels * cfg.stack;
    let mut out = Mat::zeros((n_stacked, d));
    if n_stacked == 0 {
        return Ok(FeatureSequence::new(out, FRAME_RATE));
    }
    let filters = mel_filters(cfg, wave.sample_rate as f64);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(cfg.n_fft);
    let hamming: Vec<f64> = (0..cfg.window)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (cfg.window - 1) as f64).cos())
        .collect();
    let n_bins = cfg.n_fft / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut power = ndarray::Array1::<f64>::zeros(n_bins);
    for f in 0..n_stacked * cfg.stack {
        let start = (f * cfg.hop + cfg.hop / 2) as isize - (cfg.window / 2) as isize;
        for (k, c) in buf.iter_mut().enumerate() {
            *c = if k < cfg.window {
                Complex::new(wave.samples[reflect(start + k as isize, n)] * hamming[k], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        let energies = filters.dot(&power);
        let (row, slot) = (f / cfg.stack, f % cfg.stack);
        for (m, e) in energies.iter().enumerate() {
            out[[row, slot * cfg.n_mels + m]] = (e + cfg.log_floor).ln();
        }
    }
    Ok(FeatureSequence::new(out, FRAME_RATE))
}
