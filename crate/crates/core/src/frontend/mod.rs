//! Audio/visual front end: log-mel features, length synchronization,
//! SNR-controlled noise mixing and utterance-level video augmentation.

mod fbank;
mod noise;
mod video;
mod wav;

pub use fbank::{extract_audio_features, FbankConfig, FBANK_STACK, N_MELS};
pub use noise::{mix_noise, mix_noise_features, snr_db, NoiseBank, NoiseKind};
pub use video::{augment_video, VideoClip, CROP, MOUTH_ROI};
pub use wav::{read_wav, write_wav};

use crate::nn::params::Mat;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_RATE: f64 = 25.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FrontendError {
    #[error("expected sample rate {expected} Hz, found {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },
    #[error("expected {expected} frames/s, found {found}")]
    FrameRateMismatch { expected: f64, found: f64 },
    #[error("audio has {0} frames but video has {1}")]
    LengthMismatch(usize, usize),
    #[error("noise signal has zero power")]
    SilentNoise,
    #[error("clean signal has zero power, SNR is undefined")]
    DegenerateSignal,
    #[error("expected {expected}, found {found}")]
    BadDimensions { expected: String, found: String },
    #[error("wav: {0}")]
    Wav(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioWave {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioWave {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self { samples, sample_rate }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// A `T × D` frame matrix at a fixed frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Mat,
    pub frame_rate: f64,
}

impl FeatureSequence {
    pub fn new(frames: Mat, frame_rate: f64) -> Self {
        Self { frames, frame_rate }
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Maximum audio/video frame-count discrepancy tolerated by [`sync_lengths`].
pub const MAX_SYNC_SLACK: usize = 2;

/// Truncates both streams to the shorter length.
pub fn sync_lengths(
    audio: FeatureSequence,
    video: FeatureSequence,
) -> Result<(FeatureSequence, FeatureSequence), FrontendError> {
    for f in [&audio, &video] {
        if f.frame_rate != FRAME_RATE {
            return Err(FrontendError::FrameRateMismatch {
                expected: FRAME_RATE,
                found: f.frame_rate,
            });
        }
    }
    let (ta, tv) = (audio.len(), video.len());
    if ta.abs_diff(tv) > MAX_SYNC_SLACK {
        return Err(FrontendError::LengthMismatch(ta, tv));
    }
    let t = ta.min(tv);
    let cut = |f: FeatureSequence| {
        if f.len() == t {
            f
        } else {
            FeatureSequence::new(f.frames.slice(ndarray::s![..t, ..]).to_owned(), f.frame_rate)
        }
    };
    Ok((cut(audio), cut(video)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(t: usize) -> FeatureSequence {
        FeatureSequence::new(Mat::from_shape_fn((t, 3), |(i, j)| (i * 3 + j) as f64), FRAME_RATE)
    }

    #[test]
    fn sync_examples() {
        let (a, v) = sync_lengths(seq(40), seq(39)).unwrap();
        assert_eq!((a.len(), v.len()), (39, 39));
        assert_eq!(a.frames.row(38), seq(40).frames.row(38));
        let (a, v) = sync_lengths(seq(10), seq(10)).unwrap();
        assert_eq!((a, v), (seq(10), seq(10)));
        assert_eq!(sync_lengths(seq(40), seq(30)), Err(FrontendError::LengthMismatch(40, 30)));
    }

    #[test]
    fn sync_rejects_other_frame_rates() {
        let mut a = seq(5);
        a.frame_rate = 100.0;
        assert!(matches!(
            sync_lengths(a, seq(5)),
            Err(FrontendError::FrameRateMismatch { .. })
        ));
    }
}
