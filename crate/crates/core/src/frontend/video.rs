use ndarray::{s, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FrontendError;

/// Mouth region-of-interest side length produced by preprocessing.
pub const MOUTH_ROI: usize = 96;
/// Side length after cropping.
pub const CROP: usize = 88;

/// Grayscale mouth crops, `T × H × W`.
pub type VideoClip = Array3<f64>;

/// Crops `T × 96 × 96` frames to `T × 88 × 88`.
///
/// Training draws one crop offset and one horizontal-flip decision
/// (p = 0.5) per utterance and applies them to every frame, keeping lip
/// motion coherent. Evaluation uses the centre crop without flipping.
pub fn augment_video(frames: &VideoClip, train_mode: bool, seed: u64) -> Result<VideoClip, FrontendError> {
    let (_, h, w) = frames.dim();
    if h != MOUTH_ROI || w != MOUTH_ROI {
        return Err(FrontendError::BadDimensions {
            expected: format!("T x {MOUTH_ROI} x {MOUTH_ROI}"),
            found: format!("T x {h} x {w}"),
        });
    }
    let margin = MOUTH_ROI - CROP;
    let (dy, dx, flip) = if train_mode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            rng.random_range(0..=margin),
            rng.random_range(0..=margin),
            rng.random_bool(0.5),
        )
    } else {
        (margin / 2, margin / 2, false)
    };
    let crop = frames.slice(s![.., dy..dy + CROP, dx..dx + CROP]);
    Ok(if flip {
        crop.slice(s![.., .., ..;-1]).to_owned()
    } else {
        crop.to_owned()
    })
}
