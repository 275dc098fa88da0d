use serde::{Deserialize, Serialize};

use super::RomanizerError;
use crate::nn::StackConfig;
use crate::text::RomanAlphabet;

/// How raw visual input reaches the model dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VisualFrontend {
    /// One affine map; suited to compact per-frame descriptors.
    Affine,
    /// Square grayscale frames of `side × side` pixels flattened row-major:
    /// a 4×4/stride-4 patch convolution, a 2×2/stride-2 convolution, GELU
    /// after each, spatial mean pooling and an affine map to the model
    /// dimension.
    ConvStack { side: usize, channels1: usize, channels2: usize },
}

/// Which input streams reach the fusion layer; absent streams are zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    AudioVisual,
    AudioOnly,
    VideoOnly,
}

impl Modality {
    pub fn uses_audio(self) -> bool {
        self != Modality::VideoOnly
    }

    pub fn uses_video(self) -> bool {
        self != Modality::AudioOnly
    }

    pub fn label(self) -> &'static str {
        match self {
            Modality::AudioVisual => "AV",
            Modality::AudioOnly => "A",
            Modality::VideoOnly => "V",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RomanizerConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub d_audio_in: usize,
    pub d_video_in: usize,
    pub alphabet: RomanAlphabet,
    /// Dropout on the fused encoder input during training.
    pub dropout: f64,
    pub visual_frontend: VisualFrontend,
    /// Add sinusoidal absolute positions before the transformer stack.
    pub positional: bool,
    pub final_norm: bool,
    /// Modality used when the caller does not choose one.
    pub modality: Modality,
}

impl Default for RomanizerConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_ffn: 256,
            d_audio_in: 24,
            d_video_in: 16,
            alphabet: RomanAlphabet::standard(),
            dropout: 0.1,
            visual_frontend: VisualFrontend::Affine,
            positional: true,
            final_norm: true,
            modality: Modality::AudioVisual,
        }
    }
}

impl RomanizerConfig {
    pub fn validate(&self) -> Result<(), RomanizerError> {
        let bad = |m: &str| Err(RomanizerError::InvalidConfig(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || self.d_ffn == 0 {
            return bad("d_model, n_heads and d_ffn must be positive");
        }
        if self.d_audio_in == 0 || self.d_video_in == 0 {
            return bad("input dimensions must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if let VisualFrontend::ConvStack { side, channels1, channels2 } = self.visual_frontend {
            if side == 0 || side % 8 != 0 {
                return bad("conv frontend side must be a positive multiple of 8");
            }
            if side * side != self.d_video_in {
                return bad("conv frontend expects d_video_in = side * side");
            }
            if channels1 == 0 || channels2 == 0 {
                return bad("conv channels must be positive");
            }
        }
        Ok(())
    }

    pub fn stack(&self) -> StackConfig {
        StackConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ffn: self.d_ffn,
            final_norm: self.final_norm,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.alphabet.n_classes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(RomanizerConfig::default().validate().is_ok());
        let c = RomanizerConfig { n_heads: 3, ..Default::default() };
        assert!(matches!(c.validate(), Err(RomanizerError::InvalidConfig(_))));
        let c = RomanizerConfig {
            visual_frontend: VisualFrontend::ConvStack { side: 88, channels1: 4, channels2: 4 },
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = RomanizerConfig { d_video_in: 88 * 88, ..c };
        assert!(c.validate().is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let c = RomanizerConfig::default();
        let s = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RomanizerConfig>(&s).unwrap(), c);
    }
}
