use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Modality, RomanizerConfig, RomanizerError, VisualFrontend};
use crate::nn::{sinusoidal_positions, Checkpoint, Linear, Mat, ParamStore, Tape, TransformerStack, Var};
use crate::par::Execution;

pub const CHECKPOINT_KIND: &str = "romanizer";

/// Per-frame log-probabilities over blank plus the roman alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriorgram {
    pub log_probs: Mat,
}

impl Posteriorgram {
    pub fn n_frames(&self) -> usize {
        self.log_probs.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.log_probs.ncols()
    }
}

#[derive(Debug, Clone)]
enum VisualEncoder {
    Affine(Linear),
    Conv {
        side: usize,
        patch: Linear,
        merge: Linear,
        proj: Linear,
    },
}

#[derive(Debug, Clone)]
pub struct RomanizerModel {
    pub config: RomanizerConfig,
    pub store: ParamStore,
    audio: Linear,
    visual: VisualEncoder,
    fusion: Linear,
    stack: TransformerStack,
    head: Linear,
}

impl RomanizerModel {
    pub fn new(config: RomanizerConfig, seed: u64) -> Result<Self, RomanizerError> {
        Self::build(config, seed, false)
    }

    /// A model whose transformer stack is an exact identity (zeroed residual
    /// branches) and whose fusion weight is `[I; 0]`, so the encoder output
    /// equals the audio encoder output when positions and final norm are off.
    pub fn with_identity_encoder(config: RomanizerConfig, seed: u64) -> Result<Self, RomanizerError> {
        let mut m = Self::build(config, seed, true)?;
        let d = m.config.d_model;
        let w = m.store.get_mut(m.fusion.weight);
        w.fill(0.0);
        for i in 0..d {
            w[[i, i]] = 1.0;
        }
        Ok(m)
    }

    fn build(config: RomanizerConfig, seed: u64, identity: bool) -> Result<Self, RomanizerError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let audio = Linear::new(&mut store, "audio_enc", config.d_audio_in, d, true, &mut rng);
        let visual = match config.visual_frontend {
            VisualFrontend::Affine => {
                VisualEncoder::Affine(Linear::new(&mut store, "visual_enc", config.d_video_in, d, true, &mut rng))
            }
            VisualFrontend::ConvStack { side, channels1, channels2 } => VisualEncoder::Conv {
                side,
                patch: Linear::new(&mut store, "visual_enc.conv1", 16, channels1, true, &mut rng),
                merge: Linear::new(&mut store, "visual_enc.conv2", 4 * channels1, channels2, true, &mut rng),
                proj: Linear::new(&mut store, "visual_enc.proj", channels2, d, true, &mut rng),
            },
        };
        let fusion = Linear::new(&mut store, "fusion", 2 * d, d, false, &mut rng);
        let stack = if identity {
            TransformerStack::identity(&mut store, "encoder", &config.stack(), &mut rng)
        } else {
            TransformerStack::new(&mut store, "encoder", &config.stack(), &mut rng)
        };
        let head = Linear::new(&mut store, "head", d, config.n_classes(), true, &mut rng);
        Ok(Self {
            config,
            store,
            audio,
            visual,
            fusion,
            stack,
            head,
        })
    }

    pub fn n_params(&self) -> usize {
        self.store.n_scalars()
    }

    fn check_inputs(&self, f_a: &Mat, f_v: &Mat) -> Result<(), RomanizerError> {
        let c = &self.config;
        if f_a.ncols() != c.d_audio_in || f_v.ncols() != c.d_video_in {
            return Err(RomanizerError::DimensionMismatch(format!(
                "expected feature widths ({}, {}), got ({}, {})",
                c.d_audio_in,
                c.d_video_in,
                f_a.ncols(),
                f_v.ncols()
            )));
        }
        if f_a.nrows() != f_v.nrows() {
            return Err(RomanizerError::DimensionMismatch(format!(
                "audio has {} frames, video has {}",
                f_a.nrows(),
                f_v.nrows()
            )));
        }
        Ok(())
    }

    fn visual_forward(&self, tape: &mut Tape, f_v: &Mat) -> Var {
        let x = tape.input(f_v.clone());
        match &self.visual {
            VisualEncoder::Affine(l) => l.forward(tape, &self.store, x),
            VisualEncoder::Conv { side, patch, merge, proj } => {
                let (t, side) = (f_v.nrows(), *side);
                let g1 = side / 4;
                let map1: Vec<usize> = (0..t)
                    .flat_map(|f| (0..g1 * g1).map(move |p| (f, p / g1, p % g1)))
                    .flat_map(|(f, pi, pj)| {
                        (0..16).map(move |k| f * side * side + (pi * 4 + k / 4) * side + pj * 4 + k % 4)
                    })
                    .collect();
                let p = tape.rearrange(x, t * g1 * g1, 16, map1);
                let h = patch.forward(tape, &self.store, p);
                let h = tape.gelu(h);
                let c1 = tape.value(h).ncols();
                let g2 = g1 / 2;
                let map2: Vec<usize> = (0..t)
                    .flat_map(|f| (0..g2 * g2).map(move |q| (f, q / g2, q % g2)))
                    .flat_map(|(f, qi, qj)| {
                        (0..4 * c1).map(move |k| {
                            let (dd, c) = (k / c1, k % c1);
                            let row = f * g1 * g1 + (qi * 2 + dd / 2) * g1 + qj * 2 + dd % 2;
                            row * c1 + c
                        })
                    })
                    .collect();
                let q = tape.rearrange(h, t * g2 * g2, 4 * c1, map2);
                let h = merge.forward(tape, &self.store, q);
                let h = tape.gelu(h);
                let pooled = tape.group_mean(h, g2 * g2);
                proj.forward(tape, &self.store, pooled)
            }
        }
    }

    /// Records the encoder on `tape` and returns the `T × D` hidden features
    /// (the layer right before the classification head). Passing `dropout_rng`
    /// enables training-time dropout.
    pub fn encode_on(
        &self,
        tape: &mut Tape,
        f_a: &Mat,
        f_v: &Mat,
        modality: Modality,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, RomanizerError> {
        self.check_inputs(f_a, f_v)?;
        let (t, d) = (f_a.nrows(), self.config.d_model);
        if t == 0 {
            return Ok(tape.input(Mat::zeros((0, d))));
        }
        let a = if modality.uses_audio() {
            let x = tape.input(f_a.clone());
            self.audio.forward(tape, &self.store, x)
        } else {
            tape.input(Mat::zeros((t, d)))
        };
        let v = if modality.uses_video() {
            self.visual_forward(tape, f_v)
        } else {
            tape.input(Mat::zeros((t, d)))
        };
        let av = tape.concat_cols(&[a, v]);
        let mut h = self.fusion.forward(tape, &self.store, av);
        if self.config.positional {
            let pos = tape.input(sinusoidal_positions(t, d));
            h = tape.add(h, pos);
        }
        if let Some(rng) = dropout_rng {
            let p = self.config.dropout;
            if p > 0.0 {
                let keep = 1.0 / (1.0 - p);
                let m = Mat::from_shape_fn((t, d), |_| if rng.random::<f64>() < p { 0.0 } else { keep });
                h = tape.mask(h, m);
            }
        }
        Ok(self.stack.forward(tape, &self.store, h, false, None))
    }

    pub fn logits_on(
        &self,
        tape: &mut Tape,
        f_a: &Mat,
        f_v: &Mat,
        modality: Modality,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, RomanizerError> {
        let h = self.encode_on(tape, f_a, f_v, modality, dropout_rng)?;
        if tape.value(h).nrows() == 0 {
            return Ok(tape.input(Mat::zeros((0, self.config.n_classes()))));
        }
        let z = self.head.forward(tape, &self.store, h);
        Ok(tape.log_softmax(z))
    }

    /// Hidden features `T × D` in eval mode.
    pub fn encode(&self, f_a: &Mat, f_v: &Mat, modality: Modality) -> Result<Mat, RomanizerError> {
        let mut tape = Tape::inference();
        let h = self.encode_on(&mut tape, f_a, f_v, modality, None)?;
        Ok(tape.value(h).clone())
    }

    pub fn forward_logits(&self, f_a: &Mat, f_v: &Mat, modality: Modality) -> Result<Posteriorgram, RomanizerError> {
        let mut tape = Tape::inference();
        let lp = self.logits_on(&mut tape, f_a, f_v, modality, None)?;
        Ok(Posteriorgram {
            log_probs: tape.value(lp).clone(),
        })
    }

    /// Encodes a batch of `(audio, video)` pairs independently.
    pub fn encode_batch(
        &self,
        batch: &[(Mat, Mat)],
        modality: Modality,
        exec: Execution,
    ) -> Result<Vec<Mat>, RomanizerError> {
        exec.map(batch, |(a, v)| self.encode(a, v, modality)).into_iter().collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({ "config": self.config });
        let mut ck = Checkpoint::new(CHECKPOINT_KIND, meta);
        ck.push_store("", &self.store);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, RomanizerError> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let config: RomanizerConfig = serde_json::from_value(ck.meta["config"].clone())
            .map_err(|e| RomanizerError::InvalidConfig(format!("checkpoint config: {e}")))?;
        let mut model = Self::new(config, 0)?;
        ck.restore_store("", &mut model.store)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RomanizerError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RomanizerError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::normal;

    fn small() -> RomanizerConfig {
        RomanizerConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ffn: 32,
            d_audio_in: 6,
            d_video_in: 5,
            ..Default::default()
        }
    }

    fn inputs(t: usize, seed: u64) -> (Mat, Mat) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (normal(t, 6, 1.0, &mut rng), normal(t, 5, 1.0, &mut rng))
    }

    #[test]
    fn shapes_and_empty_input() {
        let m = RomanizerModel::new(small(), 1).unwrap();
        let (a, v) = inputs(17, 2);
        assert_eq!(m.encode(&a, &v, Modality::AudioVisual).unwrap().dim(), (17, 16));
        let (a, v) = inputs(0, 2);
        assert_eq!(m.encode(&a, &v, Modality::AudioVisual).unwrap().dim(), (0, 16));
        assert_eq!(m.forward_logits(&a, &v, Modality::AudioVisual).unwrap().n_frames(), 0);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let m = RomanizerModel::new(small(), 1).unwrap();
        let (a, _) = inputs(4, 2);
        let (_, v) = inputs(5, 2);
        assert!(matches!(
            m.encode(&a, &v, Modality::AudioVisual),
            Err(RomanizerError::DimensionMismatch(_))
        ));
        assert!(m.encode(&a, &Mat::zeros((4, 3)), Modality::AudioVisual).is_err());
    }

    #[test]
    fn identity_encoder_returns_audio_features() {
        let cfg = RomanizerConfig {
            positional: false,
            final_norm: false,
            ..small()
        };
        let m = RomanizerModel::with_identity_encoder(cfg, 3).unwrap();
        let (a, v) = inputs(9, 4);
        let h = m.encode(&a, &v, Modality::AudioVisual).unwrap();
        let mut tape = Tape::inference();
        let x = tape.input(a.clone());
        let fa = m.audio.forward(&mut tape, &m.store, x);
        let expected = tape.value(fa);
        let err = (&h - expected).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
        assert!(err < 1e-12, "max deviation {err}");
    }

    #[test]
    fn posteriors_normalized_finite_and_deterministic() {
        let m = RomanizerModel::new(small(), 5).unwrap();
        let (a, v) = inputs(11, 6);
        let p = m.forward_logits(&a, &v, Modality::AudioVisual).unwrap();
        assert_eq!(p.n_classes(), 29);
        for row in p.log_probs.rows() {
            let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
            assert!(lse.abs() < 1e-5);
            assert!(row.iter().all(|x| x.is_finite()));
        }
        assert_eq!(p, m.forward_logits(&a, &v, Modality::AudioVisual).unwrap());
    }

    #[test]
    fn modality_masking_ignores_absent_stream() {
        let m = RomanizerModel::new(small(), 5).unwrap();
        let (a, v) = inputs(7, 8);
        let (_, v2) = inputs(7, 9);
        let h1 = m.encode(&a, &v, Modality::AudioOnly).unwrap();
        let h2 = m.encode(&a, &v2, Modality::AudioOnly).unwrap();
        assert_eq!(h1, h2);
        assert_ne!(h1, m.encode(&a, &v, Modality::AudioVisual).unwrap());
    }

    #[test]
    fn batch_encoding_is_permutation_equivariant() {
        let m = RomanizerModel::new(small(), 5).unwrap();
        let batch: Vec<_> = (0..4).map(|i| inputs(3 + i, 20 + i as u64)).collect();
        let out = m.encode_batch(&batch, Modality::AudioVisual, Execution::default()).unwrap();
        let perm = [2, 0, 3, 1];
        let permuted: Vec<_> = perm.iter().map(|&i| batch[i].clone()).collect();
        let out_p = m.encode_batch(&permuted, Modality::AudioVisual, Execution::Sequential).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(out_p[k], out[i]);
            assert_eq!(out[i].nrows(), batch[i].0.nrows());
        }
    }

    #[test]
    fn conv_frontend_shapes() {
        let cfg = RomanizerConfig {
            d_video_in: 16 * 16,
            visual_frontend: VisualFrontend::ConvStack { side: 16, channels1: 3, channels2: 5 },
            ..small()
        };
        let m = RomanizerModel::new(cfg, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = normal(4, 6, 1.0, &mut rng);
        let v = normal(4, 256, 1.0, &mut rng);
        assert_eq!(m.encode(&a, &v, Modality::VideoOnly).unwrap().dim(), (4, 16));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = RomanizerModel::new(small(), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.ckpt");
        m.save(&p).unwrap();
        let back = RomanizerModel::load(&p).unwrap();
        assert_eq!(back.config, m.config);
        for ((_, n1, v1), (_, n2, v2)) in m.store.iter().zip(back.store.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(v1, v2);
        }
        let (a, v) = inputs(5, 1);
        assert_eq!(
            m.forward_logits(&a, &v, Modality::AudioVisual).unwrap(),
            back.forward_logits(&a, &v, Modality::AudioVisual).unwrap()
        );
    }
}
