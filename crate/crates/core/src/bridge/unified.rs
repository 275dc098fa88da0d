use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adapters::{Adapter, LengthCompressor};
use super::lm::{Generation, LmConfig, ToyLm};
use super::vocab::{Vocab, BOS, EOS, SEP};
use super::BridgeError;
use crate::nn::{AttentionLora, Checkpoint, Lora, Mat, Tape, Var};

pub const BRIDGE_CHECKPOINT_KIND: &str = "bridge";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BridgeConfig {
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            lora_rank: 8,
            lora_alpha: 16.0,
        }
    }
}

/// `[embed(instruction); av_emb; embed(SEP)]` recorded on `tape`.
pub fn embed_multimodal_on(lm: &ToyLm, tape: &mut Tape, av_emb: Var, instruction: &[usize]) -> Result<Var, BridgeError> {
    let width = tape.value(av_emb).ncols();
    if width != lm.d_model() {
        return Err(BridgeError::WidthMismatch {
            expected: lm.d_model(),
            found: width,
        });
    }
    let mut parts = Vec::with_capacity(3);
    if !instruction.is_empty() {
        parts.push(lm.embed_on(tape, instruction));
    }
    parts.push(av_emb);
    parts.push(lm.embed_on(tape, &[SEP]));
    Ok(tape.concat_rows(&parts))
}

pub fn embed_multimodal(lm: &ToyLm, av_emb: &Mat, instruction: &[usize]) -> Result<Mat, BridgeError> {
    let mut tape = Tape::inference();
    let av = tape.input(av_emb.clone());
    let e = embed_multimodal_on(lm, &mut tape, av, instruction)?;
    Ok(tape.value(e).clone())
}

/// The LM with its LoRA factors, the length compressor and the adapter
/// that inject romanizer features. All parameters live in `lm.store`.
#[derive(Debug, Clone)]
pub struct ZeroAvsrBridge {
    pub lm: ToyLm,
    pub config: BridgeConfig,
    /// Width of the romanizer hidden features.
    pub d_av: usize,
    pub lora: Vec<AttentionLora>,
    pub compressor: LengthCompressor,
    pub adapter: Adapter,
}

impl ZeroAvsrBridge {
    pub fn attach(mut lm: ToyLm, d_av: usize, config: BridgeConfig, seed: u64) -> Result<Self, BridgeError> {
        if config.lora_rank == 0 || d_av == 0 {
            return Err(BridgeError::InvalidConfig("lora_rank and d_av must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = lm.d_model();
        let store = &mut lm.store;
        let lora = (0..lm.config.n_layers)
            .map(|i| AttentionLora {
                q: Lora::new(store, &format!("lora.layers.{i}.q"), d, d, config.lora_rank, config.lora_alpha, &mut rng),
                v: Lora::new(store, &format!("lora.layers.{i}.v"), d, d, config.lora_rank, config.lora_alpha, &mut rng),
            })
            .collect();
        let compressor = LengthCompressor::new(store, "compressor", d_av, &mut rng);
        let adapter = Adapter::new(store, "adapter", d_av, d, &mut rng);
        Ok(Self {
            lm,
            config,
            d_av,
            lora,
            compressor,
            adapter,
        })
    }

    /// Parameters updated by Task 1: LoRA, compressor and adapter.
    pub fn task1_mask(&self) -> Vec<bool> {
        self.lm.store.mask_by_prefix(&["lora.", "compressor.", "adapter."])
    }

    /// Parameters updated by Task 2: LoRA only.
    pub fn task2_mask(&self) -> Vec<bool> {
        self.lm.store.mask_by_prefix(&["lora."])
    }

    pub fn vocab(&self) -> &Vocab {
        &self.lm.vocab
    }

    pub fn instruction(&self, lang: &str) -> Result<Vec<usize>, BridgeError> {
        Ok(vec![BOS, self.lm.vocab.lang_id(lang)?])
    }

    fn targets(&self, grapheme: &str) -> Result<Vec<usize>, BridgeError> {
        let mut t = self.lm.vocab.encode_graphemes(grapheme)?;
        t.push(EOS);
        Ok(t)
    }

    /// Compressed and adapted romanizer features, `floor(T/2) × d_lm`.
    pub fn av_embeddings_on(&self, tape: &mut Tape, hidden: &Mat) -> Result<Var, BridgeError> {
        if hidden.ncols() != self.d_av {
            return Err(BridgeError::WidthMismatch {
                expected: self.d_av,
                found: hidden.ncols(),
            });
        }
        let x = tape.input(hidden.clone());
        let c = self.compressor.forward(tape, &self.lm.store, x)?;
        Ok(self.adapter.forward(tape, &self.lm.store, c))
    }

    pub fn av_prefix_on(&self, tape: &mut Tape, hidden: &Mat, lang: &str) -> Result<Var, BridgeError> {
        let instruction = self.instruction(lang)?;
        let av = self.av_embeddings_on(tape, hidden)?;
        embed_multimodal_on(&self.lm, tape, av, &instruction)
    }

    pub fn text_prefix_ids(&self, roman: &str, lang: &str) -> Result<Vec<usize>, BridgeError> {
        let mut ids = self.instruction(lang)?;
        ids.extend(self.lm.vocab.encode_roman(roman)?);
        ids.push(SEP);
        Ok(ids)
    }

    /// Task 1: graphemes from romanizer features.
    pub fn task1_loss_on(&self, tape: &mut Tape, hidden: &Mat, lang: &str, grapheme: &str) -> Result<Var, BridgeError> {
        let prefix = self.av_prefix_on(tape, hidden, lang)?;
        let targets = self.targets(grapheme)?;
        self.lm.loss_on(tape, prefix, &targets, Some(&self.lora))
    }

    /// Task 2: graphemes from roman text.
    pub fn task2_loss_on(&self, tape: &mut Tape, roman: &str, lang: &str, grapheme: &str) -> Result<Var, BridgeError> {
        let ids = self.text_prefix_ids(roman, lang)?;
        let prefix = self.lm.embed_on(tape, &ids);
        let targets = self.targets(grapheme)?;
        self.lm.loss_on(tape, prefix, &targets, Some(&self.lora))
    }

    /// Unified decoding from romanizer features.
    pub fn transcribe(
        &self,
        hidden: &Mat,
        lang: &str,
        beam_width: usize,
        temperature: f64,
        max_len: usize,
    ) -> Result<Generation, BridgeError> {
        let mut tape = Tape::inference();
        let prefix = self.av_prefix_on(&mut tape, hidden, lang)?;
        let prefix = tape.value(prefix).clone();
        self.lm.generate(&prefix, Some(&self.lora), beam_width, temperature, max_len)
    }

    /// Greedy roman→grapheme conversion with the text prompt.
    pub fn deromanize(&self, roman: &str, lang: &str, max_len: usize) -> Result<String, BridgeError> {
        let ids = self.text_prefix_ids(roman, lang)?;
        let prefix = self.lm.embed_ids(&ids);
        Ok(self.lm.generate(&prefix, Some(&self.lora), 1, 1.0, max_len)?.text)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "lm_config": self.lm.config,
            "vocab": self.lm.vocab,
            "bridge_config": self.config,
            "d_av": self.d_av,
        });
        let mut ck = Checkpoint::new(BRIDGE_CHECKPOINT_KIND, meta);
        ck.push_store("", &self.lm.store);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, BridgeError> {
        ck.expect_kind(BRIDGE_CHECKPOINT_KIND)?;
        let field = |k: &str| ck.meta[k].clone();
        let bad = |e: serde_json::Error| BridgeError::InvalidConfig(format!("checkpoint meta: {e}"));
        let lm_config: LmConfig = serde_json::from_value(field("lm_config")).map_err(bad)?;
        let vocab: Vocab = serde_json::from_value(field("vocab")).map_err(bad)?;
        let config: BridgeConfig = serde_json::from_value(field("bridge_config")).map_err(bad)?;
        let d_av: usize = serde_json::from_value(field("d_av")).map_err(bad)?;
        let lm = ToyLm::new(lm_config, vocab, 0)?;
        let mut bridge = Self::attach(lm, d_av, config, 0)?;
        ck.restore_store("", &mut bridge.lm.store)?;
        Ok(bridge)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BridgeError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BridgeError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
