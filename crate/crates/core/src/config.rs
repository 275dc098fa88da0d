//! The experiment config file shared by every command: one TOML document
//! with a table per stage, plus dotted-key overrides.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bridge::{BridgeConfig, PretrainConfig, RemoteSettings};
use crate::corpus::{lang_code, CorpusConfig};
use crate::eval::{ReferenceKind, UnifiedSetup, ZeroShotConfig, DEFAULT_SNRS};
use crate::romanizer::{Modality, RomanizerConfig, RomanizerTrainConfig};
use crate::trainer::{BridgeTrainConfig, Schedule};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override {0:?}: expected key=value")]
    BadOverride(String),
    #[error("override path {0} crosses a non-table value")]
    NotATable(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Cascaded,
    Unified,
    Reconstruction,
    NoiseSweep,
    ZeroShot,
    ErrorBreakdown,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Oracle,
    ToyLm,
    Remote,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub mode: EvalMode,
    pub backend: BackendChoice,
    pub reference: ReferenceKind,
    pub modality: Modality,
    pub beam_width: usize,
    pub temperature: f64,
    pub snr_list: Vec<f64>,
    pub modalities: Vec<Modality>,
    pub dominant: Option<String>,
    /// Zero-shot holdouts; empty means every language in turn.
    pub holdouts: Vec<String>,
    pub eval_per_language: Option<usize>,
    /// Reconstruction sentences per language.
    pub reconstruction_per_language: usize,
    /// Run the unified path inside the zero-shot protocol.
    pub zero_shot_unified: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            mode: EvalMode::Cascaded,
            backend: BackendChoice::Oracle,
            reference: ReferenceKind::Grapheme,
            modality: Modality::AudioVisual,
            beam_width: 2,
            temperature: 0.3,
            snr_list: DEFAULT_SNRS.to_vec(),
            modalities: vec![Modality::AudioOnly, Modality::AudioVisual],
            dominant: None,
            holdouts: Vec::new(),
            eval_per_language: None,
            reconstruction_per_language: 100,
            zero_shot_unified: false,
        }
    }
}

/// Inputs produced by earlier commands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub romanizer: Option<PathBuf>,
    pub lm: Option<PathBuf>,
    pub bridge: Option<PathBuf>,
    /// Train-state checkpoint to resume bridge training from (needs `bridge`).
    pub resume_state: Option<PathBuf>,
    /// Task-1 manifests; empty means the seen languages' train manifests.
    pub task1_manifests: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    /// Languages whose speech trains the romanizer and Task 1.
    pub seen: Vec<String>,
    /// Languages present only as text.
    pub unseen: Vec<String>,
    pub romanizer: RomanizerConfig,
    pub romanizer_training: RomanizerTrainConfig,
    pub lm: PretrainConfig,
    pub text_per_language: usize,
    pub bridge: BridgeConfig,
    pub bridge_training: BridgeTrainConfig,
    /// Save bridge and train-state checkpoints every this many steps (0: end only).
    pub checkpoint_every: u64,
    pub eval: EvalSettings,
    pub remote: RemoteSettings,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let corpus = CorpusConfig::default();
        let n = corpus.n_languages;
        Self {
            seen: (0..n - 1).map(lang_code).collect(),
            unseen: vec![lang_code(n - 1)],
            romanizer: RomanizerConfig {
                d_audio_in: corpus.d_audio,
                d_video_in: corpus.d_video,
                ..Default::default()
            },
            corpus,
            romanizer_training: RomanizerTrainConfig::default(),
            lm: PretrainConfig::default(),
            text_per_language: 3000,
            bridge: BridgeConfig::default(),
            bridge_training: BridgeTrainConfig::default(),
            checkpoint_every: 0,
            eval: EvalSettings::default(),
            remote: RemoteSettings::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses `text` after applying `key=value` overrides (dotted keys;
    /// values parse as TOML and fall back to plain strings). Tables are
    /// merged key by key over the default config, so a partial table keeps
    /// the remaining defaults of the experiment rather than of its type.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let mut doc = toml::Table::try_from(Self::default()).expect("default config serializes to TOML");
        merge_tables(&mut doc, user);
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        Self::from_toml_with_overrides(&std::fs::read_to_string(path)?, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn all_languages(&self) -> Vec<String> {
        (0..self.corpus.n_languages).map(lang_code).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let all = self.all_languages();
        for l in self.seen.iter().chain(&self.unseen) {
            if !all.contains(l) {
                return Err(ConfigError::Invalid(format!("language {l} is not generated by the corpus")));
            }
        }
        if let Some(l) = self.seen.iter().find(|l| self.unseen.contains(l)) {
            return Err(ConfigError::Invalid(format!("language {l} is both seen and unseen")));
        }
        if self.seen.is_empty() {
            return Err(ConfigError::Invalid("no seen languages".into()));
        }
        if self.romanizer.d_audio_in != self.corpus.d_audio || self.romanizer.d_video_in != self.corpus.d_video {
            return Err(ConfigError::Invalid("romanizer input widths must match the corpus features".into()));
        }
        let m = self.bridge_training.mix_ratio;
        if !(m > 0.0 && m < 1.0) {
            return Err(ConfigError::Invalid(format!("mix_ratio must lie in (0, 1), got {m}")));
        }
        self.romanizer.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.lm.lm.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for s in [
            Schedule::TriStage(self.romanizer_training.schedule),
            Schedule::Cosine(self.lm.schedule),
            Schedule::Cosine(self.bridge_training.schedule),
        ] {
            s.validate().map_err(ConfigError::Invalid)?;
        }
        Ok(())
    }

    /// The leave-one-out protocol settings derived from this config.
    pub fn zero_shot(&self) -> ZeroShotConfig {
        ZeroShotConfig {
            romanizer: self.romanizer.clone(),
            romanizer_training: self.romanizer_training.clone(),
            unified: self.eval.zero_shot_unified.then(|| UnifiedSetup {
                text_per_language: self.text_per_language,
                pretrain: self.lm.clone(),
                bridge: self.bridge.clone(),
                training: self.bridge_training.clone(),
                beam_width: self.eval.beam_width,
                temperature: self.eval.temperature,
            }),
            eval_per_language: self.eval.eval_per_language,
            dominant: self.eval.dominant.clone(),
        }
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::BadOverride(spec.to_string()));
    }
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| ConfigError::NotATable(key.to_string()))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml_with_overrides(&text, &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml_with_overrides("", &[]).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn partial_tables_keep_experiment_defaults() {
        let text = "[romanizer_training.schedule]\nwarmup_steps = 7\n\n[lm.schedule]\ntotal_steps = 999\n";
        let cfg = ExperimentConfig::from_toml_with_overrides(text, &[]).unwrap();
        let d = ExperimentConfig::default();
        assert_eq!(cfg.romanizer_training.schedule.warmup_steps, 7);
        assert_eq!(cfg.romanizer_training.schedule.peak_lr, d.romanizer_training.schedule.peak_lr);
        assert_eq!(cfg.lm.schedule.total_steps, 999);
        assert_eq!(cfg.lm.schedule.peak_lr, d.lm.schedule.peak_lr);
        assert_eq!(cfg.lm.schedule.warmup_steps, d.lm.schedule.warmup_steps);
    }

    #[test]
    fn overrides_apply_with_types() {
        let o = [
            "bridge_training.mix_ratio=0.25".to_string(),
            "corpus.seed=7".into(),
            "eval.mode=noise_sweep".into(),
            "seen=[\"l0\", \"l1\"]".into(),
            "remote.model=my-model".into(),
        ];
        let cfg = ExperimentConfig::from_toml_with_overrides("[corpus]\nseed = 1\n", &o).unwrap();
        assert_eq!(cfg.bridge_training.mix_ratio, 0.25);
        assert_eq!(cfg.corpus.seed, 7);
        assert_eq!(cfg.eval.mode, EvalMode::NoiseSweep);
        assert_eq!(cfg.seen, ["l0", "l1"]);
        assert_eq!(cfg.remote.model, "my-model");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for o in [
            "bridge_training.mix_ratio=1.0",
            "seen=[\"l9\"]",
            "unseen=[\"l0\"]",
            "romanizer.d_audio_in=3",
        ] {
            let r = ExperimentConfig::from_toml_with_overrides("", &[o.to_string()]);
            assert!(matches!(r, Err(ConfigError::Invalid(_))), "{o}");
        }
        assert!(matches!(
            ExperimentConfig::from_toml_with_overrides("", &["novalue".into()]),
            Err(ConfigError::BadOverride(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_with_overrides("[corpus]\nseed = 1", &["corpus.seed.x=1".into()]),
            Err(ConfigError::NotATable(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_with_overrides("corpus = 3", &[]),
            Err(ConfigError::Parse(_))
        ));
    }
}
