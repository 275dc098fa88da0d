use serde::{Deserialize, Serialize};

use super::report::{EvalReport, ReportOptions};
use super::run::{evaluate_cascaded, evaluate_unified, EvalOptions};
use super::EvalError;
use crate::bridge::{pretrain_toy_lm, BridgeConfig, DeromanizerBackend, PretrainConfig, Vocab, ZeroAvsrBridge};
use crate::corpus::{SynthCorpus, ToyLanguage, Utterance};
use crate::par::Execution;
use crate::romanizer::{train_romanizer, RomanizerConfig, RomanizerModel, RomanizerTrainConfig};
use crate::text::TextPair;
use crate::trainer::{multitask_loop, prepare_task1, BridgeTrainConfig, TaskData, TrainState};

/// The unified (LM-bridge) half of the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnifiedSetup {
    pub text_per_language: usize,
    pub pretrain: PretrainConfig,
    pub bridge: BridgeConfig,
    pub training: BridgeTrainConfig,
    pub beam_width: usize,
    pub temperature: f64,
}

impl Default for UnifiedSetup {
    fn default() -> Self {
        Self {
            text_per_language: 3000,
            pretrain: PretrainConfig::default(),
            bridge: BridgeConfig::default(),
            training: BridgeTrainConfig::default(),
            beam_width: 2,
            temperature: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct ZeroShotConfig {
    pub romanizer: RomanizerConfig,
    pub romanizer_training: RomanizerTrainConfig,
    /// When absent only the cascaded path (oracle backend) is evaluated.
    pub unified: Option<UnifiedSetup>,
    /// Cap on test utterances per language.
    pub eval_per_language: Option<usize>,
    pub dominant: Option<String>,
}


#[derive(Debug, Clone)]
pub struct ZeroShotOutcome {
    pub holdout: String,
    pub seen: Vec<String>,
    pub cascaded: EvalReport,
    /// Same pipeline with an untrained romanizer.
    pub baseline: EvalReport,
    pub unified: Option<EvalReport>,
    pub romanizer: RomanizerModel,
    pub bridge: Option<ZeroAvsrBridge>,
}

/// Test utterances of `langs`, at most `cap` per language, in corpus order.
pub fn test_subset(corpus: &SynthCorpus, langs: &[String], cap: Option<usize>) -> Vec<Utterance> {
    let mut counts = std::collections::HashMap::new();
    corpus
        .test
        .iter()
        .filter(|u| langs.contains(&u.lang))
        .filter(|u| {
            let c = counts.entry(u.lang.clone()).or_insert(0usize);
            *c += 1;
            cap.is_none_or(|k| *c <= k)
        })
        .cloned()
        .collect()
}

/// Trains the romanizer on the speech of `all_langs ∖ {holdout}`, gives the
/// text side every language in `all_langs`, then evaluates every language
/// of `all_langs` with the holdout row flagged.
pub fn zero_shot_protocol(
    corpus: &SynthCorpus,
    all_langs: &[String],
    holdout: &str,
    cfg: &ZeroShotConfig,
    seed: u64,
    exec: Execution,
) -> Result<ZeroShotOutcome, EvalError> {
    if !all_langs.iter().any(|l| l == holdout) {
        return Err(EvalError::InvalidConfig(format!("holdout {holdout} is not among the languages")));
    }
    for l in all_langs {
        if corpus.language(l).is_none() {
            return Err(EvalError::InvalidConfig(format!("language {l} is not in the corpus")));
        }
    }
    let seen: Vec<String> = all_langs.iter().filter(|l| *l != holdout).cloned().collect();
    let train: Vec<Utterance> = corpus.train.iter().filter(|u| seen.contains(&u.lang)).cloned().collect();
    let (romanizer, _) = train_romanizer(&train, &cfg.romanizer, &cfg.romanizer_training, seed, exec)?;
    let untrained = RomanizerModel::new(cfg.romanizer.clone(), seed ^ 0x7a65_726f)?;

    let languages: Vec<ToyLanguage> = all_langs.iter().filter_map(|l| corpus.language(l).cloned()).collect();
    let oracle = DeromanizerBackend::oracle(&languages);
    let testset = test_subset(corpus, all_langs, cfg.eval_per_language);
    let opts = EvalOptions {
        report: ReportOptions {
            dominant: cfg.dominant.clone(),
            holdout: Some(holdout.to_string()),
        },
        seed,
        config_hash: super::config_hash(cfg),
        ..Default::default()
    };
    let cascaded = evaluate_cascaded(&romanizer, &oracle, &testset, &opts, exec)?;
    let baseline = evaluate_cascaded(&untrained, &oracle, &testset, &opts, exec)?;

    let (unified, bridge) = match &cfg.unified {
        None => (None, None),
        Some(u) => {
            let bridge = train_bridge(corpus, &languages, &seen, &romanizer, &train, u, seed, exec)?;
            let report = evaluate_unified(&romanizer, &bridge, &testset, u.beam_width, u.temperature, &opts, exec)?;
            (Some(report), Some(bridge))
        }
    };
    Ok(ZeroShotOutcome {
        holdout: holdout.to_string(),
        seen,
        cascaded,
        baseline,
        unified,
        romanizer,
        bridge,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_bridge(
    corpus: &SynthCorpus,
    languages: &[ToyLanguage],
    seen: &[String],
    romanizer: &RomanizerModel,
    speech: &[Utterance],
    setup: &UnifiedSetup,
    seed: u64,
    exec: Execution,
) -> Result<ZeroAvsrBridge, EvalError> {
    let codes: Vec<&str> = languages.iter().map(|l| l.lang.as_str()).collect();
    let pairs: Vec<TextPair> = corpus
        .text_pairs(setup.text_per_language, seed)
        .into_iter()
        .filter(|p| codes.contains(&p.lang.as_str()))
        .collect();
    let vocab = Vocab::build(languages, &romanizer.config.alphabet);
    let (lm, _) = pretrain_toy_lm(&pairs, vocab, &setup.pretrain, seed, exec)?;
    let mut bridge = ZeroAvsrBridge::attach(lm, romanizer.config.d_model, setup.bridge.clone(), seed)?;
    let items = prepare_task1(romanizer, speech, seen, exec)?;
    let data = TaskData {
        task1: &items,
        task2: &pairs,
    };
    let mut state = TrainState::new(setup.training.optimizer, bridge.lm.store.len(), seed);
    multitask_loop(&mut bridge, &data, &setup.training, &mut state, exec, &mut |_, _| Ok(()))?;
    Ok(bridge)
}

/// Holdout × system × language matrix, one block of rows per holdout.
pub fn zero_shot_matrix_csv(outcomes: &[ZeroShotOutcome]) -> String {
    let mut s = String::from("holdout,system,lang,is_holdout,n_utts,cer,wer\n");
    for o in outcomes {
        let systems = [("cascaded", Some(&o.cascaded)), ("baseline", Some(&o.baseline)), ("unified", o.unified.as_ref())];
        for (name, report) in systems {
            let Some(report) = report else { continue };
            for r in &report.rows {
                s.push_str(&format!(
                    "{},{name},{},{},{},{},{}\n",
                    o.holdout, r.lang, r.holdout, r.n_utts, r.cer, r.wer
                ));
            }
        }
    }
    s
}
