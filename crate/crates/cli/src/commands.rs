use std::path::{Path, PathBuf};

use log::info;
use zero_avsr::bridge::{
    pretrain_toy_lm, DeromanizerBackend, RemoteChatBackend, ToyLm, Vocab, ZeroAvsrBridge,
};
use zero_avsr::config::{BackendChoice, EvalMode, ExperimentConfig};
use zero_avsr::corpus::{generate_corpus, load_utterance, read_manifest, romanize, SynthCorpus, Utterance};
use zero_avsr::eval::{self, EvalOptions, ReportOptions};
use zero_avsr::frontend::NoiseBank;
use zero_avsr::romanizer::{train_romanizer, RomanizerModel};
use zero_avsr::text::TextPair;
use zero_avsr::trainer::{
    multitask_loop, prepare_task1, write_metrics_csv, MetricRow, TaskData, TrainState,
};
use zero_avsr::nn::Checkpoint;
use zero_avsr::Execution;

use crate::{CliError, Command};

pub struct Run {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub overrides: Vec<String>,
    pub exec: Execution,
}

pub fn execute(run: &Run) -> Result<(), CliError> {
    let text = match &run.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = ExperimentConfig::from_toml_with_overrides(&text, &run.overrides)?;
    if let Command::GenCorpus = run.command {
        cfg.corpus.seed = run.seed;
    }
    std::fs::create_dir_all(&run.out)?;
    std::fs::write(run.out.join("config.toml"), cfg.to_toml())?;
    match run.command {
        Command::GenCorpus => gen_corpus(&cfg, run),
        Command::TrainRomanizer => train_romanizer_cmd(&cfg, run),
        Command::PretrainLm => pretrain_lm(&cfg, run),
        Command::TrainBridge => train_bridge(&cfg, run),
        Command::Eval => eval_cmd(&cfg, run),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(format!("paths.{key} must be set for this command")))
}

fn load_corpus(cfg: &ExperimentConfig) -> Result<SynthCorpus, CliError> {
    let dir = required(&cfg.paths.corpus, "corpus")?;
    if !dir.join("languages.json").exists() {
        return Err(CliError::Config(format!("no corpus at {}", dir.display())));
    }
    Ok(SynthCorpus::load(dir)?)
}

fn load_romanizer(cfg: &ExperimentConfig) -> Result<RomanizerModel, CliError> {
    Ok(RomanizerModel::load(required(&cfg.paths.romanizer, "romanizer")?)?)
}

fn load_bridge(cfg: &ExperimentConfig) -> Result<ZeroAvsrBridge, CliError> {
    Ok(ZeroAvsrBridge::load(required(&cfg.paths.bridge, "bridge")?)?)
}

fn text_pairs(cfg: &ExperimentConfig, corpus: &SynthCorpus, seed: u64) -> Vec<TextPair> {
    corpus.text_pairs(cfg.text_per_language, seed)
}

fn gen_corpus(cfg: &ExperimentConfig, run: &Run) -> Result<(), CliError> {
    let corpus = generate_corpus(&cfg.corpus, run.exec)?;
    corpus.save(&run.out)?;
    info!(
        "corpus: {} languages, {}/{}/{} utterances",
        corpus.languages.len(),
        corpus.train.len(),
        corpus.valid.len(),
        corpus.test.len()
    );
    Ok(())
}

fn train_romanizer_cmd(cfg: &ExperimentConfig, run: &Run) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    let train: Vec<Utterance> = corpus.train.iter().filter(|u| cfg.seen.contains(&u.lang)).cloned().collect();
    info!("romanizer: {} utterances from {:?}", train.len(), cfg.seen);
    let (model, log) = train_romanizer(&train, &cfg.romanizer, &cfg.romanizer_training, run.seed, run.exec)?;
    model.save(run.out.join("romanizer.ckpt"))?;
    let rows: Vec<MetricRow> = log
        .records
        .iter()
        .map(|r| MetricRow {
            step: r.step,
            task: "romanizer".into(),
            loss: r.loss,
            lr: r.lr,
        })
        .collect();
    write_metrics_csv(run.out.join("metrics.csv"), &rows)?;
    info!("probe loss {:.4} -> {:.4}", log.probe_initial, log.probe_final);
    Ok(())
}

fn pretrain_lm(cfg: &ExperimentConfig, run: &Run) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    let pairs = text_pairs(cfg, &corpus, run.seed);
    let vocab = Vocab::build(&corpus.languages, &cfg.romanizer.alphabet);
    let (lm, log) = pretrain_toy_lm(&pairs, vocab, &cfg.lm, run.seed, run.exec)?;
    lm.save(run.out.join("lm.ckpt"))?;
    let rows: Vec<MetricRow> = log
        .records
        .iter()
        .map(|&(step, loss, lr)| MetricRow {
            step,
            task: "lm".into(),
            loss,
            lr,
        })
        .collect();
    write_metrics_csv(run.out.join("metrics.csv"), &rows)?;
    Ok(())
}

fn task1_utterances(cfg: &ExperimentConfig, corpus: &SynthCorpus) -> Result<Vec<Utterance>, CliError> {
    if cfg.paths.task1_manifests.is_empty() {
        return Ok(corpus.train.iter().filter(|u| cfg.seen.contains(&u.lang)).cloned().collect());
    }
    let root = required(&cfg.paths.corpus, "corpus")?;
    let mut out = Vec::new();
    for m in &cfg.paths.task1_manifests {
        for e in read_manifest(m)? {
            out.push(load_utterance(root, &e)?);
        }
    }
    Ok(out)
}

fn train_bridge(cfg: &ExperimentConfig, run: &Run) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    let romanizer = load_romanizer(cfg)?;
    let speech = task1_utterances(cfg, &corpus)?;
    let items = prepare_task1(&romanizer, &speech, &cfg.seen, run.exec)?;
    let pairs = text_pairs(cfg, &corpus, run.seed);
    let (mut bridge, mut state) = match &cfg.paths.resume_state {
        Some(state) => {
            let bridge = load_bridge(cfg)?;
            let state = TrainState::from_checkpoint(&Checkpoint::load(state)?)?;
            info!("resuming bridge training at step {}", state.step);
            (bridge, state)
        }
        None => {
            let lm = ToyLm::load(required(&cfg.paths.lm, "lm")?)?;
            let bridge = ZeroAvsrBridge::attach(lm, romanizer.config.d_model, cfg.bridge.clone(), run.seed)?;
            let state = TrainState::new(cfg.bridge_training.optimizer, bridge.lm.store.len(), run.seed);
            (bridge, state)
        }
    };
    let data = TaskData {
        task1: &items,
        task2: &pairs,
    };
    let out = run.out.clone();
    let every = cfg.checkpoint_every;
    let mut save = |b: &ZeroAvsrBridge, s: &TrainState| -> Result<(), zero_avsr::trainer::TrainError> {
        if every > 0 && s.step.is_multiple_of(every) {
            let step_dir = out.join(format!("step-{:06}", s.step));
            std::fs::create_dir_all(&step_dir).map_err(|e| zero_avsr::trainer::TrainError::InvalidConfig(e.to_string()))?;
            b.save(step_dir.join("bridge.ckpt"))?;
            s.to_checkpoint().save(step_dir.join("train_state.ckpt"))?;
        }
        Ok(())
    };
    let report = multitask_loop(&mut bridge, &data, &cfg.bridge_training, &mut state, run.exec, &mut save)?;
    bridge.save(run.out.join("bridge.ckpt"))?;
    state.to_checkpoint().save(run.out.join("train_state.ckpt"))?;
    write_metrics_csv(run.out.join("metrics.csv"), &report.metrics)?;
    info!(
        "bridge: {} task-1 and {} task-2 steps, loss EMA {:?}",
        state.task_counts[0], state.task_counts[1], state.ema
    );
    Ok(())
}

fn backend(cfg: &ExperimentConfig, corpus: &SynthCorpus) -> Result<DeromanizerBackend, CliError> {
    Ok(match cfg.eval.backend {
        BackendChoice::Oracle => DeromanizerBackend::oracle(&corpus.languages),
        BackendChoice::Identity => DeromanizerBackend::Identity,
        BackendChoice::ToyLm => DeromanizerBackend::toy_lm(load_bridge(cfg)?),
        BackendChoice::Remote => {
            let mut settings = cfg.remote.clone();
            if settings.languages.is_empty() {
                settings.languages = corpus.lang_codes().into_iter().map(|l| (l.clone(), l)).collect();
            }
            DeromanizerBackend::RemoteChat(Box::new(RemoteChatBackend::new(settings)?))
        }
    })
}

fn options(cfg: &ExperimentConfig, seed: u64) -> EvalOptions {
    EvalOptions {
        reference: cfg.eval.reference,
        modality: cfg.eval.modality,
        report: ReportOptions {
            dominant: cfg.eval.dominant.clone(),
            holdout: None,
        },
        seed,
        config_hash: eval::config_hash(cfg),
    }
}

/// Every scored utterance failed in the backend: an infrastructure problem.
fn check_backend(report: &eval::EvalReport) -> Result<(), CliError> {
    if report.utterances.is_empty() && !report.failures.is_empty() {
        return Err(CliError::Backend(format!(
            "all {} requests failed, first: {}",
            report.failures.len(),
            report.failures[0].error
        )));
    }
    Ok(())
}

fn eval_cmd(cfg: &ExperimentConfig, run: &Run) -> Result<(), CliError> {
    let corpus = load_corpus(cfg)?;
    let all = corpus.lang_codes();
    let testset = eval::test_subset(&corpus, &all, cfg.eval.eval_per_language);
    let opts = options(cfg, run.seed);
    let exec = run.exec;
    match cfg.eval.mode {
        EvalMode::Cascaded => {
            let romanizer = load_romanizer(cfg)?;
            let b = backend(cfg, &corpus)?;
            let report = eval::evaluate_cascaded(&romanizer, &b, &testset, &opts, exec)?;
            report.write(&run.out, "cascaded")?;
            print!("{}", report.to_text());
            check_backend(&report)
        }
        EvalMode::Unified => {
            let romanizer = load_romanizer(cfg)?;
            let bridge = load_bridge(cfg)?;
            let report = eval::evaluate_unified(
                &romanizer,
                &bridge,
                &testset,
                cfg.eval.beam_width,
                cfg.eval.temperature,
                &opts,
                exec,
            )?;
            report.write(&run.out, "unified")?;
            print!("{}", report.to_text());
            Ok(())
        }
        EvalMode::Reconstruction => {
            let b = backend(cfg, &corpus)?;
            let pairs = corpus.text_pairs(cfg.eval.reconstruction_per_language, run.seed);
            let rom = |p: &TextPair| -> Result<String, String> {
                let lang = corpus.language(&p.lang).ok_or_else(|| format!("unknown language {}", p.lang))?;
                romanize(&p.grapheme, lang).map_err(|e| e.to_string())
            };
            let derom = |r: &str, l: &str| b.deromanize(r, l).map_err(|e| e.to_string());
            let report = eval::reconstruction_test(&pairs, rom, derom, &opts, exec);
            report.write(&run.out, "reconstruction")?;
            print!("{}", report.to_text());
            check_backend(&report)
        }
        EvalMode::NoiseSweep => {
            let romanizer = load_romanizer(cfg)?;
            let b = backend(cfg, &corpus)?;
            let sources = corpus.train.iter().take(32).map(|u| u.audio_feats.clone()).collect();
            let bank = NoiseBank::new(cfg.romanizer_training.noise.kinds.clone(), sources);
            let rows = eval::noise_sweep(
                &romanizer,
                &b,
                &testset,
                &bank,
                &cfg.eval.snr_list,
                &cfg.eval.modalities,
                &opts,
                exec,
            )?;
            let csv = eval::noise_table_csv(&rows);
            std::fs::write(run.out.join("noise_sweep.csv"), &csv)?;
            print!("{csv}");
            Ok(())
        }
        EvalMode::ZeroShot => {
            let holdouts = if cfg.eval.holdouts.is_empty() {
                all.clone()
            } else {
                cfg.eval.holdouts.clone()
            };
            let zcfg = cfg.zero_shot();
            let mut outcomes = Vec::new();
            for h in &holdouts {
                info!("zero-shot: holding out {h}");
                let o = eval::zero_shot_protocol(&corpus, &all, h, &zcfg, run.seed, exec)?;
                o.cascaded.write(&run.out, &format!("zero_shot_{h}_cascaded"))?;
                o.baseline.write(&run.out, &format!("zero_shot_{h}_baseline"))?;
                if let Some(u) = &o.unified {
                    u.write(&run.out, &format!("zero_shot_{h}_unified"))?;
                }
                outcomes.push(o);
            }
            let csv = eval::zero_shot_matrix_csv(&outcomes);
            std::fs::write(run.out.join("zero_shot_matrix.csv"), &csv)?;
            print!("{csv}");
            Ok(())
        }
        EvalMode::ErrorBreakdown => {
            let romanizer = load_romanizer(cfg)?;
            let b = backend(cfg, &corpus)?;
            let counts = eval::error_breakdown(&romanizer, &b, &testset, cfg.eval.modality, exec)?;
            let json = serde_json::to_string_pretty(&counts).map_err(|e| CliError::Other(e.to_string()))?;
            std::fs::write(run.out.join("error_breakdown.json"), &json)?;
            println!("{json}");
            Ok(())
        }
    }
}
