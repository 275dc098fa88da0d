use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_gradients, CosineSchedule, TrainError};
use crate::bridge::ZeroAvsrBridge;
use crate::corpus::Utterance;
use crate::nn::{AdamW, AdamWConfig, Checkpoint, DType, Mat, Tape};
use crate::par::Execution;
use crate::romanizer::{Modality, RomanizerModel};
use crate::text::TextPair;

pub const STATE_CHECKPOINT_KIND: &str = "train_state";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Romanizer features → graphemes (seen languages only).
    Task1,
    /// Roman text → graphemes (every language).
    Task2,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Task1 => "task1",
            Task::Task2 => "task2",
        }
    }

    fn index(self) -> usize {
        match self {
            Task::Task1 => 0,
            Task::Task2 => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultitaskMode {
    /// Per-step Bernoulli draw with probability `mix_ratio` for Task 1.
    Interleaved,
    /// The first `round(mix_ratio · steps)` steps are Task 1, the rest Task 2.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BridgeTrainConfig {
    pub schedule: CosineSchedule,
    pub batch_size: usize,
    /// Micro-batches averaged into one optimizer step.
    pub grad_accum: usize,
    pub mix_ratio: f64,
    pub mode: MultitaskMode,
    pub optimizer: AdamWConfig,
    pub log_interval: u64,
    /// Check frozen-tensor digests every this many steps (0 disables).
    pub audit_every: u64,
    pub ema_decay: f64,
}

impl Default for BridgeTrainConfig {
    fn default() -> Self {
        Self {
            schedule: CosineSchedule {
                warmup_steps: 50,
                total_steps: 1000,
                peak_lr: 2e-3,
            },
            batch_size: 8,
            grad_accum: 1,
            mix_ratio: 0.5,
            mode: MultitaskMode::Interleaved,
            optimizer: AdamWConfig::default(),
            log_interval: 10,
            audit_every: 1,
            ema_decay: 0.9,
        }
    }
}

/// Frozen romanizer features for one seen-language utterance.
#[derive(Debug, Clone)]
pub struct Task1Item {
    pub id: String,
    pub lang: String,
    pub hidden: Mat,
    pub grapheme: String,
}

/// Encodes `utts` with the frozen romanizer after checking that every
/// utterance belongs to a seen language.
pub fn prepare_task1(
    romanizer: &RomanizerModel,
    utts: &[Utterance],
    seen: &[String],
    exec: Execution,
) -> Result<Vec<Task1Item>, TrainError> {
    let seen: BTreeSet<&str> = seen.iter().map(String::as_str).collect();
    if let Some(u) = utts.iter().find(|u| !seen.contains(u.lang.as_str())) {
        return Err(TrainError::SeenLanguageViolation {
            utterance: u.id.clone(),
            lang: u.lang.clone(),
        });
    }
    exec.map(utts, |u| {
        let hidden = romanizer.encode(&u.audio_feats, &u.video_feats, Modality::AudioVisual)?;
        Ok(Task1Item {
            id: u.id.clone(),
            lang: u.lang.clone(),
            hidden,
            grapheme: u.pair.grapheme.clone(),
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub task: String,
    pub loss: f64,
    pub lr: f64,
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricRow]) -> std::io::Result<()> {
    let mut s = String::from("step,task,loss,lr\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.step, r.task, r.loss, r.lr));
    }
    std::fs::write(path, s)
}

/// Optimizer moments, step counter, RNG position and per-task loss EMAs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub optimizer: AdamW,
    pub rng: ChaCha8Rng,
    pub ema: [Option<f64>; 2],
    pub task_counts: [u64; 2],
}

impl TrainState {
    pub fn new(config: AdamWConfig, n_params: usize, seed: u64) -> Self {
        Self {
            step: 0,
            optimizer: AdamW::new(config, n_params),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x7461_736b),
            ema: [None; 2],
            task_counts: [0; 2],
        }
    }

    pub fn ema(&self, task: Task) -> Option<f64> {
        self.ema[task.index()]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "step": self.step,
            "optimizer_config": self.optimizer.config,
            "optimizer_step": self.optimizer.step,
            "n_params": self.optimizer.m.len(),
            "rng_seed": hex::encode(self.rng.get_seed()),
            "rng_stream": self.rng.get_stream().to_string(),
            "rng_word_pos": self.rng.get_word_pos().to_string(),
            "ema": self.ema,
            "task_counts": self.task_counts,
        });
        let mut ck = Checkpoint::new(STATE_CHECKPOINT_KIND, meta);
        for (i, (m, v)) in self.optimizer.m.iter().zip(&self.optimizer.v).enumerate() {
            if let (Some(m), Some(v)) = (m, v) {
                ck.push(format!("m.{i}"), DType::F64, m.clone());
                ck.push(format!("v.{i}"), DType::F64, v.clone());
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        ck.expect_kind(STATE_CHECKPOINT_KIND)?;
        let bad = |what: &str| TrainError::InvalidConfig(format!("train state: bad {what}"));
        let meta = &ck.meta;
        let config: AdamWConfig =
            serde_json::from_value(meta["optimizer_config"].clone()).map_err(|_| bad("optimizer_config"))?;
        let n_params = meta["n_params"].as_u64().ok_or_else(|| bad("n_params"))? as usize;
        let mut optimizer = AdamW::new(config, n_params);
        optimizer.step = meta["optimizer_step"].as_u64().ok_or_else(|| bad("optimizer_step"))?;
        for i in 0..n_params {
            if let (Some(m), Some(v)) = (ck.get(&format!("m.{i}")), ck.get(&format!("v.{i}"))) {
                optimizer.m[i] = Some(m.value.clone());
                optimizer.v[i] = Some(v.value.clone());
            }
        }
        let seed_bytes = hex::decode(meta["rng_seed"].as_str().ok_or_else(|| bad("rng_seed"))?)
            .map_err(|_| bad("rng_seed"))?;
        let seed: [u8; 32] = seed_bytes.try_into().map_err(|_| bad("rng_seed"))?;
        let parse_u = |k: &str| -> Result<u128, TrainError> {
            meta[k].as_str().and_then(|s| s.parse().ok()).ok_or_else(|| bad(k))
        };
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(parse_u("rng_stream")? as u64);
        rng.set_word_pos(parse_u("rng_word_pos")?);
        Ok(Self {
            step: meta["step"].as_u64().ok_or_else(|| bad("step"))?,
            optimizer,
            rng,
            ema: serde_json::from_value(meta["ema"].clone()).map_err(|_| bad("ema"))?,
            task_counts: serde_json::from_value(meta["task_counts"].clone()).map_err(|_| bad("task_counts"))?,
        })
    }
}

/// Per-step log of a bridge training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// `(task, loss)` for every optimizer step, in order.
    pub steps: Vec<(Task, f64)>,
    pub metrics: Vec<MetricRow>,
}

/// The data each task draws from.
pub struct TaskData<'a> {
    pub task1: &'a [Task1Item],
    pub task2: &'a [TextPair],
}

/// Runs one optimizer step of `task`, checking that every tensor outside
/// the task's trainable group is bit-identical afterwards.
pub fn train_step(
    bridge: &mut ZeroAvsrBridge,
    task: Task,
    data: &TaskData<'_>,
    cfg: &BridgeTrainConfig,
    state: &mut TrainState,
    exec: Execution,
) -> Result<f64, TrainError> {
    let mask = match task {
        Task::Task1 => bridge.task1_mask(),
        Task::Task2 => bridge.task2_mask(),
    };
    let n_items = match task {
        Task::Task1 => data.task1.len(),
        Task::Task2 => data.task2.len(),
    };
    if n_items == 0 {
        return Err(TrainError::InvalidConfig(format!("{} has no data", task.name())));
    }
    let audit = cfg.audit_every > 0 && state.step.is_multiple_of(cfg.audit_every);
    let frozen: Vec<bool> = mask.iter().map(|m| !m).collect();
    let before = audit.then(|| bridge.lm.store.digest(&frozen));

    let per_step = cfg.batch_size.max(1) * cfg.grad_accum.max(1);
    let jobs: Vec<usize> = (0..per_step).map(|_| state.rng.random_range(0..n_items)).collect();
    let n_params = bridge.lm.store.len();
    let b: &ZeroAvsrBridge = bridge;
    let (loss, grads) = batch_gradients(exec, &jobs, n_params, |&i| {
        let mut tape = Tape::training(mask.clone());
        let l = match task {
            Task::Task1 => {
                let it = &data.task1[i];
                b.task1_loss_on(&mut tape, &it.hidden, &it.lang, &it.grapheme)?
            }
            Task::Task2 => {
                let p = &data.task2[i];
                b.task2_loss_on(&mut tape, &p.roman, &p.lang, &p.grapheme)?
            }
        };
        Ok::<_, TrainError>((tape.scalar(l), tape.backward(l, n_params)))
    })?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(TrainError::DivergedLoss { step: state.step, loss });
    }
    let lr = cfg.schedule.lr_at(state.step);
    state.optimizer.update(&mut bridge.lm.store, &grads, lr);
    if let Some(before) = before {
        if bridge.lm.store.digest(&frozen) != before {
            return Err(TrainError::FreezeViolation {
                step: state.step,
                task: task.name().to_string(),
            });
        }
    }
    let slot = &mut state.ema[task.index()];
    *slot = Some(match *slot {
        Some(e) => cfg.ema_decay * e + (1.0 - cfg.ema_decay) * loss,
        None => loss,
    });
    state.task_counts[task.index()] += 1;
    state.step += 1;
    Ok(loss)
}

/// Seeded task choice for one step.
pub fn draw_task(cfg: &BridgeTrainConfig, state: &mut TrainState, total_steps: u64) -> Task {
    match cfg.mode {
        MultitaskMode::Interleaved => {
            if state.rng.random::<f64>() < cfg.mix_ratio {
                Task::Task1
            } else {
                Task::Task2
            }
        }
        MultitaskMode::Sequential => {
            if (state.step as f64) < (cfg.mix_ratio * total_steps as f64).round() {
                Task::Task1
            } else {
                Task::Task2
            }
        }
    }
}

fn run(
    bridge: &mut ZeroAvsrBridge,
    data: &TaskData<'_>,
    cfg: &BridgeTrainConfig,
    state: &mut TrainState,
    exec: Execution,
    mut choose: impl FnMut(&mut TrainState) -> Task,
    on_step: &mut dyn FnMut(&ZeroAvsrBridge, &TrainState) -> Result<(), TrainError>,
) -> Result<TrainReport, TrainError> {
    let mut report = TrainReport::default();
    while state.step < cfg.schedule.total_steps {
        let task = choose(state);
        let lr = cfg.schedule.lr_at(state.step);
        let loss = train_step(bridge, task, data, cfg, state, exec)?;
        report.steps.push((task, loss));
        if cfg.log_interval > 0 && state.step.is_multiple_of(cfg.log_interval) {
            report.metrics.push(MetricRow {
                step: state.step,
                task: task.name().to_string(),
                loss: state.ema(task).unwrap_or(loss),
                lr,
            });
        }
        on_step(bridge, state)?;
    }
    Ok(report)
}

fn no_hook(_: &ZeroAvsrBridge, _: &TrainState) -> Result<(), TrainError> {
    Ok(())
}

/// Task 1 only: aligns romanizer features with the LM. `utts` must all
/// come from `seen` languages; the check runs before any step.
pub fn train_task1(
    bridge: &mut ZeroAvsrBridge,
    romanizer: &RomanizerModel,
    utts: &[Utterance],
    seen: &[String],
    cfg: &BridgeTrainConfig,
    seed: u64,
    exec: Execution,
) -> Result<TrainReport, TrainError> {
    let items = prepare_task1(romanizer, utts, seen, exec)?;
    let data = TaskData { task1: &items, task2: &[] };
    let mut state = TrainState::new(cfg.optimizer, bridge.lm.store.len(), seed);
    run(bridge, &data, cfg, &mut state, exec, |_| Task::Task1, &mut no_hook)
}

/// Checks that `pairs` cover every language the bridge vocabulary knows.
pub fn check_text_coverage(bridge: &ZeroAvsrBridge, pairs: &[TextPair]) -> Result<(), TrainError> {
    let present: BTreeSet<&str> = pairs.iter().map(|p| p.lang.as_str()).collect();
    match bridge.vocab().languages().find(|l| !present.contains(l)) {
        Some(l) => Err(TrainError::MissingLanguage(l.to_string())),
        None => Ok(()),
    }
}

/// Task 2 only: roman→grapheme conversion on text of every language.
pub fn train_task2(
    bridge: &mut ZeroAvsrBridge,
    pairs: &[TextPair],
    cfg: &BridgeTrainConfig,
    seed: u64,
    exec: Execution,
) -> Result<TrainReport, TrainError> {
    check_text_coverage(bridge, pairs)?;
    let data = TaskData { task1: &[], task2: pairs };
    let mut state = TrainState::new(cfg.optimizer, bridge.lm.store.len(), seed);
    run(bridge, &data, cfg, &mut state, exec, |_| Task::Task2, &mut no_hook)
}

/// Both tasks on one optimizer, resuming from `state`. `on_step` runs after
/// every step (checkpointing, progress).
pub fn multitask_loop(
    bridge: &mut ZeroAvsrBridge,
    data: &TaskData<'_>,
    cfg: &BridgeTrainConfig,
    state: &mut TrainState,
    exec: Execution,
    on_step: &mut dyn FnMut(&ZeroAvsrBridge, &TrainState) -> Result<(), TrainError>,
) -> Result<TrainReport, TrainError> {
    if !(cfg.mix_ratio > 0.0 && cfg.mix_ratio < 1.0) {
        return Err(TrainError::InvalidConfig(format!(
            "mix_ratio must lie in (0, 1), got {}",
            cfg.mix_ratio
        )));
    }
    check_text_coverage(bridge, data.task2)?;
    let total = cfg.schedule.total_steps;
    run(bridge, data, cfg, state, exec, |s| draw_task(cfg, s, total), on_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::{BridgeConfig, LmConfig, ToyLm, VocabToken};
    use crate::romanizer::RomanizerConfig;

    fn bridge() -> ZeroAvsrBridge {
        let mut t = vec![VocabToken::Bos, VocabToken::Eos, VocabToken::Sep];
        t.extend(["l0", "l1"].map(|l| VocabToken::Lang(l.into())));
        t.extend(['a', 'b', ' '].map(VocabToken::Roman));
        t.extend(['α', 'β', ' '].map(VocabToken::Grapheme));
        let cfg = LmConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ffn: 16,
            tied_head: false,
        };
        let lm = ToyLm::new(cfg, t.into(), 1).unwrap();
        ZeroAvsrBridge::attach(lm, 6, BridgeConfig { lora_rank: 2, lora_alpha: 4.0 }, 2).unwrap()
    }

    fn pair(g: &str, r: &str, lang: &str) -> TextPair {
        TextPair {
            grapheme: g.into(),
            roman: r.into(),
            lang: lang.into(),
        }
    }

    fn data() -> (Vec<Task1Item>, Vec<TextPair>) {
        let items = (0..4)
            .map(|i| Task1Item {
                id: format!("u{i}"),
                lang: "l0".into(),
                hidden: Mat::from_shape_fn((4 + i, 6), |(r, c)| ((r * 7 + c * 3 + i) % 5) as f64 * 0.2 - 0.4),
                grapheme: if i % 2 == 0 { "αβ".into() } else { "βα α".into() },
            })
            .collect();
        let pairs = vec![pair("αβ", "ab", "l0"), pair("ββ", "bb", "l1"), pair("α β", "a b", "l1")];
        (items, pairs)
    }

    fn cfg(steps: u64) -> BridgeTrainConfig {
        BridgeTrainConfig {
            schedule: CosineSchedule {
                warmup_steps: 2,
                total_steps: steps,
                peak_lr: 1e-2,
            },
            batch_size: 2,
            log_interval: 2,
            ..Default::default()
        }
    }

    #[test]
    fn task_steps_touch_only_their_groups() {
        let mut b = bridge();
        let (items, pairs) = data();
        let d = TaskData { task1: &items, task2: &pairs };
        let c = cfg(10);
        let mut st = TrainState::new(c.optimizer, b.lm.store.len(), 0);
        let lm_only = b.lm.store.mask_by_prefix(&["lm."]);
        let comp = b.lm.store.mask_by_prefix(&["compressor.", "adapter."]);
        let lm0 = b.lm.store.digest(&lm_only);
        let comp0 = b.lm.store.digest(&comp);
        train_step(&mut b, Task::Task2, &d, &c, &mut st, Execution::Sequential).unwrap();
        assert_eq!(b.lm.store.digest(&lm_only), lm0);
        assert_eq!(b.lm.store.digest(&comp), comp0);
        train_step(&mut b, Task::Task1, &d, &c, &mut st, Execution::Sequential).unwrap();
        assert_eq!(b.lm.store.digest(&lm_only), lm0);
        assert_ne!(b.lm.store.digest(&comp), comp0);
        assert_eq!(st.task_counts, [1, 1]);
        assert!(st.ema(Task::Task1).is_some() && st.ema(Task::Task2).is_some());
    }

    #[test]
    fn mix_ratio_must_be_open_interval() {
        let (items, pairs) = data();
        let d = TaskData { task1: &items, task2: &pairs };
        for r in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            let mut b = bridge();
            let c = BridgeTrainConfig { mix_ratio: r, ..cfg(4) };
            let mut st = TrainState::new(c.optimizer, b.lm.store.len(), 0);
            let err = multitask_loop(&mut b, &d, &c, &mut st, Execution::Sequential, &mut no_hook);
            assert!(matches!(err, Err(TrainError::InvalidConfig(_))), "{r}");
        }
    }

    #[test]
    fn task_draws_follow_ratio() {
        let c = BridgeTrainConfig { mix_ratio: 0.3, ..cfg(10) };
        let mut st = TrainState::new(c.optimizer, 1, 5);
        let n = 4000;
        let t1 = (0..n).filter(|_| draw_task(&c, &mut st, n) == Task::Task1).count() as f64 / n as f64;
        assert!((t1 - 0.3).abs() < 0.03, "{t1}");
        let c = BridgeTrainConfig { mode: MultitaskMode::Sequential, ..c };
        let mut st = TrainState::new(c.optimizer, 1, 5);
        let seq: Vec<Task> = (0..10)
            .map(|i| {
                st.step = i;
                draw_task(&c, &mut st, 10)
            })
            .collect();
        assert_eq!(seq.iter().filter(|t| **t == Task::Task1).count(), 3);
        assert_eq!(seq[..3], [Task::Task1; 3]);
    }

    #[test]
    fn missing_language_is_rejected() {
        let mut b = bridge();
        let pairs = vec![pair("αβ", "ab", "l0")];
        let err = train_task2(&mut b, &pairs, &cfg(2), 0, Execution::Sequential);
        assert!(matches!(err, Err(TrainError::MissingLanguage(l)) if l == "l1"));
    }

    #[test]
    fn unseen_utterance_fails_before_training() {
        let rcfg = RomanizerConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ffn: 8,
            d_audio_in: 3,
            d_video_in: 2,
            ..Default::default()
        };
        let rom = RomanizerModel::new(rcfg, 0).unwrap();
        let utt = |id: &str, lang: &str| Utterance {
            id: id.into(),
            audio_feats: Mat::zeros((3, 3)),
            video_feats: Mat::zeros((3, 2)),
            pair: pair("α", "a", lang),
            lang: lang.into(),
        };
        let mut b = bridge();
        let before = b.lm.store.clone();
        let utts = [utt("x0", "l0"), utt("x1", "l1")];
        let err = train_task1(&mut b, &rom, &utts, &["l0".into()], &cfg(3), 0, Execution::Sequential);
        assert!(matches!(err, Err(TrainError::SeenLanguageViolation { ref utterance, .. }) if utterance == "x1"));
        assert_eq!(b.lm.store, before);
    }

    #[test]
    fn resume_from_checkpoint_is_bit_exact() {
        let (items, pairs) = data();
        let d = TaskData { task1: &items, task2: &pairs };
        let c = cfg(8);
        let mut b = bridge();
        let mut st = TrainState::new(c.optimizer, b.lm.store.len(), 3);
        let mut saved = None;
        let full = multitask_loop(&mut b, &d, &c, &mut st, Execution::Sequential, &mut |b, s| {
            if s.step == 5 {
                saved = Some((b.to_checkpoint(), s.to_checkpoint()));
            }
            Ok(())
        })
        .unwrap();
        let (bck, sck) = saved.unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("state.ckpt");
        sck.save(&p).unwrap();
        let mut st2 = TrainState::from_checkpoint(&Checkpoint::load(&p).unwrap()).unwrap();
        assert_eq!(st2.step, 5);
        let mut b2 = ZeroAvsrBridge::from_checkpoint(&bck).unwrap();
        let rest = multitask_loop(&mut b2, &d, &c, &mut st2, Execution::Sequential, &mut no_hook).unwrap();
        assert_eq!(rest.steps, full.steps[5..]);
        assert_eq!(b2.lm.store, b.lm.store);
        assert_eq!(st2, st);
    }

    #[test]
    fn parallel_matches_sequential() {
        let (items, pairs) = data();
        let d = TaskData { task1: &items, task2: &pairs };
        let c = cfg(4);
        let run = |exec| {
            let mut b = bridge();
            let mut st = TrainState::new(c.optimizer, b.lm.store.len(), 9);
            let r = multitask_loop(&mut b, &d, &c, &mut st, exec, &mut no_hook).unwrap();
            (r.steps, b.lm.store.digest(&vec![true; b.lm.store.len()]))
        };
        assert_eq!(run(Execution::Parallel), run(Execution::Sequential));
    }

    #[test]
    fn metrics_csv_has_one_row_per_interval() {
        let mut b = bridge();
        let (_, pairs) = data();
        let r = train_task2(&mut b, &pairs, &cfg(6), 0, Execution::Sequential).unwrap();
        assert_eq!(r.metrics.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, &r.metrics).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("step,task,loss,lr\n2,task2,"));
    }
}
