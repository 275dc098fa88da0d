use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ctc_loss_with_grad, Modality, RomanizerConfig, RomanizerError, RomanizerModel};
use crate::corpus::Utterance;
use crate::frontend::{mix_noise_features, NoiseBank, NoiseKind};
use crate::nn::{AdamW, AdamWConfig, Gradients, Mat, Tape};
use crate::par::Execution;
use crate::text::TokenId;
use crate::trainer::TriStageSchedule;

/// Per-utterance additive noise applied to the audio stream during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoisePolicy {
    pub probability: f64,
    pub snr_db: f64,
    pub kinds: Vec<NoiseKind>,
}

impl Default for NoisePolicy {
    fn default() -> Self {
        Self {
            probability: 0.25,
            snr_db: 0.0,
            kinds: vec![NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RomanizerTrainConfig {
    pub schedule: TriStageSchedule,
    pub batch_size: usize,
    /// Micro-batches summed before each optimizer step.
    pub grad_accum: usize,
    pub noise: NoisePolicy,
    /// Probability of dropping one of the two streams for a training
    /// utterance (audio and video are dropped equally often).
    pub modality_dropout: f64,
    pub optimizer: AdamWConfig,
    pub log_interval: u64,
    pub probe_size: usize,
}

impl Default for RomanizerTrainConfig {
    fn default() -> Self {
        Self {
            schedule: TriStageSchedule {
                peak_lr: 2e-3,
                ..TriStageSchedule::default().scaled(0.01)
            },
            batch_size: 8,
            grad_accum: 1,
            noise: NoisePolicy::default(),
            modality_dropout: 0.3,
            optimizer: AdamWConfig::default(),
            log_interval: 50,
            probe_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    /// Mean clean CTC loss on a fixed slice of the training set.
    pub probe_initial: f64,
    pub probe_final: f64,
}

fn sample_grad(
    model: &RomanizerModel,
    utt: &Utterance,
    target: &[TokenId],
    sample_seed: u64,
    cfg: &RomanizerTrainConfig,
    bank: &NoiseBank,
) -> Result<(f64, Gradients), RomanizerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let (t, d) = utt.audio_feats.dim();
    let noisy = rng.random::<f64>() < cfg.noise.probability;
    let (noise_seed, mix_seed) = (rng.random::<u64>(), rng.random::<u64>());
    let audio = if noisy && t > 0 {
        let noise = bank.features(t, d, noise_seed);
        mix_noise_features(&utt.audio_feats, &noise, cfg.noise.snr_db, mix_seed)
            .unwrap_or_else(|_| utt.audio_feats.clone())
    } else {
        utt.audio_feats.clone()
    };
    let r: f64 = rng.random();
    let modality = if r < cfg.modality_dropout / 2.0 {
        Modality::VideoOnly
    } else if r < cfg.modality_dropout {
        Modality::AudioOnly
    } else {
        Modality::AudioVisual
    };
    let mut tape = Tape::training(vec![true; model.store.len()]);
    let lp = model.logits_on(&mut tape, &audio, &utt.video_feats, modality, Some(&mut rng))?;
    let (loss, g) = ctc_loss_with_grad(tape.value(lp), target)?;
    let l = tape.fused_scalar(lp, loss, g);
    Ok((loss, tape.backward(l, model.store.len())))
}

/// Mean clean audio-visual CTC loss over `utts`.
fn mean_loss(
    model: &RomanizerModel,
    utts: &[(&Utterance, Vec<TokenId>)],
    exec: Execution,
) -> Result<f64, RomanizerError> {
    let losses = exec.map(utts, |(u, target)| {
        let post = model.forward_logits(&u.audio_feats, &u.video_feats, Modality::AudioVisual)?;
        Ok::<_, RomanizerError>(ctc_loss_with_grad(&post.log_probs, target)?.0)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / utts.len().max(1) as f64)
}

/// Trains a romanizer with CTC on `train`, following the tri-stage schedule.
pub fn train_romanizer(
    train: &[Utterance],
    model_cfg: &RomanizerConfig,
    cfg: &RomanizerTrainConfig,
    seed: u64,
    exec: Execution,
) -> Result<(RomanizerModel, TrainLog), RomanizerError> {
    if train.is_empty() {
        return Err(RomanizerError::EmptyTrainingSet);
    }
    if cfg.batch_size == 0 || cfg.grad_accum == 0 {
        return Err(RomanizerError::InvalidConfig("batch_size and grad_accum must be positive".into()));
    }
    let mut model = RomanizerModel::new(model_cfg.clone(), seed)?;
    let targets: Vec<Vec<TokenId>> = train
        .iter()
        .map(|u| model_cfg.alphabet.tokenize(&u.pair.roman))
        .collect::<Result<_, _>>()?;
    let sources: Vec<Mat> = train.iter().take(32).map(|u| u.audio_feats.clone()).collect();
    let bank = NoiseBank::new(cfg.noise.kinds.clone(), sources);
    let probe: Vec<(&Utterance, Vec<TokenId>)> = train
        .iter()
        .zip(&targets)
        .take(cfg.probe_size.max(1))
        .map(|(u, t)| (u, t.clone()))
        .collect();

    let mut log = TrainLog {
        probe_initial: mean_loss(&model, &probe, exec)?,
        ..Default::default()
    };
    let mut opt = AdamW::new(cfg.optimizer, model.store.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x726f_6d61_6e00);
    let per_step = cfg.batch_size * cfg.grad_accum;
    let mut running = 0.0;
    let mut counted = 0u64;
    for step in 0..cfg.schedule.total_steps() {
        let jobs: Vec<(usize, u64)> = (0..per_step)
            .map(|_| (rng.random_range(0..train.len()), rng.random::<u64>()))
            .collect();
        let results = exec.map(&jobs, |&(i, s)| sample_grad(&model, &train[i], &targets[i], s, cfg, &bank));
        let mut loss = 0.0;
        let mut parts = Vec::with_capacity(per_step);
        for r in results {
            let (l, g) = r?;
            loss += l;
            parts.push(g);
        }
        loss /= per_step as f64;
        let mut grads = Gradients::sum_ordered(model.store.len(), parts);
        grads.scale(1.0 / per_step as f64);
        if !loss.is_finite() || !grads.is_finite() {
            return Err(RomanizerError::DivergedLoss { step, loss });
        }
        let lr = cfg.schedule.lr_at(step);
        opt.update(&mut model.store, &grads, lr);
        running += loss;
        counted += 1;
        if cfg.log_interval > 0 && (step + 1) % cfg.log_interval == 0 {
            log.records.push(TrainRecord {
                step: step + 1,
                loss: running / counted as f64,
                lr,
            });
            log::debug!("romanizer step {} loss {:.4}", step + 1, running / counted as f64);
            running = 0.0;
            counted = 0;
        }
    }
    log.probe_final = mean_loss(&model, &probe, exec)?;
    Ok((model, log))
}

/// One utterance for gradient checking.
#[derive(Debug, Clone)]
pub struct GradCheckItem {
    pub audio: Mat,
    pub video: Mat,
    pub target: Vec<TokenId>,
}

fn batch_loss_on(model: &RomanizerModel, tape: &mut Tape, batch: &[GradCheckItem]) -> Result<crate::nn::Var, RomanizerError> {
    let mut terms = Vec::with_capacity(batch.len());
    for item in batch {
        let lp = model.logits_on(tape, &item.audio, &item.video, Modality::AudioVisual, None)?;
        let (loss, g) = ctc_loss_with_grad(tape.value(lp), &item.target)?;
        terms.push(tape.fused_scalar(lp, loss, g));
    }
    Ok(tape.mean(&terms))
}

/// Largest relative error between analytic and central-difference gradients
/// of the mean batch CTC loss, over every parameter scalar.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn ctc_grad_check(model: &RomanizerModel, batch: &[GradCheckItem], epsilon: f64) -> Result<f64, RomanizerError> {
    ctc_grad_check_masked(model, batch, epsilon, &vec![true; model.store.len()])
}

/// As [`ctc_grad_check`], restricted to parameters with `mask[id]` set; an
/// empty selection yields zero.
pub fn ctc_grad_check_masked(
    model: &RomanizerModel,
    batch: &[GradCheckItem],
    epsilon: f64,
    mask: &[bool],
) -> Result<f64, RomanizerError> {
    crate::nn::finite_difference_check(model, |m| &mut m.store, mask, epsilon, |m, t| batch_loss_on(m, t, batch))
}
