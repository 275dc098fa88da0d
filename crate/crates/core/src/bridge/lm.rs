use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, BOS, EOS, SEP};
use super::BridgeError;
use crate::nn::params::normal;
use crate::nn::{
    sinusoidal_positions, AdamW, AdamWConfig, AttentionLora, Checkpoint, Linear, Mat, ParamId, ParamStore, StackConfig,
    Tape, TransformerStack, Var,
};
use crate::par::Execution;
use crate::text::TextPair;
use crate::trainer::{batch_gradients, CosineSchedule};

pub const LM_CHECKPOINT_KIND: &str = "toy_lm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    /// Reuse the token embedding table as the output projection.
    pub tied_head: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ffn: 128,
            tied_head: false,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), BridgeError> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_ffn == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(BridgeError::InvalidConfig(
                "lm dims must be positive with d_model divisible by n_heads".into(),
            ));
        }
        Ok(())
    }

    fn stack(&self) -> StackConfig {
        StackConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ffn: self.d_ffn,
            final_norm: true,
        }
    }
}

/// Result of [`ToyLm::generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<usize>,
    pub text: String,
    /// Sum of temperature-scaled log-probabilities of the emitted tokens.
    pub score: f64,
}

/// Decoder-only character LM over the joint vocabulary.
#[derive(Debug, Clone)]
pub struct ToyLm {
    pub config: LmConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub embed: ParamId,
    pub stack: TransformerStack,
    head: Option<Linear>,
}

impl ToyLm {
    pub fn new(config: LmConfig, vocab: Vocab, seed: u64) -> Result<Self, BridgeError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let embed = store.add("lm.embed", normal(vocab.len(), d, 1.0, &mut rng));
        let stack = TransformerStack::new(&mut store, "lm.decoder", &config.stack(), &mut rng);
        let head = (!config.tied_head).then(|| Linear::new(&mut store, "lm.head", d, vocab.len(), true, &mut rng));
        Ok(Self {
            config,
            vocab,
            store,
            embed,
            stack,
            head,
        })
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn embed_on(&self, tape: &mut Tape, ids: &[usize]) -> Var {
        let table = tape.param(&self.store, self.embed);
        tape.gather_rows(table, ids)
    }

    pub fn embed_ids(&self, ids: &[usize]) -> Mat {
        let mut tape = Tape::inference();
        let e = self.embed_on(&mut tape, ids);
        tape.value(e).clone()
    }

    /// Raw next-token logits (`T × V`) for an embedded input sequence;
    /// positions are added over the whole sequence.
    pub fn logits_on(&self, tape: &mut Tape, emb: Var, lora: Option<&[AttentionLora]>) -> Var {
        let (t, d) = tape.value(emb).dim();
        let pos = tape.input(sinusoidal_positions(t, d));
        let x = tape.add(emb, pos);
        let h = self.stack.forward(tape, &self.store, x, true, lora);
        match &self.head {
            Some(head) => head.forward(tape, &self.store, h),
            None => {
                let table = tape.param(&self.store, self.embed);
                tape.matmul_t(h, table)
            }
        }
    }

    /// Mean cross-entropy of `targets` continuing the embedded `prefix`.
    pub fn loss_on(
        &self,
        tape: &mut Tape,
        prefix: Var,
        targets: &[usize],
        lora: Option<&[AttentionLora]>,
    ) -> Result<Var, BridgeError> {
        if targets.is_empty() {
            return Err(BridgeError::EmptyTarget);
        }
        let p = tape.value(prefix).nrows();
        if p == 0 {
            return Err(BridgeError::ShapeMismatch("lm loss needs a non-empty prefix".into()));
        }
        let n = targets.len();
        let seq = if n > 1 {
            let body = self.embed_on(tape, &targets[..n - 1]);
            tape.concat_rows(&[prefix, body])
        } else {
            prefix
        };
        let logits = self.logits_on(tape, seq, lora);
        let rows = tape.slice_rows(logits, p - 1, n);
        let lp = tape.log_softmax(rows);
        let lpv = tape.value(lp);
        let mut grad = Mat::zeros(lpv.dim());
        let mut total = 0.0;
        for (i, &k) in targets.iter().enumerate() {
            total -= lpv[[i, k]];
            grad[[i, k]] = -1.0 / n as f64;
        }
        Ok(tape.fused_scalar(lp, total / n as f64, grad))
    }

    pub fn lm_loss(&self, prefix: &Mat, targets: &[usize], lora: Option<&[AttentionLora]>) -> Result<f64, BridgeError> {
        self.check_width(prefix)?;
        let mut tape = Tape::inference();
        let x = tape.input(prefix.clone());
        let l = self.loss_on(&mut tape, x, targets, lora)?;
        Ok(tape.scalar(l))
    }

    fn check_width(&self, emb: &Mat) -> Result<(), BridgeError> {
        if emb.ncols() != self.d_model() {
            return Err(BridgeError::WidthMismatch {
                expected: self.d_model(),
                found: emb.ncols(),
            });
        }
        Ok(())
    }

    fn next_log_probs(
        &self,
        prefix: &Mat,
        tokens: &[usize],
        lora: Option<&[AttentionLora]>,
        temperature: f64,
    ) -> Vec<f64> {
        let mut tape = Tape::inference();
        let mut x = tape.input(prefix.clone());
        if !tokens.is_empty() {
            let e = self.embed_on(&mut tape, tokens);
            x = tape.concat_rows(&[x, e]);
        }
        let logits = self.logits_on(&mut tape, x, lora);
        let last = tape.value(logits).row(prefix.nrows() + tokens.len() - 1).to_owned();
        let scaled = last / temperature;
        let m = scaled.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + scaled.mapv(|v| (v - m).exp()).sum().ln();
        scaled.iter().map(|v| v - lse).collect()
    }

    /// Deterministic beam search over temperature-scaled log-probabilities.
    /// Hypotheses end at EOS or after `max_len` tokens; ties in score keep
    /// the earlier hypothesis and the lower token id.
    pub fn generate(
        &self,
        prefix: &Mat,
        lora: Option<&[AttentionLora]>,
        beam_width: usize,
        temperature: f64,
        max_len: usize,
    ) -> Result<Generation, BridgeError> {
        self.check_width(prefix)?;
        if beam_width == 0 || temperature.is_nan() || temperature <= 0.0 {
            return Err(BridgeError::InvalidConfig("beam_width >= 1 and temperature > 0 required".into()));
        }
        if prefix.nrows() == 0 {
            return Err(BridgeError::ShapeMismatch("generation needs a non-empty prefix".into()));
        }
        // (tokens, score, finished)
        let mut beam: Vec<(Vec<usize>, f64, bool)> = vec![(Vec::new(), 0.0, false)];
        for _ in 0..max_len {
            if beam.iter().all(|h| h.2) {
                break;
            }
            let mut cand = Vec::new();
            for (tokens, score, done) in &beam {
                if *done {
                    cand.push((tokens.clone(), *score, true));
                    continue;
                }
                let lp = self.next_log_probs(prefix, tokens, lora, temperature);
                for (k, l) in lp.into_iter().enumerate() {
                    let mut t = tokens.clone();
                    t.push(k);
                    cand.push((t, score + l, k == EOS));
                }
            }
            cand.sort_by(|a, b| b.1.total_cmp(&a.1));
            cand.truncate(beam_width);
            beam = cand;
        }
        let (mut tokens, score, _) = beam.into_iter().next().expect("beam is never empty");
        if tokens.last() == Some(&EOS) {
            tokens.pop();
        }
        Ok(Generation {
            text: self.vocab.decode(&tokens),
            tokens,
            score,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({ "config": self.config, "vocab": self.vocab });
        let mut ck = Checkpoint::new(LM_CHECKPOINT_KIND, meta);
        ck.push_store("", &self.store);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, BridgeError> {
        ck.expect_kind(LM_CHECKPOINT_KIND)?;
        let config: LmConfig = serde_json::from_value(ck.meta["config"].clone())
            .map_err(|e| BridgeError::InvalidConfig(format!("checkpoint config: {e}")))?;
        let vocab: Vocab = serde_json::from_value(ck.meta["vocab"].clone())
            .map_err(|e| BridgeError::InvalidConfig(format!("checkpoint vocab: {e}")))?;
        let mut lm = Self::new(config, vocab, 0)?;
        ck.restore_store("", &mut lm.store)?;
        Ok(lm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BridgeError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BridgeError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Renderings of a text pair used for language-model training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextForm {
    /// `BOS LANG g… EOS`
    Grapheme,
    /// `BOS LANG r… EOS`
    Roman,
    /// `BOS LANG r… SEP g… EOS`
    Pair,
}

pub fn text_sequence(vocab: &Vocab, pair: &TextPair, form: TextForm) -> Result<Vec<usize>, BridgeError> {
    let mut ids = vec![BOS, vocab.lang_id(&pair.lang)?];
    match form {
        TextForm::Grapheme => ids.extend(vocab.encode_graphemes(&pair.grapheme)?),
        TextForm::Roman => ids.extend(vocab.encode_roman(&pair.roman)?),
        TextForm::Pair => {
            ids.extend(vocab.encode_roman(&pair.roman)?);
            ids.push(SEP);
            ids.extend(vocab.encode_graphemes(&pair.grapheme)?);
        }
    }
    ids.push(EOS);
    Ok(ids)
}

/// Mean per-token negative log-likelihood of whole sequences (every token
/// after BOS is predicted).
pub fn sequence_nll(lm: &ToyLm, seqs: &[Vec<usize>], lora: Option<&[AttentionLora]>, exec: Execution) -> f64 {
    let per = exec.map(seqs, |s| {
        let prefix = lm.embed_ids(&s[..1]);
        let l = lm.lm_loss(&prefix, &s[1..], lora).expect("well-formed sequence");
        (l * (s.len() - 1) as f64, s.len() - 1)
    });
    let (tot, n) = per.into_iter().fold((0.0, 0usize), |(a, b), (l, k)| (a + l, b + k));
    tot / n.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub lm: LmConfig,
    pub schedule: CosineSchedule,
    pub batch_size: usize,
    /// Renderings built from every pair; repeat a form to weight it.
    pub forms: Vec<TextForm>,
    pub optimizer: AdamWConfig,
    pub log_interval: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            lm: LmConfig::default(),
            schedule: CosineSchedule {
                warmup_steps: 100,
                total_steps: 2000,
                peak_lr: 3e-3,
            },
            batch_size: 16,
            forms: vec![TextForm::Grapheme, TextForm::Roman, TextForm::Pair],
            optimizer: AdamWConfig::default(),
            log_interval: 50,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretrainLog {
    /// `(step, mean loss since previous record, lr)`
    pub records: Vec<(u64, f64, f64)>,
}

/// Next-token pretraining on grapheme text, roman text and roman→grapheme
/// pairs of every language in `vocab`.
pub fn pretrain_toy_lm(
    corpus: &[TextPair],
    vocab: Vocab,
    cfg: &PretrainConfig,
    seed: u64,
    exec: Execution,
) -> Result<(ToyLm, PretrainLog), BridgeError> {
    let present: BTreeSet<&str> = corpus.iter().map(|p| p.lang.as_str()).collect();
    if let Some(missing) = vocab.languages().find(|l| !present.contains(l)) {
        return Err(BridgeError::MissingLanguage(missing.to_string()));
    }
    if cfg.forms.is_empty() {
        return Err(BridgeError::InvalidConfig("no pretraining text forms".into()));
    }
    let mut seqs = Vec::with_capacity(corpus.len() * cfg.forms.len());
    for p in corpus {
        for &form in &cfg.forms {
            seqs.push(text_sequence(&vocab, p, form)?);
        }
    }
    let mut lm = ToyLm::new(cfg.lm.clone(), vocab, seed)?;
    let mut opt = AdamW::new(cfg.optimizer, lm.store.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c6d_7072);
    let mask = vec![true; lm.store.len()];
    let mut log = PretrainLog::default();
    let (mut running, mut counted) = (0.0, 0u64);
    for step in 0..cfg.schedule.total_steps {
        let jobs: Vec<usize> = (0..cfg.batch_size.max(1)).map(|_| rng.random_range(0..seqs.len())).collect();
        let (loss, grads) = batch_gradients(exec, &jobs, lm.store.len(), |&i| {
            let s = &seqs[i];
            let mut tape = Tape::training(mask.clone());
            let prefix = lm.embed_on(&mut tape, &s[..1]);
            let l = lm.loss_on(&mut tape, prefix, &s[1..], None)?;
            Ok::<_, BridgeError>((tape.scalar(l), tape.backward(l, lm.store.len())))
        })?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(BridgeError::DivergedLoss { step, loss });
        }
        let lr = cfg.schedule.lr_at(step);
        opt.update(&mut lm.store, &grads, lr);
        running += loss;
        counted += 1;
        if cfg.log_interval > 0 && (step + 1) % cfg.log_interval == 0 {
            log.records.push((step + 1, running / counted as f64, lr));
            running = 0.0;
            counted = 0;
        }
    }
    Ok((lm, log))
}

/// Largest relative error between analytic and central-difference
/// gradients of the mean next-token loss over `seqs` (each at least two
/// ids, the first used as prefix), over every parameter scalar.
pub fn lm_grad_check(lm: &ToyLm, seqs: &[Vec<usize>], epsilon: f64) -> Result<f64, BridgeError> {
    let mask = vec![true; lm.store.len()];
    crate::nn::finite_difference_check(lm, |m| &mut m.store, &mask, epsilon, |m, tape| {
        let mut terms = Vec::with_capacity(seqs.len());
        for s in seqs {
            let prefix = m.embed_on(tape, &s[..1]);
            terms.push(m.loss_on(tape, prefix, &s[1..], None)?);
        }
        Ok(tape.mean(&terms))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::RomanAlphabet;

    fn tiny_vocab() -> Vocab {
        use super::super::VocabToken;
        let mut t = vec![VocabToken::Bos, VocabToken::Eos, VocabToken::Sep, VocabToken::Lang("l0".into())];
        t.extend(['a', 'b', ' '].map(VocabToken::Roman));
        t.extend(['α', 'β', ' '].map(VocabToken::Grapheme));
        t.into()
    }

    fn tiny_lm(seed: u64) -> ToyLm {
        let cfg = LmConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ffn: 16,
            tied_head: false,
        };
        ToyLm::new(cfg, tiny_vocab(), seed).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        for tied in [false, true] {
            let cfg = LmConfig {
                d_model: 8,
                n_layers: 2,
                n_heads: 2,
                d_ffn: 8,
                tied_head: tied,
            };
            let lm = ToyLm::new(cfg, tiny_vocab(), 4).unwrap();
            let seqs = vec![vec![BOS, 3, 4, 5, 2, 7, 8, EOS], vec![BOS, 8, 9, 7, EOS]];
            let err = lm_grad_check(&lm, &seqs, 1e-5).unwrap();
            assert!(err < 1e-4, "tied={tied}: {err}");
        }
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let mut lm = tiny_lm(1);
        let head = lm.head.unwrap();
        lm.store.get_mut(head.weight).fill(0.0);
        lm.store.get_mut(head.bias.unwrap()).fill(0.0);
        let prefix = lm.embed_ids(&[BOS, 3]);
        let l = lm.lm_loss(&prefix, &[7, 8, EOS], None).unwrap();
        assert!((l - (lm.vocab.len() as f64).ln()).abs() < 1e-12);
        assert!(matches!(lm.lm_loss(&prefix, &[], None), Err(BridgeError::EmptyTarget)));
    }

    #[test]
    fn beam_one_is_stepwise_argmax() {
        let lm = tiny_lm(2);
        let prefix = lm.embed_ids(&[BOS, 3, 4, SEP]);
        let g = lm.generate(&prefix, None, 1, 1.0, 6).unwrap();
        let mut tokens = Vec::new();
        for _ in 0..6 {
            let lp = lm.next_log_probs(&prefix, &tokens, None, 1.0);
            let best = (0..lp.len()).fold(0, |b, k| if lp[k] > lp[b] { k } else { b });
            tokens.push(best);
            if best == EOS {
                tokens.pop();
                break;
            }
        }
        assert_eq!(g.tokens, tokens);
    }

    #[test]
    fn temperature_keeps_the_top_token() {
        let lm = tiny_lm(3);
        let prefix = lm.embed_ids(&[BOS, 3]);
        let argmax = |v: Vec<f64>| (0..v.len()).fold(0, |b, k| if v[k] > v[b] { k } else { b });
        let a = argmax(lm.next_log_probs(&prefix, &[], None, 1.0));
        for t in [0.1, 0.3, 2.0] {
            assert_eq!(argmax(lm.next_log_probs(&prefix, &[], None, t)), a);
        }
    }

    #[test]
    fn pretraining_is_seeded_and_checks_coverage() {
        let pairs = vec![
            TextPair::new("αβ", "ab", "l0", &RomanAlphabet::standard()).unwrap(),
            TextPair::new("β α", "b a", "l0", &RomanAlphabet::standard()).unwrap(),
        ];
        let cfg = PretrainConfig {
            lm: LmConfig {
                d_model: 8,
                n_layers: 1,
                n_heads: 2,
                d_ffn: 16,
                tied_head: true,
            },
            schedule: CosineSchedule {
                warmup_steps: 2,
                total_steps: 6,
                peak_lr: 1e-2,
            },
            batch_size: 2,
            ..Default::default()
        };
        let (a, _) = pretrain_toy_lm(&pairs, tiny_vocab(), &cfg, 4, Execution::Parallel).unwrap();
        let (b, _) = pretrain_toy_lm(&pairs, tiny_vocab(), &cfg, 4, Execution::Sequential).unwrap();
        assert_eq!(a.store.digest(&vec![true; a.store.len()]), b.store.digest(&vec![true; b.store.len()]));
        let mut v: Vec<_> = tiny_vocab().into();
        v.push(super::super::VocabToken::Lang("l1".into()));
        assert!(matches!(
            pretrain_toy_lm(&pairs, v.into(), &cfg, 4, Execution::Sequential),
            Err(BridgeError::MissingLanguage(l)) if l == "l1"
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let lm = tiny_lm(5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lm.ckpt");
        lm.save(&p).unwrap();
        let back = ToyLm::load(&p).unwrap();
        assert_eq!(back.vocab, lm.vocab);
        let prefix = lm.embed_ids(&[BOS, 3]);
        assert_eq!(lm.lm_loss(&prefix, &[6, EOS], None).unwrap(), back.lm_loss(&prefix, &[6, EOS], None).unwrap());
    }
}
