use serde::{Deserialize, Serialize};

use super::report::{EvalReport, ReportOptions, RunMeta, UttFailure, UttOutcome, UttScore};
use super::EvalError;
use crate::bridge::{DeromanizerBackend, ZeroAvsrBridge, DEFAULT_MAX_LEN};
use crate::corpus::Utterance;
use crate::frontend::{mix_noise_features, NoiseBank};
use crate::par::Execution;
use crate::romanizer::{ctc_greedy_decode, Modality, RomanizerModel};
use crate::text::TextPair;

/// Which transcript the hypotheses are scored against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    #[default]
    Grapheme,
    Roman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub reference: ReferenceKind,
    pub modality: Modality,
    #[serde(flatten)]
    pub report: ReportOptions,
    pub seed: u64,
    pub config_hash: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            reference: ReferenceKind::Grapheme,
            modality: Modality::AudioVisual,
            report: ReportOptions::default(),
            seed: 0,
            config_hash: String::new(),
        }
    }
}

impl EvalOptions {
    fn meta(&self, mode: &str, backend: &str) -> RunMeta {
        RunMeta {
            mode: mode.to_string(),
            backend: backend.to_string(),
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            mean_score: None,
        }
    }

    fn reference<'a>(&self, u: &'a Utterance) -> &'a str {
        match self.reference {
            ReferenceKind::Grapheme => &u.pair.grapheme,
            ReferenceKind::Roman => &u.pair.roman,
        }
    }
}

/// Greedy CTC romanization of every utterance, in input order.
pub fn romanize_testset(
    romanizer: &RomanizerModel,
    testset: &[Utterance],
    modality: Modality,
    exec: Execution,
) -> Result<Vec<String>, EvalError> {
    exec.map(testset, |u| {
        let post = romanizer.forward_logits(&u.audio_feats, &u.video_feats, modality)?;
        Ok(ctc_greedy_decode(&post, &romanizer.config.alphabet)?)
    })
    .into_iter()
    .collect()
}

/// Cascaded scoring of given roman hypotheses: deromanize → normalize →
/// score. Backend failures are recorded per utterance.
pub fn cascade_romans(
    testset: &[Utterance],
    romans: &[String],
    backend: &DeromanizerBackend,
    opts: &EvalOptions,
    exec: Execution,
) -> EvalReport {
    assert_eq!(testset.len(), romans.len(), "one roman hypothesis per utterance");
    let items: Vec<(String, String)> = romans.iter().zip(testset).map(|(r, u)| (r.clone(), u.lang.clone())).collect();
    let outs = backend.deromanize_many(&items, exec);
    let outcomes = testset
        .iter()
        .zip(outs)
        .map(|(u, out)| match out {
            Ok(h) => Ok(UttScore::new(&u.id, &u.lang, &h, opts.reference(u))),
            Err(e) => Err(UttFailure {
                id: u.id.clone(),
                lang: u.lang.clone(),
                error: e.to_string(),
            }),
        })
        .collect();
    EvalReport::build(opts.meta("cascaded", backend.kind()), outcomes, &opts.report)
}

pub fn evaluate_cascaded(
    romanizer: &RomanizerModel,
    backend: &DeromanizerBackend,
    testset: &[Utterance],
    opts: &EvalOptions,
    exec: Execution,
) -> Result<EvalReport, EvalError> {
    let romans = romanize_testset(romanizer, testset, opts.modality, exec)?;
    Ok(cascade_romans(testset, &romans, backend, opts, exec))
}

/// Unified decoding through the bridge; decode failures score as empty
/// hypotheses. The report's `mean_score` is the mean beam log-score.
pub fn evaluate_unified(
    romanizer: &RomanizerModel,
    bridge: &ZeroAvsrBridge,
    testset: &[Utterance],
    beam_width: usize,
    temperature: f64,
    opts: &EvalOptions,
    exec: Execution,
) -> Result<EvalReport, EvalError> {
    let results = exec.map(testset, |u| -> Result<(UttOutcome, f64), EvalError> {
        let hidden = romanizer.encode(&u.audio_feats, &u.video_feats, opts.modality)?;
        let (hyp, score) = match bridge.transcribe(&hidden, &u.lang, beam_width, temperature, DEFAULT_MAX_LEN) {
            Ok(g) => (g.text, g.score),
            Err(_) => (String::new(), f64::NEG_INFINITY),
        };
        Ok((Ok(UttScore::new(&u.id, &u.lang, &hyp, opts.reference(u))), score))
    });
    let mut outcomes = Vec::with_capacity(results.len());
    let mut total = 0.0;
    for r in results {
        let (o, s) = r?;
        outcomes.push(o);
        total += s;
    }
    let mut meta = opts.meta("unified", "toy-lm");
    meta.mean_score = Some(total / testset.len().max(1) as f64);
    Ok(EvalReport::build(meta, outcomes, &opts.report))
}

/// Round-trips ground-truth text through a romanizer and a deromanizer and
/// scores the result against the original graphemes.
pub fn reconstruction_test<E, R, D>(
    pairs: &[TextPair],
    romanize: R,
    deromanize: D,
    opts: &EvalOptions,
    exec: Execution,
) -> EvalReport
where
    E: std::fmt::Display,
    R: Fn(&TextPair) -> Result<String, E> + Sync + Send,
    D: Fn(&str, &str) -> Result<String, E> + Sync + Send,
{
    let outcomes = exec.map_indexed(pairs.len(), |i| {
        let p = &pairs[i];
        let id = format!("{}-{i:06}", p.lang);
        match romanize(p).and_then(|r| deromanize(&r, &p.lang)) {
            Ok(h) => Ok(UttScore::new(id, &p.lang, &h, &p.grapheme)),
            Err(e) => Err(UttFailure {
                id,
                lang: p.lang.clone(),
                error: e.to_string(),
            }),
        }
    });
    EvalReport::build(opts.meta("reconstruction", "custom"), outcomes, &opts.report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub snr_db: f64,
    pub modality: Modality,
    pub cer: f64,
    pub wer: f64,
}

pub const DEFAULT_SNRS: [f64; 5] = [-5.0, 0.0, 5.0, 10.0, 15.0];

/// Audio features of `u` mixed with bank noise at `snr_db`; the noise for a
/// given utterance index and seed is the same at every SNR.
pub fn noisy_utterance(u: &Utterance, bank: &NoiseBank, snr_db: f64, seed: u64) -> Result<Utterance, EvalError> {
    let (t, d) = u.audio_feats.dim();
    let noise = bank.features(t.max(1), d, seed);
    let mut out = u.clone();
    if t > 0 {
        out.audio_feats = mix_noise_features(&u.audio_feats, &noise, snr_db, seed)?;
    }
    Ok(out)
}

/// Cascaded error for every (SNR, modality) pair, in SNR-major order.
#[allow(clippy::too_many_arguments)]
pub fn noise_sweep(
    romanizer: &RomanizerModel,
    backend: &DeromanizerBackend,
    testset: &[Utterance],
    bank: &NoiseBank,
    snrs: &[f64],
    modalities: &[Modality],
    opts: &EvalOptions,
    exec: Execution,
) -> Result<Vec<NoiseRow>, EvalError> {
    let mut rows = Vec::with_capacity(snrs.len() * modalities.len());
    for &snr in snrs {
        let noisy: Vec<Utterance> = exec
            .map_indexed(testset.len(), |i| {
                noisy_utterance(&testset[i], bank, snr, opts.seed.wrapping_mul(1_000_003).wrapping_add(i as u64))
            })
            .into_iter()
            .collect::<Result<_, _>>()?;
        for &m in modalities {
            let o = EvalOptions {
                modality: m,
                ..opts.clone()
            };
            let report = evaluate_cascaded(romanizer, backend, &noisy, &o, exec)?;
            let avg = report.aggregate_row("avg");
            rows.push(NoiseRow {
                snr_db: snr,
                modality: m,
                cer: avg.map_or(f64::NAN, |a| a.cer),
                wer: avg.map_or(f64::NAN, |a| a.wer),
            });
        }
    }
    Ok(rows)
}

pub fn noise_table_csv(rows: &[NoiseRow]) -> String {
    let mut s = String::from("snr_db,modality,cer,wer\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.snr_db, r.modality.label(), r.cer, r.wer));
    }
    s
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub mis_romanization: usize,
    pub deromanization: usize,
    pub both: usize,
    pub none: usize,
}

/// Tallies, per utterance, whether the predicted roman differs from the
/// ground truth and whether the backend fails to recover the ground-truth
/// graphemes from the ground-truth roman.
pub fn breakdown_from_romans(
    testset: &[Utterance],
    romans: &[String],
    backend: &DeromanizerBackend,
    exec: Execution,
) -> ErrorBreakdown {
    assert_eq!(testset.len(), romans.len(), "one roman hypothesis per utterance");
    let items: Vec<(String, String)> = testset.iter().map(|u| (u.pair.roman.clone(), u.lang.clone())).collect();
    let derom = backend.deromanize_many(&items, exec);
    let mut b = ErrorBreakdown::default();
    for ((u, r), d) in testset.iter().zip(romans).zip(derom) {
        let n = |s: &str| crate::text::normalize_text(s, &u.lang);
        let mis = n(r) != n(&u.pair.roman);
        let der = d.map_or(true, |g| n(&g) != n(&u.pair.grapheme));
        match (mis, der) {
            (true, true) => b.both += 1,
            (true, false) => b.mis_romanization += 1,
            (false, true) => b.deromanization += 1,
            (false, false) => b.none += 1,
        }
    }
    b
}

pub fn error_breakdown(
    romanizer: &RomanizerModel,
    backend: &DeromanizerBackend,
    testset: &[Utterance],
    modality: Modality,
    exec: Execution,
) -> Result<ErrorBreakdown, EvalError> {
    let romans = romanize_testset(romanizer, testset, modality, exec)?;
    Ok(breakdown_from_romans(testset, &romans, backend, exec))
}
