use zero_avsr::bridge::DeromanizerBackend;
use zero_avsr::corpus::{generate_corpus, romanize, CorpusConfig, SynthCorpus};
use zero_avsr::eval::*;
use zero_avsr::frontend::NoiseBank;
use zero_avsr::romanizer::{ctc_greedy_decode, Modality, RomanizerConfig, RomanizerModel};
use zero_avsr::text::{ErrorCounts, TextPair};
use zero_avsr::Execution;

fn corpus() -> SynthCorpus {
    let cfg = CorpusConfig {
        n_languages: 3,
        train_per_language: 5,
        valid_per_language: 2,
        test_per_language: 8,
        seed: 11,
        ..Default::default()
    };
    generate_corpus(&cfg, Execution::Sequential).unwrap()
}

fn model(c: &SynthCorpus) -> RomanizerModel {
    let cfg = RomanizerConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ffn: 16,
        d_audio_in: c.config.d_audio,
        d_video_in: c.config.d_video,
        ..Default::default()
    };
    RomanizerModel::new(cfg, 3).unwrap()
}

#[test]
fn oracle_with_true_roman_scores_zero() {
    let c = corpus();
    let romans: Vec<String> = c.test.iter().map(|u| u.pair.roman.clone()).collect();
    let oracle = DeromanizerBackend::oracle(&c.languages);
    let r = cascade_romans(&c.test, &romans, &oracle, &EvalOptions::default(), Execution::Sequential);
    assert_eq!(r.rows.len(), 3);
    for row in &r.rows {
        assert_eq!(row.cer, 0.0, "{}", row.lang);
        assert_eq!(row.wer, 0.0);
    }
}

#[test]
fn identity_backend_reduces_to_romanizer_cer() {
    let c = corpus();
    let m = model(&c);
    let opts = EvalOptions {
        reference: ReferenceKind::Roman,
        ..Default::default()
    };
    let r = evaluate_cascaded(&m, &DeromanizerBackend::Identity, &c.test, &opts, Execution::Sequential).unwrap();
    for row in &r.rows {
        let (mut e, mut n) = (0, 0);
        for u in c.test.iter().filter(|u| u.lang == row.lang) {
            let p = m.forward_logits(&u.audio_feats, &u.video_feats, Modality::AudioVisual).unwrap();
            let hyp = ctc_greedy_decode(&p, &m.config.alphabet).unwrap();
            let k = ErrorCounts::chars(hyp.trim(), &u.pair.roman);
            e += k.edits;
            n += k.ref_len;
        }
        assert!((row.cer - e as f64 / n as f64).abs() < 1e-12, "{}", row.lang);
    }
}

#[test]
fn unknown_language_is_excluded_and_counted() {
    let c = corpus();
    let oracle = DeromanizerBackend::oracle(&c.languages[..2]);
    let romans: Vec<String> = c.test.iter().map(|u| u.pair.roman.clone()).collect();
    let r = cascade_romans(&c.test, &romans, &oracle, &EvalOptions::default(), Execution::Sequential);
    let missing = &c.languages[2].lang;
    assert_eq!(r.failures.len(), c.test.iter().filter(|u| &u.lang == missing).count());
    assert!(r.row(missing).unwrap().cer.is_nan());
    assert_eq!(r.aggregate_row("avg").unwrap().langs.len(), 2);
}

#[test]
fn reconstruction_oracle_is_exact_and_corruption_hurts() {
    let c = corpus();
    let pairs = c.text_pairs(20, 5);
    let oracle = DeromanizerBackend::oracle(&c.languages);
    let rom = |p: &TextPair| romanize(&p.grapheme, c.language(&p.lang).unwrap()).map_err(|e| e.to_string());
    let derom = |r: &str, l: &str| oracle.deromanize(r, l).map_err(|e| e.to_string());
    let r = reconstruction_test(&pairs, rom, derom, &EvalOptions::default(), Execution::Sequential);
    assert!(r.rows.iter().all(|row| row.cer == 0.0 && row.n_utts == 20));

    let corrupt = |p: &TextPair| {
        rom(p).map(|r| {
            r.chars()
                .enumerate()
                .map(|(i, ch)| if ch != ' ' && i % 10 == 3 { 'z' } else { ch })
                .collect::<String>()
        })
    };
    let r = reconstruction_test(&pairs, corrupt, derom, &EvalOptions::default(), Execution::Sequential);
    assert!(r.mean_cer() > 0.0);
}

#[test]
fn noise_sweep_shape_and_high_snr_limit() {
    let c = corpus();
    let m = model(&c);
    let backend = DeromanizerBackend::Identity;
    let opts = EvalOptions {
        reference: ReferenceKind::Roman,
        ..Default::default()
    };
    let mods = [Modality::AudioOnly, Modality::AudioVisual];
    let bank = NoiseBank::white();
    let rows = noise_sweep(&m, &backend, &c.test, &bank, &DEFAULT_SNRS, &mods, &opts, Execution::Sequential).unwrap();
    assert_eq!(rows.len(), DEFAULT_SNRS.len() * mods.len());
    assert_eq!(noise_table_csv(&rows).lines().count(), 11);
    let high = noise_sweep(&m, &backend, &c.test, &bank, &[60.0], &mods, &opts, Execution::Sequential).unwrap();
    for (h, &md) in high.iter().zip(&mods) {
        let clean = evaluate_cascaded(&m, &backend, &c.test, &EvalOptions { modality: md, ..opts.clone() }, Execution::Sequential).unwrap();
        assert!((h.cer - clean.mean_cer()).abs() <= 0.01, "{md:?}");
    }
}

#[test]
fn breakdown_respects_oracle_and_perfect_romanizer() {
    let c = corpus();
    let m = model(&c);
    let oracle = DeromanizerBackend::oracle(&c.languages);
    let b = error_breakdown(&m, &oracle, &c.test, Modality::AudioVisual, Execution::Sequential).unwrap();
    assert_eq!(b.deromanization + b.both, 0);
    assert_eq!(b.mis_romanization + b.none, c.test.len());
    let perfect: Vec<String> = c.test.iter().map(|u| u.pair.roman.clone()).collect();
    let b = breakdown_from_romans(&c.test, &perfect, &DeromanizerBackend::Identity, Execution::Sequential);
    assert_eq!(b.mis_romanization + b.both, 0);
    assert_eq!(b.deromanization, c.test.len());
}

#[test]
fn evaluation_is_deterministic_across_execution_modes() {
    let c = corpus();
    let m = model(&c);
    let oracle = DeromanizerBackend::oracle(&c.languages);
    let opts = EvalOptions::default();
    let a = evaluate_cascaded(&m, &oracle, &c.test, &opts, Execution::Parallel).unwrap();
    let b = evaluate_cascaded(&m, &oracle, &c.test, &opts, Execution::Sequential).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.utterances, b.utterances);
}

#[test]
fn zero_shot_flags_holdout() {
    let c = corpus();
    let mut cfg = ZeroShotConfig {
        romanizer: model(&c).config,
        eval_per_language: Some(3),
        ..Default::default()
    };
    cfg.romanizer_training.schedule = zero_avsr::trainer::TriStageSchedule {
        warmup_steps: 1,
        hold_steps: 1,
        decay_steps: 1,
        ..cfg.romanizer_training.schedule
    };
    cfg.romanizer_training.batch_size = 2;
    let langs = c.lang_codes();
    let o = zero_shot_protocol(&c, &langs, &langs[1], &cfg, 0, Execution::Sequential).unwrap();
    assert!(o.cascaded.row(&langs[1]).unwrap().holdout);
    assert_eq!(o.cascaded.aggregate_row("seen").unwrap().langs, [langs[0].clone(), langs[2].clone()]);
    assert_eq!(o.cascaded.utterances.len(), 9);
    let csv = zero_shot_matrix_csv(&[o]);
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    assert!(zero_shot_protocol(&c, &langs[..2], &langs[2], &cfg, 0, Execution::Sequential).is_err());
}
