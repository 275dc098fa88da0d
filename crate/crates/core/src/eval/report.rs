use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::text::{normalize_text, ErrorCounts};

/// One scored utterance. Both strings are normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UttScore {
    pub id: String,
    pub lang: String,
    pub hypothesis: String,
    pub reference: String,
    pub char_edits: usize,
    pub char_ref: usize,
    pub word_edits: usize,
    pub word_ref: usize,
}

impl UttScore {
    pub fn new(id: impl Into<String>, lang: impl Into<String>, hypothesis: &str, reference: &str) -> Self {
        let lang = lang.into();
        let hypothesis = normalize_text(hypothesis, &lang);
        let reference = normalize_text(reference, &lang);
        let c = ErrorCounts::chars(&hypothesis, &reference);
        let w = ErrorCounts::words(&hypothesis, &reference);
        Self {
            id: id.into(),
            lang,
            hypothesis,
            reference,
            char_edits: c.edits,
            char_ref: c.ref_len,
            word_edits: w.edits,
            word_ref: w.ref_len,
        }
    }
}

/// An utterance whose backend call failed; kept out of every aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UttFailure {
    pub id: String,
    pub lang: String,
    pub error: String,
}

pub type UttOutcome = Result<UttScore, UttFailure>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangRow {
    pub lang: String,
    pub n_utts: usize,
    pub n_failed: usize,
    /// Pooled over the language's scored utterances (edits / reference length).
    pub cer: f64,
    pub wer: f64,
    pub holdout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub label: String,
    pub langs: Vec<String>,
    pub cer: f64,
    pub wer: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub mode: String,
    pub backend: String,
    pub seed: u64,
    pub config_hash: String,
    /// Mean sequence log-score, for decoders that report one.
    pub mean_score: Option<f64>,
}

/// Which languages get their own aggregate rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    /// High-resource language to leave out of the `avg_without_*` row.
    pub dominant: Option<String>,
    /// Held-out language, flagged and excluded from the `seen` row.
    pub holdout: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: RunMeta,
    pub rows: Vec<LangRow>,
    pub aggregates: Vec<AggregateRow>,
    pub utterances: Vec<UttScore>,
    pub failures: Vec<UttFailure>,
}

/// SHA-256 of a config's canonical JSON rendering.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl EvalReport {
    /// Groups outcomes by language (utterance-id order within each) and
    /// derives the unweighted per-language aggregates.
    pub fn build(meta: RunMeta, mut outcomes: Vec<UttOutcome>, opts: &ReportOptions) -> Self {
        let key = |o: &UttOutcome| match o {
            Ok(s) => s.id.clone(),
            Err(f) => f.id.clone(),
        };
        outcomes.sort_by_key(key);
        let mut utterances = Vec::new();
        let mut failures = Vec::new();
        for o in outcomes {
            match o {
                Ok(s) => utterances.push(s),
                Err(f) => failures.push(f),
            }
        }
        let mut by_lang: BTreeMap<&str, [usize; 6]> = BTreeMap::new();
        for u in &utterances {
            let e = by_lang.entry(&u.lang).or_default();
            e[0] += 1;
            e[2] += u.char_edits;
            e[3] += u.char_ref;
            e[4] += u.word_edits;
            e[5] += u.word_ref;
        }
        for f in &failures {
            by_lang.entry(&f.lang).or_default()[1] += 1;
        }
        let ratio = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
        let rows: Vec<LangRow> = by_lang
            .into_iter()
            .map(|(lang, c)| LangRow {
                lang: lang.to_string(),
                n_utts: c[0],
                n_failed: c[1],
                cer: ratio(c[2], c[3]),
                wer: ratio(c[4], c[5]),
                holdout: opts.holdout.as_deref() == Some(lang),
            })
            .collect();
        let mut report = Self {
            meta,
            rows,
            aggregates: Vec::new(),
            utterances,
            failures,
        };
        report.aggregates = report.derive_aggregates(opts);
        report
    }

    fn aggregate(&self, label: &str, keep: impl Fn(&LangRow) -> bool) -> Option<AggregateRow> {
        let rows: Vec<&LangRow> = self.rows.iter().filter(|r| r.n_utts > 0 && keep(r)).collect();
        if rows.is_empty() {
            return None;
        }
        Some(AggregateRow {
            label: label.to_string(),
            langs: rows.iter().map(|r| r.lang.clone()).collect(),
            cer: mean(rows.iter().map(|r| r.cer)),
            wer: mean(rows.iter().map(|r| r.wer)),
        })
    }

    fn derive_aggregates(&self, opts: &ReportOptions) -> Vec<AggregateRow> {
        let mut out = Vec::new();
        out.extend(self.aggregate("avg", |_| true));
        if let Some(d) = &opts.dominant {
            out.extend(self.aggregate(&format!("avg_without_{d}"), |r| &r.lang != d));
        }
        if opts.holdout.is_some() {
            out.extend(self.aggregate("seen", |r| !r.holdout));
            out.extend(self.aggregate("unseen", |r| r.holdout));
        }
        out
    }

    pub fn row(&self, lang: &str) -> Option<&LangRow> {
        self.rows.iter().find(|r| r.lang == lang)
    }

    pub fn aggregate_row(&self, label: &str) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.label == label)
    }

    /// Unweighted mean CER over every language with scored utterances.
    pub fn mean_cer(&self) -> f64 {
        self.aggregate_row("avg").map_or(f64::NAN, |a| a.cer)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,lang,n_utts,n_failed,cer,wer,holdout\n");
        for r in &self.rows {
            let _ = writeln!(s, "lang,{},{},{},{},{},{}", r.lang, r.n_utts, r.n_failed, r.cer, r.wer, r.holdout);
        }
        for a in &self.aggregates {
            let n: usize = a
                .langs
                .iter()
                .filter_map(|l| self.row(l))
                .map(|r| r.n_utts)
                .sum();
            let _ = writeln!(s, "aggregate,{},{},,{},{},", a.label, n, a.cer, a.wer);
        }
        s
    }

    /// Aligned plain-text table with a metadata header.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "mode: {}  backend: {}  seed: {}  config: {}\n",
            self.meta.mode,
            self.meta.backend,
            self.meta.seed,
            &self.meta.config_hash[..self.meta.config_hash.len().min(12)]
        );
        if let Some(m) = self.meta.mean_score {
            let _ = writeln!(s, "mean log-score: {m:.4}");
        }
        let width = self
            .rows
            .iter()
            .map(|r| r.lang.len() + 1)
            .chain(self.aggregates.iter().map(|a| a.label.len()))
            .max()
            .unwrap_or(4)
            .max(4);
        let _ = writeln!(s, "{:<width$}  {:>6}  {:>6}  {:>7}  {:>7}", "lang", "utts", "failed", "CER%", "WER%");
        for r in &self.rows {
            let name = if r.holdout { format!("{}*", r.lang) } else { r.lang.clone() };
            let _ = writeln!(
                s,
                "{name:<width$}  {:>6}  {:>6}  {:>7.2}  {:>7.2}",
                r.n_utts,
                r.n_failed,
                100.0 * r.cer,
                100.0 * r.wer
            );
        }
        for a in &self.aggregates {
            let _ = writeln!(s, "{:<width$}  {:>6}  {:>6}  {:>7.2}  {:>7.2}", a.label, "", "", 100.0 * a.cer, 100.0 * a.wer);
        }
        if !self.failures.is_empty() {
            let _ = writeln!(s, "{} utterance(s) excluded after backend failures", self.failures.len());
        }
        s
    }

    pub fn utterances_csv(&self) -> String {
        let mut s = String::from("id,lang,char_edits,char_ref,word_edits,word_ref,hypothesis,reference\n");
        for u in &self.utterances {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                u.id, u.lang, u.char_edits, u.char_ref, u.word_edits, u.word_ref, u.hypothesis, u.reference
            );
        }
        s
    }

    /// Writes `<stem>.csv`, `<stem>.txt` and `<stem>_utts.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> std::io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        std::fs::write(dir.join(format!("{stem}.txt")), self.to_text())?;
        std::fs::write(dir.join(format!("{stem}_utts.csv")), self.utterances_csv())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcomes() -> Vec<UttOutcome> {
        vec![
            Ok(UttScore::new("b1", "en", "helo", "hello")),
            Ok(UttScore::new("a1", "de", "gut", "gut")),
            Ok(UttScore::new("a2", "de", "", "ja")),
            Err(UttFailure {
                id: "a3".into(),
                lang: "de".into(),
                error: "timeout".into(),
            }),
            Ok(UttScore::new("c1", "fr", "oui", "non")),
        ]
    }

    fn report() -> EvalReport {
        let opts = ReportOptions {
            dominant: Some("en".into()),
            holdout: Some("fr".into()),
        };
        EvalReport::build(RunMeta::default(), outcomes(), &opts)
    }

    #[test]
    fn rows_pool_within_language() {
        let r = report();
        let de = r.row("de").unwrap();
        assert_eq!((de.n_utts, de.n_failed), (2, 1));
        assert_eq!(de.cer, 2.0 / 5.0);
        assert_eq!(r.row("en").unwrap().cer, 0.2);
        assert!(r.row("fr").unwrap().holdout);
        assert_eq!(r.failures.len(), 1);
        let ids: Vec<&str> = r.utterances.iter().map(|u| u.id.as_str()).collect();
        assert_eq!(ids, ["a1", "a2", "b1", "c1"]);
    }

    #[test]
    fn aggregates_are_unweighted_language_means() {
        let r = report();
        let cer = |l: &str| r.row(l).unwrap().cer;
        assert_eq!(r.mean_cer(), (cer("de") + cer("en") + cer("fr")) / 3.0);
        assert_eq!(r.aggregate_row("avg_without_en").unwrap().cer, (cer("de") + cer("fr")) / 2.0);
        assert_eq!(r.aggregate_row("seen").unwrap().langs, ["de", "en"]);
        assert_eq!(r.aggregate_row("unseen").unwrap().cer, cer("fr"));
    }

    #[test]
    fn empty_hypothesis_scores_full_error() {
        let s = UttScore::new("x", "de", "", "abc");
        assert_eq!((s.char_edits, s.char_ref), (3, 3));
    }

    #[test]
    fn csv_and_text_render() {
        let r = report();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 3 + 4);
        assert!(csv.contains("lang,fr,1,0,1,1,true"));
        let txt = r.to_text();
        assert!(txt.contains("fr*"));
        assert!(txt.contains("1 utterance(s) excluded"));
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path(), "cascaded").unwrap();
        assert!(dir.path().join("cascaded_utts.csv").exists());
    }

    #[test]
    fn config_hash_is_stable() {
        let a = config_hash(&serde_json::json!({"x": 1}));
        assert_eq!(a, config_hash(&serde_json::json!({"x": 1})));
        assert_ne!(a, config_hash(&serde_json::json!({"x": 2})));
    }
}
