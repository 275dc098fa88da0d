use unicode_general_category::{get_general_category, GeneralCategory as Gc};
use unicode_normalization::UnicodeNormalization;

/// Bumped whenever the rule set below changes, so scored runs can record it.
pub const NORMALIZER_VERSION: u32 = 1;

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        Gc::ConnectorPunctuation
            | Gc::DashPunctuation
            | Gc::OpenPunctuation
            | Gc::ClosePunctuation
            | Gc::InitialPunctuation
            | Gc::FinalPunctuation
            | Gc::OtherPunctuation
    )
}

/// Transcript normalization applied to hypotheses and references alike.
///
/// Rules, in order: NFC, Unicode lowercase, typographic apostrophe (U+2019)
/// folded to `'`, every other punctuation character (general category P*)
/// replaced by a space, whitespace runs collapsed to one space, ends trimmed.
/// The language code is accepted for per-language rules; none exist yet.
pub fn normalize_text(text: &str, _lang: &str) -> String {
    let lowered = text.nfc().collect::<String>().to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for c in lowered.nfc() {
        let c = if c == '\u{2019}' { '\'' } else { c };
        if c.is_whitespace() || (c != '\'' && is_punctuation(c)) {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basic_rules() {
        assert_eq!(normalize_text("Hello,  World!", "eng"), "hello world");
        assert_eq!(normalize_text("don't", "eng"), "don't");
        assert_eq!(normalize_text("Ça va??", "fra"), "ça va");
        assert_eq!(normalize_text("", "eng"), "");
        assert_eq!(normalize_text("  ...  ", "eng"), "");
    }

    #[test]
    fn decomposed_input_is_composed() {
        // "C" + combining cedilla
        assert_eq!(normalize_text("C\u{0327}a", "fra"), "ça");
    }

    /// Expected outputs produced by an independent Python normalizer
    /// (`unicodedata.normalize("NFC")`, `str.lower`, category-P filter).
    #[test]
    fn matches_reference_corpus() {
        for (input, expected) in REFERENCE_CORPUS {
            assert_eq!(normalize_text(input, "und"), *expected, "input {input:?}");
        }
    }

    const REFERENCE_CORPUS: &[(&str, &str)] = include!("normalize_reference.in");

    proptest! {
        #[test]
        fn idempotent(s in "\\PC{0,40}") {
            let once = normalize_text(&s, "und");
            prop_assert_eq!(normalize_text(&once, "und"), once);
        }

        #[test]
        fn no_edge_or_double_spaces(s in "[a-zA-Z ,.!?'\t\n-]{0,40}") {
            let n = normalize_text(&s, "und");
            prop_assert!(!n.starts_with(' ') && !n.ends_with(' '));
            prop_assert!(!n.contains("  "));
        }
    }
}
