use super::TextError;

/// Levenshtein distance with unit insertion, deletion and substitution costs.
pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> usize {
    if hyp.is_empty() {
        return reference.len();
    }
    if reference.is_empty() {
        return hyp.len();
    }
    // single rolling row over the reference
    let mut row: Vec<usize> = (0..=reference.len()).collect();
    for (i, h) in hyp.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = diag + usize::from(h != r);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[reference.len()]
}

/// Raw edit counts, for pooling rates over many utterances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    pub edits: usize,
    pub ref_len: usize,
}

impl ErrorCounts {
    pub fn chars(hyp: &str, reference: &str) -> Self {
        let h: Vec<char> = hyp.chars().collect();
        let r: Vec<char> = reference.chars().collect();
        Self {
            edits: edit_distance(&h, &r),
            ref_len: r.len(),
        }
    }

    pub fn words(hyp: &str, reference: &str) -> Self {
        let h: Vec<&str> = hyp.split_whitespace().collect();
        let r: Vec<&str> = reference.split_whitespace().collect();
        Self {
            edits: edit_distance(&h, &r),
            ref_len: r.len(),
        }
    }

    pub fn rate(&self) -> Result<f64, TextError> {
        if self.ref_len == 0 {
            return Err(TextError::EmptyReference);
        }
        Ok(self.edits as f64 / self.ref_len as f64)
    }
}

/// Character error rate. Spaces count as characters of the reference.
pub fn cer(hyp: &str, reference: &str) -> Result<f64, TextError> {
    ErrorCounts::chars(hyp, reference).rate()
}

/// Word error rate over whitespace-delimited tokens.
pub fn wer(hyp: &str, reference: &str) -> Result<f64, TextError> {
    ErrorCounts::words(hyp, reference).rate()
}
