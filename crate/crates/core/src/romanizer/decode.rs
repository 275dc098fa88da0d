use std::collections::BTreeMap;

use super::Posteriorgram;
use crate::nn::Mat;
use crate::text::{RomanAlphabet, TextError, TokenId, BLANK_ID};

/// Merges consecutive repeats, then drops blanks.
pub fn collapse_ctc(path: &[TokenId]) -> Vec<TokenId> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != BLANK_ID {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Per-frame argmax; ties go to the lowest token id.
pub fn greedy_ids(log_probs: &Mat) -> Vec<TokenId> {
    let path: Vec<TokenId> = log_probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best as TokenId
        })
        .collect();
    collapse_ctc(&path)
}

pub fn ctc_greedy_decode(post: &Posteriorgram, alphabet: &RomanAlphabet) -> Result<String, TextError> {
    alphabet.detokenize(&greedy_ids(&post.log_probs))
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// A beam entry: an emitted prefix and whether its last frame was blank.
type State = (Vec<TokenId>, bool);

/// Prefix beam search. Alignments reaching the same prefix are merged,
/// keeping the blank-ending and label-ending masses apart; the beam keeps
/// the `width` most probable of those states per frame. Returns up to
/// `width` prefixes ranked by total log-probability.
pub fn ctc_beam_decode(
    post: &Posteriorgram,
    width: usize,
    alphabet: &RomanAlphabet,
) -> Result<Vec<(String, f64)>, TextError> {
    let width = width.max(1);
    let mut beam: Vec<(State, f64)> = vec![((Vec::new(), true), 0.0)];
    for row in post.log_probs.rows() {
        let mut next: BTreeMap<State, f64> = BTreeMap::new();
        let mut bump = |state: State, score: f64| {
            if score > f64::NEG_INFINITY {
                let slot = next.entry(state).or_insert(f64::NEG_INFINITY);
                *slot = log_add(*slot, score);
            }
        };
        for ((prefix, ends_blank), score) in &beam {
            for (k, &lp) in row.iter().enumerate() {
                let k = k as TokenId;
                let s = score + lp;
                if k == BLANK_ID {
                    bump((prefix.clone(), true), s);
                } else if !ends_blank && prefix.last() == Some(&k) {
                    bump((prefix.clone(), false), s);
                } else {
                    let mut p = prefix.clone();
                    p.push(k);
                    bump((p, false), s);
                }
            }
        }
        let mut ranked: Vec<(State, f64)> = next.into_iter().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        ranked.truncate(width);
        beam = ranked;
    }
    let mut merged: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
    for ((prefix, _), score) in beam {
        let slot = merged.entry(prefix).or_insert(f64::NEG_INFINITY);
        *slot = log_add(*slot, score);
    }
    let mut ranked: Vec<(Vec<TokenId>, f64)> = merged.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked.truncate(width);
    ranked
        .into_iter()
        .map(|(p, s)| Ok((alphabet.detokenize(&p)?, s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn alphabet() -> RomanAlphabet {
        RomanAlphabet::from_tokens(vec!['a', 'b', 'c']).unwrap()
    }

    fn one_hot(labels: &[usize], v: usize) -> Posteriorgram {
        let mut m = Mat::from_elem((labels.len(), v), f64::NEG_INFINITY);
        for (t, &k) in labels.iter().enumerate() {
            m[[t, k]] = 0.0;
        }
        Posteriorgram { log_probs: m }
    }

    #[test]
    fn greedy_collapse_rules() {
        let a = alphabet();
        assert_eq!(ctc_greedy_decode(&one_hot(&[1, 1, 0, 2], 4), &a).unwrap(), "ab");
        assert_eq!(ctc_greedy_decode(&one_hot(&[0, 0, 0], 4), &a).unwrap(), "");
        assert_eq!(ctc_greedy_decode(&one_hot(&[1, 0, 1], 4), &a).unwrap(), "aa");
    }

    #[test]
    fn greedy_ties_pick_lowest_id() {
        let m = Mat::from_shape_vec((1, 3), vec![-1.0, -0.5, -0.5]).unwrap();
        assert_eq!(greedy_ids(&m), vec![1]);
    }

    #[test]
    fn greedy_is_invariant_to_monotone_row_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let m = Mat::from_shape_fn((6, 4), |_| rng.random_range(-4.0..0.0));
            let shift: f64 = rng.random_range(-2.0..2.0);
            let warped = m.mapv(|x| (x * 3.0).exp() + shift);
            assert_eq!(greedy_ids(&m), greedy_ids(&warped));
        }
    }

    #[test]
    fn one_hot_beam_has_single_certain_hypothesis() {
        let out = ctc_beam_decode(&one_hot(&[1, 0, 2, 2], 4), 4, &alphabet()).unwrap();
        assert_eq!(out, vec![("ab".to_string(), 0.0)]);
    }
}
