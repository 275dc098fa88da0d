use super::{Posteriorgram, RomanizerError};
use crate::nn::Mat;
use crate::text::{TokenId, BLANK_ID};

const NEG_INF: f64 = f64::NEG_INFINITY;

fn log_add(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Frames needed to emit `target`: one per token plus a blank between
/// every pair of equal neighbours.
fn required_frames(target: &[TokenId]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn validate(frames: usize, target: &[TokenId]) -> Result<(), RomanizerError> {
    if let Some(i) = target.iter().position(|&k| k == BLANK_ID) {
        return Err(RomanizerError::BlankInTarget(i));
    }
    let required = required_frames(target);
    if required > frames {
        return Err(RomanizerError::TargetTooLong {
            target: target.len(),
            required,
            frames,
        });
    }
    Ok(())
}

/// Negative log-likelihood of `target` under the posteriorgram.
pub fn ctc_loss(post: &Posteriorgram, target: &[TokenId]) -> Result<f64, RomanizerError> {
    ctc_loss_with_grad(&post.log_probs, target).map(|(l, _)| l)
}

/// CTC loss and its gradient with respect to every entry of `log_probs`,
/// treating the entries as free variables.
pub fn ctc_loss_with_grad(log_probs: &Mat, target: &[TokenId]) -> Result<(f64, Mat), RomanizerError> {
    let t_len = log_probs.nrows();
    validate(t_len, target)?;
    let mut grad = Mat::zeros(log_probs.dim());
    if t_len == 0 {
        return Ok((0.0, grad));
    }

    let ext: Vec<usize> = std::iter::once(BLANK_ID)
        .chain(target.iter().flat_map(|&k| [k, BLANK_ID]))
        .map(|k| k as usize)
        .collect();
    let s_len = ext.len();
    let skip_ok = |s: usize| s >= 2 && ext[s] != BLANK_ID as usize && ext[s] != ext[s - 2];
    let lp = |t: usize, s: usize| log_probs[[t, ext[s]]];

    let mut alpha = Mat::from_elem((t_len, s_len), NEG_INF);
    alpha[[0, 0]] = lp(0, 0);
    if s_len > 1 {
        alpha[[0, 1]] = lp(0, 1);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[[t - 1, s]];
            if s >= 1 {
                acc = log_add(acc, alpha[[t - 1, s - 1]]);
            }
            if skip_ok(s) {
                acc = log_add(acc, alpha[[t - 1, s - 2]]);
            }
            if acc != NEG_INF {
                alpha[[t, s]] = acc + lp(t, s);
            }
        }
    }

    let mut beta = Mat::from_elem((t_len, s_len), NEG_INF);
    let last = t_len - 1;
    beta[[last, s_len - 1]] = lp(last, s_len - 1);
    if s_len > 1 {
        beta[[last, s_len - 2]] = lp(last, s_len - 2);
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let mut acc = beta[[t + 1, s]];
            if s + 1 < s_len {
                acc = log_add(acc, beta[[t + 1, s + 1]]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                acc = log_add(acc, beta[[t + 1, s + 2]]);
            }
            if acc != NEG_INF {
                beta[[t, s]] = acc + lp(t, s);
            }
        }
    }

    let mut log_p = alpha[[last, s_len - 1]];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[[last, s_len - 2]]);
    }
    if log_p == NEG_INF {
        return Ok((f64::INFINITY, grad));
    }

    let mut occupancy = Mat::from_elem(log_probs.dim(), NEG_INF);
    for t in 0..t_len {
        for s in 0..s_len {
            let k = ext[s];
            occupancy[[t, k]] = log_add(occupancy[[t, k]], alpha[[t, s]] + beta[[t, s]]);
        }
    }
    for ((g, &occ), &y) in grad.iter_mut().zip(occupancy.iter()).zip(log_probs.iter()) {
        if occ != NEG_INF {
            *g = -(occ - y - log_p).exp();
        }
    }
    Ok((-log_p, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::romanizer::collapse_ctc;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_post(t: usize, v: usize, rng: &mut impl Rng) -> Mat {
        let mut m = Mat::from_shape_fn((t, v), |_| rng.random_range(-3.0..3.0));
        for mut row in m.rows_mut() {
            let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
            row -= lse;
        }
        m
    }

    /// Sums path probabilities over every frame labeling that collapses to
    /// `target`.
    fn brute_force(lp: &Mat, target: &[TokenId]) -> f64 {
        let (t, v) = lp.dim();
        let mut total = 0.0;
        for code in 0..v.pow(t as u32) {
            let mut c = code;
            let path: Vec<TokenId> = (0..t)
                .map(|_| {
                    let k = c % v;
                    c /= v;
                    k as TokenId
                })
                .collect();
            if collapse_ctc(&path) == target {
                total += path.iter().enumerate().map(|(i, &k)| lp[[i, k as usize]]).sum::<f64>().exp();
            }
        }
        -total.ln()
    }

    #[test]
    fn single_frame_single_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lp = random_post(1, 4, &mut rng);
        assert_eq!(ctc_loss_with_grad(&lp, &[2]).unwrap().0, -lp[[0, 2]]);
    }

    #[test]
    fn two_frames_three_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lp = random_post(2, 3, &mut rng);
        let p = |t: usize, k: usize| lp[[t, k]].exp();
        let expected = -(p(0, 1) * p(1, 1) + p(0, 1) * p(1, 0) + p(0, 0) * p(1, 1)).ln();
        let got = ctc_loss_with_grad(&lp, &[1]).unwrap().0;
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn repeated_tokens_need_a_blank() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lp = random_post(3, 3, &mut rng);
        let p = |t: usize, k: usize| lp[[t, k]].exp();
        // a ϵ a is the only alignment of [a, a] in three frames
        let expected = -(p(0, 1) * p(1, 0) * p(2, 1)).ln();
        let got = ctc_loss_with_grad(&lp, &[1, 1]).unwrap().0;
        assert!((got - expected).abs() < 1e-12);
        assert!((got - brute_force(&lp, &[1, 1])).abs() < 1e-12);
        assert!(matches!(
            ctc_loss_with_grad(&random_post(2, 3, &mut rng), &[1, 1]),
            Err(RomanizerError::TargetTooLong { required: 3, .. })
        ));
    }

    #[test]
    fn blank_in_target_rejected() {
        let lp = Mat::zeros((3, 3));
        assert!(matches!(ctc_loss_with_grad(&lp, &[1, 0]), Err(RomanizerError::BlankInTarget(1))));
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let t = rng.random_range(1..=5);
            let v = rng.random_range(2..=4);
            let lp = random_post(t, v, &mut rng);
            let len = rng.random_range(0..=t.min(3));
            let target: Vec<TokenId> = (0..len).map(|_| rng.random_range(1..v) as TokenId).collect();
            if required_frames(&target) > t {
                continue;
            }
            let got = ctc_loss_with_grad(&lp, &target).unwrap().0;
            assert!((got - brute_force(&lp, &target)).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lp = random_post(5, 4, &mut rng);
        let target = [1, 3, 3];
        let (_, g) = ctc_loss_with_grad(&lp, &target).unwrap();
        let eps = 1e-6;
        for t in 0..5 {
            for k in 0..4 {
                let mut up = lp.clone();
                up[[t, k]] += eps;
                let mut down = lp.clone();
                down[[t, k]] -= eps;
                let num = (ctc_loss_with_grad(&up, &target).unwrap().0
                    - ctc_loss_with_grad(&down, &target).unwrap().0)
                    / (2.0 * eps);
                assert!((num - g[[t, k]]).abs() < 1e-7, "({t},{k}) {num} vs {}", g[[t, k]]);
            }
        }
    }

    #[test]
    fn one_hot_posteriors_give_zero_loss() {
        let mut lp = Mat::from_elem((3, 3), NEG_INF);
        for (t, k) in [1, 0, 2].into_iter().enumerate() {
            lp[[t, k]] = 0.0;
        }
        let (loss, g) = ctc_loss_with_grad(&lp, &[1, 2]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|x| x.is_finite()));
    }
}
