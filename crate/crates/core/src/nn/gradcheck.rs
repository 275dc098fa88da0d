use super::params::ParamStore;
use super::tape::{Tape, Var};

/// Largest relative error between the tape's gradients and central
/// differences of `loss`, over every scalar of every parameter selected by
/// `mask`. Relative error is `|a - n| / max(|a|, |n|, 1e-6)`; an empty
/// selection yields zero.
pub fn finite_difference_check<M, E>(
    model: &M,
    store: impl Fn(&mut M) -> &mut ParamStore,
    mask: &[bool],
    epsilon: f64,
    loss: impl Fn(&M, &mut Tape) -> Result<Var, E>,
) -> Result<f64, E>
where
    M: Clone,
{
    let mut probe = model.clone();
    let mut tape = Tape::training(mask.to_vec());
    let l = loss(model, &mut tape)?;
    let n_params = store(&mut probe).len();
    let grads = tape.backward(l, n_params);
    let eval = |m: &M| -> Result<f64, E> {
        let mut t = Tape::inference();
        let l = loss(m, &mut t)?;
        Ok(t.scalar(l))
    };
    let ids: Vec<_> = store(&mut probe).ids().filter(|id| mask[id.index()]).collect();
    let mut worst = 0.0f64;
    for id in ids {
        let (rows, cols) = store(&mut probe).get(id).dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = store(&mut probe).get(id)[[r, c]];
                store(&mut probe).get_mut(id)[[r, c]] = orig + epsilon;
                let up = eval(&probe)?;
                store(&mut probe).get_mut(id)[[r, c]] = orig - epsilon;
                let down = eval(&probe)?;
                store(&mut probe).get_mut(id)[[r, c]] = orig;
                let numeric = (up - down) / (2.0 * epsilon);
                let analytic = grads.get(id).map_or(0.0, |g| g[[r, c]]);
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((analytic - numeric).abs() / denom);
            }
        }
    }
    Ok(worst)
}
