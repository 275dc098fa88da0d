use serde::{Deserialize, Serialize};

use super::params::{quantize_f32, Mat, ParamStore};
use super::tape::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 1.0,
        }
    }
}

/// Adam with decoupled weight decay. Decay applies to tensors named
/// `*.weight` or `*.lora_*`; norms, biases and embeddings are exempt.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Option<Mat>>,
    pub v: Vec<Option<Mat>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, n_params: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![None; n_params],
            v: vec![None; n_params],
        }
    }

    /// Applies one update to every parameter that has a gradient. Updated
    /// values are rounded to f32 precision; parameters without gradients are
    /// not touched.
    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        let c = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let norm = grads.global_norm();
        let clip = if c.clip_norm > 0.0 && norm > c.clip_norm {
            c.clip_norm / norm
        } else {
            1.0
        };
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let decays = {
                let n = store.name(id);
                n.ends_with(".weight") || n.contains(".lora_")
            };
            let m = self.m[i].get_or_insert_with(|| Mat::zeros(g.dim()));
            let v = self.v[i].get_or_insert_with(|| Mat::zeros(g.dim()));
            let p = store.get_mut(id);
            ndarray::Zip::from(&mut *p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    let g = g * clip;
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    if decays {
                        *p -= lr * c.weight_decay * *p;
                    }
                    *p -= lr * mhat / (vhat.sqrt() + c.eps);
                });
            quantize_f32(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Tape;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x.weight", Mat::from_elem((1, 2), 3.0));
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            1,
        );
        for _ in 0..500 {
            let mut t = Tape::training(vec![true]);
            let x = t.param(&store, id);
            let sq = t.matmul_t(x, x);
            let g = t.backward(sq, 1);
            opt.update(&mut store, &g, 0.05);
        }
        assert!(store.get(id).iter().all(|v| v.abs() < 0.05));
    }

    #[test]
    fn untouched_without_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a.weight", Mat::from_elem((1, 1), 1.0));
        let mut opt = AdamW::new(AdamWConfig::default(), 1);
        opt.update(&mut store, &Gradients::zeros_like(1), 0.1);
        assert_eq!(store.get(a)[[0, 0]], 1.0);
    }
}
