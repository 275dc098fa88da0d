use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{xavier, Mat, ParamId, ParamStore};
use super::tape::{Tape, Var};

/// `y = x·Wᵀ + b`, with `W` stored as `d_out × d_in`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier(d_out, d_in, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Mat::zeros((1, d_out))));
        Self { weight, bias }
    }

    /// Zero-initialized layer (used for residual outputs and LoRA `B`).
    pub fn zeros(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        let weight = store.add(format!("{name}.weight"), Mat::zeros((d_out, d_in)));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Mat::zeros((1, d_out))));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let y = tape.matmul_t(x, w);
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }

    pub fn d_in(&self, store: &ParamStore) -> usize {
        store.get(self.weight).ncols()
    }

    pub fn d_out(&self, store: &ParamStore) -> usize {
        store.get(self.weight).nrows()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Mat::ones((1, d))),
            beta: store.add(format!("{name}.beta"), Mat::zeros((1, d))),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// Low-rank additive update `(alpha / r) · B · A` on a frozen linear map.
///
/// `A` is `r × d_in` (small random init), `B` is `d_out × r` (zero init), so
/// a freshly attached adapter leaves the base output unchanged.
#[derive(Debug, Clone, Copy)]
pub struct Lora {
    pub a: ParamId,
    pub b: ParamId,
    pub rank: usize,
    pub alpha: f64,
}

impl Lora {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rank: usize,
        alpha: f64,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(rank >= 1, "lora rank must be at least 1");
        let a = store.add(format!("{name}.lora_a"), xavier(rank, d_in, rng));
        let b = store.add(format!("{name}.lora_b"), Mat::zeros((d_out, rank)));
        Self { a, b, rank, alpha }
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// The low-rank delta `(alpha/r)·x·Aᵀ·Bᵀ` for row-major inputs.
    pub fn delta(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let a = tape.param(store, self.a);
        let b = tape.param(store, self.b);
        let h = tape.matmul_t(x, a);
        let h = tape.matmul_t(h, b);
        tape.scale(h, self.scaling())
    }
}

/// Linear map with an optional LoRA branch.
pub fn linear_with_lora(
    tape: &mut Tape,
    store: &ParamStore,
    base: &Linear,
    lora: Option<&Lora>,
    x: Var,
) -> Var {
    let y = base.forward(tape, store, x);
    match lora {
        Some(l) => {
            let d = l.delta(tape, store, x);
            tape.add(y, d)
        }
        None => y,
    }
}

/// LoRA adapters for one attention layer (query and value projections).
#[derive(Debug, Clone, Copy)]
pub struct AttentionLora {
    pub q: Lora,
    pub v: Lora,
}

#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_heads: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        n_heads: usize,
        zero_out: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert_eq!(d % n_heads, 0, "d_model must divide into heads");
        let o = if zero_out {
            Linear::zeros(store, &format!("{name}.o"), d, d, true)
        } else {
            Linear::new(store, &format!("{name}.o"), d, d, true, rng)
        };
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, true, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, true, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, true, rng),
            o,
            n_heads,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        causal: bool,
        lora: Option<&AttentionLora>,
    ) -> Var {
        let q = linear_with_lora(tape, store, &self.q, lora.map(|l| &l.q), x);
        let k = self.k.forward(tape, store, x);
        let v = linear_with_lora(tape, store, &self.v, lora.map(|l| &l.v), x);
        let d = tape.value(q).ncols();
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let scores = tape.matmul_t(qh, kh);
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores, causal);
            heads.push(tape.matmul(attn, vh));
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)
        };
        self.o.forward(tape, store, merged)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let h = self.fc1.forward(tape, store, x);
        let h = tape.gelu(h);
        self.fc2.forward(tape, store, h)
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone, Copy)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub final_norm: bool,
}

#[derive(Debug, Clone)]
pub struct TransformerStack {
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: Option<LayerNorm>,
}

impl TransformerStack {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &StackConfig, rng: &mut impl Rng) -> Self {
        Self::build(store, name, cfg, false, rng)
    }

    /// A stack whose residual branches output exactly zero, i.e. an identity
    /// map before the optional final norm.
    pub fn identity(store: &mut ParamStore, name: &str, cfg: &StackConfig, rng: &mut impl Rng) -> Self {
        Self::build(store, name, cfg, true, rng)
    }

    fn build(
        store: &mut ParamStore,
        name: &str,
        cfg: &StackConfig,
        zero_residual: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let d = cfg.d_model;
        let blocks = (0..cfg.n_layers)
            .map(|i| {
                let p = format!("{name}.layers.{i}");
                let fc2 = if zero_residual {
                    Linear::zeros(store, &format!("{p}.ffn.fc2"), cfg.d_ffn, d, true)
                } else {
                    Linear::new(store, &format!("{p}.ffn.fc2"), cfg.d_ffn, d, true, rng)
                };
                TransformerBlock {
                    ln1: LayerNorm::new(store, &format!("{p}.ln1"), d),
                    attn: MultiHeadAttention::new(
                        store,
                        &format!("{p}.attn"),
                        d,
                        cfg.n_heads,
                        zero_residual,
                        rng,
                    ),
                    ln2: LayerNorm::new(store, &format!("{p}.ln2"), d),
                    ffn: FeedForward {
                        fc1: Linear::new(store, &format!("{p}.ffn.fc1"), d, cfg.d_ffn, true, rng),
                        fc2,
                    },
                }
            })
            .collect();
        let final_norm = cfg
            .final_norm
            .then(|| LayerNorm::new(store, &format!("{name}.final_norm"), d));
        Self { blocks, final_norm }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mut x: Var,
        causal: bool,
        lora: Option<&[AttentionLora]>,
    ) -> Var {
        for (i, b) in self.blocks.iter().enumerate() {
            let h = b.ln1.forward(tape, store, x);
            let h = b.attn.forward(tape, store, h, causal, lora.map(|l| &l[i]));
            x = tape.add(x, h);
            let h = b.ln2.forward(tape, store, x);
            let h = b.ffn.forward(tape, store, h);
            x = tape.add(x, h);
        }
        match &self.final_norm {
            Some(ln) => ln.forward(tape, store, x),
            None => x,
        }
    }
}

/// Fixed sinusoidal position table, `len × d`.
pub fn sinusoidal_positions(len: usize, d: usize) -> Mat {
    Mat::from_shape_fn((len, d), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
