use rand::Rng;

use super::BridgeError;
use crate::nn::{Linear, Mat, ParamStore, Tape, Var};

/// Dense LoRA factors for [`lora_apply`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// `r × d_in`
    pub a: Mat,
    /// `d_out × r`
    pub b: Mat,
    pub alpha: f64,
}

impl LoraAdapter {
    pub fn rank(&self) -> usize {
        self.a.nrows()
    }
}

/// `x·Wᵀ + (alpha/r)·x·Aᵀ·Bᵀ` for row-major inputs `x` (`n × d_in`) and a
/// base weight `W` of shape `d_out × d_in`.
pub fn lora_apply(base_weight: &Mat, adapter: &LoraAdapter, input: &Mat) -> Result<Mat, BridgeError> {
    let (d_out, d_in) = base_weight.dim();
    let r = adapter.rank();
    if r == 0 || adapter.a.ncols() != d_in || adapter.b.dim() != (d_out, r) || input.ncols() != d_in {
        return Err(BridgeError::ShapeMismatch(format!(
            "base {d_out}x{d_in}, A {:?}, B {:?}, input {:?}",
            adapter.a.dim(),
            adapter.b.dim(),
            input.dim()
        )));
    }
    let base = input.dot(&base_weight.t());
    let delta = input.dot(&adapter.a.t()).dot(&adapter.b.t());
    Ok(base + delta * (adapter.alpha / r as f64))
}

/// Kernel-2, stride-2 temporal convolution (`D → D`) followed by GELU.
#[derive(Debug, Clone, Copy)]
pub struct LengthCompressor {
    pub conv: Linear,
}

impl LengthCompressor {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv: Linear::new(store, name, 2 * d, d, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, BridgeError> {
        let (t, d) = tape.value(x).dim();
        if t < 2 {
            return Err(BridgeError::SequenceTooShort(t));
        }
        let half = t / 2;
        // row-major, so output row t is frames 2t and 2t+1 side by side
        let map: Vec<usize> = (0..half * 2 * d).collect();
        let pairs = tape.rearrange(x, half, 2 * d, map);
        let y = self.conv.forward(tape, store, pairs);
        Ok(tape.gelu(y))
    }

    pub fn compress(&self, store: &ParamStore, f_av: &Mat) -> Result<Mat, BridgeError> {
        let mut tape = Tape::inference();
        let x = tape.input(f_av.clone());
        let y = self.forward(&mut tape, store, x)?;
        Ok(tape.value(y).clone())
    }
}

/// Affine map from romanizer features into the LM embedding space.
#[derive(Debug, Clone, Copy)]
pub struct Adapter {
    pub proj: Linear,
}

impl Adapter {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_lm: usize, rng: &mut impl Rng) -> Self {
        Self {
            proj: Linear::new(store, name, d_in, d_lm, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        self.proj.forward(tape, store, x)
    }
}
