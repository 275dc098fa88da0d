//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records one forward pass. Every op stores its output value and
//! whatever it needs for the backward sweep; [`Tape::backward`] then walks
//! the nodes in reverse and returns gradients for the trainable parameters
//! that were read through [`Tape::param`].

use std::collections::HashMap;

use ndarray::{concatenate, s, Array1, Axis};

use super::params::{Mat, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const LN_EPS: f64 = 1e-5;

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Array1<f64>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    Rearrange(Var, Vec<usize>),
    GroupMean(Var, usize),
    Mask(Var, Mat),
    /// Scalar-valued op whose local gradient was computed in the forward pass.
    Fused(Var, Mat),
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Per-parameter gradients indexed by [`ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn zeros_like(n_params: usize) -> Self {
        Self {
            grads: vec![None; n_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(Option::is_none)
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => *m += t,
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.grads.iter_mut().flatten() {
            *g *= k;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads
            .iter()
            .flatten()
            .all(|g| g.iter().all(|x| x.is_finite()))
    }

    /// Sum a list of gradients in order.
    pub fn sum_ordered(n_params: usize, parts: impl IntoIterator<Item = Gradients>) -> Self {
        let mut total = Self::zeros_like(n_params);
        for p in parts {
            total.accumulate(&p);
        }
        total
    }
}

pub struct Tape {
    nodes: Vec<Node>,
    trainable: Option<Vec<bool>>,
    param_vars: HashMap<ParamId, Var>,
}

impl Tape {
    /// A tape that records no gradients.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            trainable: None,
            param_vars: HashMap::new(),
        }
    }

    /// A tape that tracks gradients for parameters with `trainable[id]` set.
    pub fn training(trainable: Vec<bool>) -> Self {
        Self {
            nodes: Vec::new(),
            trainable: Some(trainable),
            param_vars: HashMap::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let rg = self
            .trainable
            .as_ref()
            .is_some_and(|m| m.get(id.0).copied().unwrap_or(false));
        let v = self.push(store.get(id).clone(), Op::Param(id), rg);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape");
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Adds a `1 × n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a single row");
        let value = self.value(x) + &r.row(0);
        let rg = self.rg(x) || self.rg(row);
        self.push(value, Op::AddRow(x, row), rg)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x) * k;
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, k), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()));
        let rg = self.rg(x);
        self.push(value, Op::Gelu(x), rg)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 × n`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mean = xv.sum_axis(Axis(1)) / n;
        let centered = xv - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        let xhat = &centered * &inv_std.view().insert_axis(Axis(1));
        let value = &xhat * &self.value(gamma).row(0) + self.value(beta).row(0);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` for `j > i` is masked.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Var {
        let mut value = self.value(x).clone();
        for (i, mut row) in value.rows_mut().into_iter().enumerate() {
            let limit = if causal { (i + 1).min(row.len()) } else { row.len() };
            let max = row
                .iter()
                .take(limit)
                .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for (j, v) in row.iter_mut().enumerate() {
                if j < limit {
                    *v = (*v - max).exp();
                    sum += *v;
                } else {
                    *v = 0.0;
                }
            }
            row.mapv_inplace(|v| v / sum);
        }
        let rg = self.rg(x);
        self.push(value, Op::Softmax(x), rg)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for mut row in value.rows_mut() {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        let rg = self.rg(x);
        self.push(value, Op::LogSoftmax(x), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat_cols row counts");
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("concat_rows col counts");
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let value = self.value(x).slice(s![.., start..start + width]).to_owned();
        let rg = self.rg(x);
        self.push(value, Op::SliceCols(x, start), rg)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, height: usize) -> Var {
        let value = self.value(x).slice(s![start..start + height, ..]).to_owned();
        let rg = self.rg(x);
        self.push(value, Op::SliceRows(x, start), rg)
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let value = t.select(Axis(0), ids);
        let rg = self.rg(table);
        self.push(value, Op::Gather(table, ids.to_vec()), rg)
    }

    /// Output of shape `(rows, cols)` whose flat entry `k` is the flat entry
    /// `map[k]` of `x`.
    pub fn rearrange(&mut self, x: Var, rows: usize, cols: usize, map: Vec<usize>) -> Var {
        assert_eq!(map.len(), rows * cols, "rearrange map length");
        let src = self.value(x).as_standard_layout();
        let flat = src.as_slice().expect("standard layout");
        let data: Vec<f64> = map.iter().map(|&k| flat[k]).collect();
        let value = Mat::from_shape_vec((rows, cols), data).expect("rearrange shape");
        let rg = self.rg(x);
        self.push(value, Op::Rearrange(x, map), rg)
    }

    /// Mean over consecutive groups of `group` rows.
    pub fn group_mean(&mut self, x: Var, group: usize) -> Var {
        let xv = self.value(x);
        assert!(group > 0 && xv.nrows().is_multiple_of(group), "group_mean row count");
        let n = xv.nrows() / group;
        let mut value = Mat::zeros((n, xv.ncols()));
        for (i, mut row) in value.rows_mut().into_iter().enumerate() {
            let block = xv.slice(s![i * group..(i + 1) * group, ..]);
            row.assign(&(block.sum_axis(Axis(0)) / group as f64));
        }
        let rg = self.rg(x);
        self.push(value, Op::GroupMean(x, group), rg)
    }

    /// Elementwise product with a constant matrix (dropout, modality masks).
    pub fn mask(&mut self, x: Var, m: Mat) -> Var {
        let value = self.value(x) * &m;
        let rg = self.rg(x);
        self.push(value, Op::Mask(x, m), rg)
    }

    /// Records a scalar `value` computed outside the tape from `input`, with
    /// its precomputed gradient `d value / d input`.
    pub fn fused_scalar(&mut self, input: Var, value: f64, local_grad: Mat) -> Var {
        assert_eq!(local_grad.dim(), self.value(input).dim(), "fused grad shape");
        let rg = self.rg(input);
        self.push(Mat::from_elem((1, 1), value), Op::Fused(input, local_grad), rg)
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let total: f64 = terms.iter().map(|(v, w)| self.scalar(*v) * w).sum();
        let rg = terms.iter().any(|(v, _)| self.rg(*v));
        self.push(Mat::from_elem((1, 1), total), Op::WeightedSum(terms.to_vec()), rg)
    }

    pub fn mean(&mut self, terms: &[Var]) -> Var {
        let w = 1.0 / terms.len() as f64;
        let weighted: Vec<_> = terms.iter().map(|&v| (v, w)).collect();
        self.weighted_sum(&weighted)
    }

    /// Gradients of the scalar `loss` with respect to trainable parameters.
    pub fn backward(&self, loss: Var, n_params: usize) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut out = Gradients::zeros_like(n_params);
        if !self.rg(loss) {
            return out;
        }
        let mut grads: Vec<Option<Mat>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Mat::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let send = |v: Var, contrib: Mat, grads: &mut Vec<Option<Mat>>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => *acc += &contrib,
                    slot => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    out.grads[id.0] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        send(*a, g.dot(&self.value(*b).t()), &mut grads);
                    }
                    if self.rg(*b) {
                        send(*b, self.value(*a).t().dot(&g), &mut grads);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.rg(*a) {
                        send(*a, g.dot(self.value(*b)), &mut grads);
                    }
                    if self.rg(*b) {
                        send(*b, g.t().dot(self.value(*a)), &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    send(*b, g.clone(), &mut grads);
                    send(*a, g, &mut grads);
                }
                Op::AddRow(x, row) => {
                    if self.rg(*row) {
                        send(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)), &mut grads);
                    }
                    send(*x, g, &mut grads);
                }
                Op::Scale(x, k) => send(*x, g * *k, &mut grads),
                Op::Gelu(x) => {
                    let mut d = self.value(*x).mapv(|v| {
                        let u = GELU_C * (v + 0.044715 * v * v * v);
                        let t = u.tanh();
                        0.5 * (1.0 + t)
                            + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * v * v)
                    });
                    d *= &g;
                    send(*x, d, &mut grads);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    if self.rg(*gamma) {
                        send(
                            *gamma,
                            (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                            &mut grads,
                        );
                    }
                    if self.rg(*beta) {
                        send(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)), &mut grads);
                    }
                    if self.rg(*x) {
                        let dxhat = &g * &self.value(*gamma).row(0);
                        let n = dxhat.ncols() as f64;
                        let sum_d = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
                        let sum_dx = (&dxhat * xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
                        let mut dx = dxhat * n - &sum_d - &(xhat * &sum_dx);
                        dx *= &(inv_std / n).insert_axis(Axis(1));
                        send(*x, dx, &mut grads);
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    send(*x, y * &(g - &dot), &mut grads);
                }
                Op::LogSoftmax(x) => {
                    let p = node.value.mapv(f64::exp);
                    let gsum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    send(*x, g - &(p * &gsum), &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if self.rg(*p) {
                            send(*p, g.slice(s![.., start..start + w]).to_owned(), &mut grads);
                        }
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        if self.rg(*p) {
                            send(*p, g.slice(s![start..start + h, ..]).to_owned(), &mut grads);
                        }
                        start += h;
                    }
                }
                Op::SliceCols(x, start) => {
                    let mut d = Mat::zeros(self.value(*x).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    send(*x, d, &mut grads);
                }
                Op::SliceRows(x, start) => {
                    let mut d = Mat::zeros(self.value(*x).dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    send(*x, d, &mut grads);
                }
                Op::Mask(x, m) => send(*x, g * m, &mut grads),
                Op::Gather(table, ids) => {
                    let mut d = Mat::zeros(self.value(*table).dim());
                    for (row, &id) in ids.iter().enumerate() {
                        let mut dst = d.row_mut(id);
                        dst += &g.row(row);
                    }
                    send(*table, d, &mut grads);
                }
                Op::Rearrange(x, map) => {
                    let mut d = Mat::zeros(self.value(*x).dim());
                    {
                        let flat = d.as_slice_mut().expect("standard layout");
                        for (k, gv) in map.iter().zip(g.iter()) {
                            flat[*k] += gv;
                        }
                    }
                    send(*x, d, &mut grads);
                }
                Op::GroupMean(x, group) => {
                    let mut d = Mat::zeros(self.value(*x).dim());
                    let k = 1.0 / *group as f64;
                    for (r, mut row) in d.rows_mut().into_iter().enumerate() {
                        row.assign(&(&g.row(r / group) * k));
                    }
                    send(*x, d, &mut grads);
                }
                Op::Fused(x, local) => {
                    send(*x, local * g[[0, 0]], &mut grads);
                }
                Op::WeightedSum(terms) => {
                    for (v, w) in terms {
                        send(*v, Mat::from_elem((1, 1), g[[0, 0]] * w), &mut grads);
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of `f` at every entry of parameter `id`.
    fn numeric_grad(
        store: &mut ParamStore,
        id: ParamId,
        f: &dyn Fn(&ParamStore) -> f64,
    ) -> Mat {
        let eps = 1e-5;
        let shape = store.get(id).dim();
        let mut out = Mat::zeros(shape);
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = store.get(id)[[r, c]];
                store.get_mut(id)[[r, c]] = orig + eps;
                let up = f(store);
                store.get_mut(id)[[r, c]] = orig - eps;
                let down = f(store);
                store.get_mut(id)[[r, c]] = orig;
                out[[r, c]] = (up - down) / (2.0 * eps);
            }
        }
        out
    }

    fn check(store: &mut ParamStore, build: &dyn Fn(&mut Tape, &ParamStore) -> Var) {
        let mask = vec![true; store.len()];
        let mut tape = Tape::training(mask);
        let loss = build(&mut tape, store);
        let grads = tape.backward(loss, store.len());
        let f = |s: &ParamStore| {
            let mut t = Tape::inference();
            let l = build(&mut t, s);
            t.scalar(l)
        };
        for id in store.ids().collect::<Vec<_>>() {
            let num = numeric_grad(store, id, &f);
            let ana = grads.get(id).cloned().unwrap_or_else(|| Mat::zeros(num.dim()));
            for (a, n) in ana.iter().zip(num.iter()) {
                let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                assert!(err < 1e-5, "{}: analytic {a} numeric {n}", store.name(id));
            }
        }
    }

    /// Projects a matrix to a scalar with fixed pseudo-random weights so every
    /// entry of the gradient is exercised.
    fn probe(tape: &mut Tape, x: Var) -> Var {
        let (r, c) = tape.value(x).dim();
        let w = Mat::from_shape_fn((r, c), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 1.7);
        let wv = tape.input(w);
        let flat_r = tape.value(x).len();
        let xr = tape.rearrange(x, 1, flat_r, (0..flat_r).collect());
        let wr = tape.rearrange(wv, 1, flat_r, (0..flat_r).collect());
        tape.matmul_t(xr, wr)
    }

    fn store_with(shapes: &[(&str, usize, usize)]) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = ParamStore::new();
        for (n, r, c) in shapes {
            s.add(*n, normal(*r, *c, 0.8, &mut rng));
        }
        s
    }

    #[test]
    fn matmul_add_gelu_gradients() {
        let mut s = store_with(&[("x", 3, 4), ("w", 5, 4), ("b", 1, 5), ("m", 5, 2)]);
        check(&mut s, &|t, s| {
            let x = t.param(s, ParamId(0));
            let w = t.param(s, ParamId(1));
            let b = t.param(s, ParamId(2));
            let m = t.param(s, ParamId(3));
            let h = t.matmul_t(x, w);
            let h = t.add_row(h, b);
            let h = t.gelu(h);
            let h2 = t.scale(h, 0.5);
            let h = t.add(h, h2);
            let o = t.matmul(h, m);
            probe(t, o)
        });
    }

    #[test]
    fn layer_norm_and_softmax_gradients() {
        let mut s = store_with(&[("x", 4, 6), ("g", 1, 6), ("b", 1, 6)]);
        check(&mut s, &|t, s| {
            let x = t.param(s, ParamId(0));
            let g = t.param(s, ParamId(1));
            let b = t.param(s, ParamId(2));
            let y = t.layer_norm(x, g, b);
            let sq = t.slice_cols(y, 0, 4);
            let p = t.softmax(sq, true);
            let q = t.softmax(y, false);
            let ls = t.log_softmax(y);
            let c = t.concat_cols(&[p, q, ls]);
            probe(t, c)
        });
    }

    #[test]
    fn structural_op_gradients() {
        let mut s = store_with(&[("e", 5, 3), ("x", 4, 3)]);
        check(&mut s, &|t, s| {
            let e = t.param(s, ParamId(0));
            let x = t.param(s, ParamId(1));
            let g = t.gather_rows(e, &[4, 0, 4, 2]);
            let r = t.concat_rows(&[g, x]);
            let top = t.slice_rows(r, 2, 4);
            let m = t.group_mean(top, 2);
            let map: Vec<usize> = (0..24).rev().collect();
            let rr = t.rearrange(r, 4, 6, map);
            let a = probe(t, m);
            let keep = Mat::from_shape_fn((4, 6), |(i, j)| ((i + j) % 3) as f64 * 0.5);
            let rr = t.mask(rr, keep);
            let b = probe(t, rr);
            t.weighted_sum(&[(a, 0.3), (b, -1.2)])
        });
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let s = store_with(&[("a", 2, 2), ("b", 2, 2)]);
        let mut t = Tape::training(vec![false, true]);
        let a = t.param(&s, ParamId(0));
        let b = t.param(&s, ParamId(1));
        let c = t.matmul(a, b);
        let l = probe(&mut t, c);
        let g = t.backward(l, 2);
        assert!(g.get(ParamId(0)).is_none());
        assert!(g.get(ParamId(1)).is_some());
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut t = Tape::inference();
        let x = t.input(Mat::ones((3, 3)));
        let p = t.softmax(x, true);
        let v = t.value(p);
        assert_eq!(v[[0, 1]], 0.0);
        assert_eq!(v[[0, 0]], 1.0);
        assert!((v[[2, 2]] - 1.0 / 3.0).abs() < 1e-15);
    }
}
