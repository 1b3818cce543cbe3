//! Wengert-list reverse-mode autodiff over 2-D tensors.

use std::collections::HashMap;

use super::tensor::gemm;
use super::{DiffError, ParamId, ParamStore, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    GatherRows(Var, Vec<usize>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SegmentSum(Var, Vec<usize>),
    SegmentMean(Var, Vec<usize>, Vec<usize>),
    /// Source row per output element, `usize::MAX` for empty segments.
    SegmentMax(Var, Vec<usize>),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SumAll(Var),
    Bce { logits: Var, targets: Tensor, mask: Tensor, denom: f64 },
    SquaredError { pred: Var, targets: Tensor, mask: Tensor, denom: f64 },
    GruCell { xg: Var, hg: Var, h: Var, r: Vec<f64>, z: Vec<f64>, n: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    param_order: Vec<(ParamId, Var)>,
    kinks: u64,
}

/// Gradients of one backward pass, kept for parameters and leaf variables.
#[derive(Debug)]
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|&(_, v)| self.wrt(v))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().filter_map(|&(p, v)| self.wrt(v).map(|g| (p, g)))
    }
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mismatch(op: &'static str, left: [usize; 2], right: [usize; 2]) -> DiffError {
    DiffError::ShapeMismatch { op, left, right }
}

fn check_segments(op: &'static str, ids: &[usize], rows: usize, n: usize) -> Result<(), DiffError> {
    if ids.len() != rows {
        return Err(mismatch(op, [rows, 0], [ids.len(), 0]));
    }
    if let Some(&bad) = ids.iter().find(|&&s| s >= n) {
        return Err(DiffError::IndexOutOfRange { op, index: bad, bound: n });
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Hash of every ReLU sign pattern and max-selection seen so far. Two
    /// evaluations with equal signatures took the same piecewise branch.
    pub fn kink_signature(&self) -> u64 {
        self.kinks
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn note(&mut self, word: u64) {
        self.kinks = mix(self.kinks ^ word);
    }

    /// Input that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Parameter leaf; repeated calls with the same id return the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        self.param_order.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let ([m, k], [k2, n]) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(mismatch("matmul", [m, k], [k2, n]));
        }
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, out.data_mut(), false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let ([m, k], [n, k2]) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(mismatch("matmul_bt", [m, k], [n, k2]));
        }
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, out.data_mut(), false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulBT(a, b), rg))
    }

    /// `x · wᵀ + b` with `w` stored as `out x in` and `b` as `1 x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, DiffError> {
        let ([m, k], [n, k2]) = (self.shape(x), self.shape(w));
        if k != k2 {
            return Err(mismatch("linear", [m, k], [n, k2]));
        }
        if let Some(b) = b {
            if self.shape(b) != [1, n] {
                return Err(mismatch("linear bias", [1, n], self.shape(b)));
            }
        }
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, self.value(x).data(), false, self.value(w).data(), true, out.data_mut(), false);
        if let Some(b) = b {
            let bias = self.nodes[b.0].value.data();
            for row in out.data_mut().chunks_mut(n) {
                for (o, bv) in row.iter_mut().zip(bias) {
                    *o += bv;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(sa[0], sa[1], data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Adds the `1 x cols` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        let ([m, n], sr) = (self.shape(a), self.shape(row));
        if sr != [1, n] {
            return Err(mismatch("add_row", [m, n], sr));
        }
        let mut out = self.value(a).clone();
        let r = self.nodes[row.0].value.data();
        for chunk in out.data_mut().chunks_mut(n.max(1)) {
            for (o, rv) in chunk.iter_mut().zip(r) {
                *o += rv;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let mut kinks = self.kinks;
        for chunk in self.nodes[a.0].value.data().chunks(64) {
            let word = chunk.iter().fold(0u64, |w, &x| (w << 1) | u64::from(x > 0.0));
            kinks = mix(kinks ^ word);
        }
        self.kinks = kinks;
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, DiffError> {
        let [m, n] = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(DiffError::IndexOutOfRange { op: "gather_rows", index: bad, bound: m });
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(src.row(i));
        }
        let out = Tensor::new(idx.len(), n, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let [m, n] = self.shape(a);
        if start + len > m {
            return Err(DiffError::IndexOutOfRange { op: "slice_rows", index: start + len, bound: m });
        }
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let out = Tensor::new(len, n, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let [m, n] = self.shape(a);
        if start + len > n {
            return Err(DiffError::IndexOutOfRange { op: "slice_cols", index: start + len, bound: n });
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src.row(r)[start..start + len]);
        }
        let out = Tensor::new(m, len, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let Some(&first) = parts.first() else {
            return Err(mismatch("concat_rows", [0, 0], [0, 0]));
        };
        let n = self.shape(first)[1];
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[1] != n {
                return Err(mismatch("concat_rows", [rows, n], s));
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * n);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(rows, n, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let Some(&first) = parts.first() else {
            return Err(mismatch("concat_cols", [0, 0], [0, 0]));
        };
        let m = self.shape(first)[0];
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[0] != m {
                return Err(mismatch("concat_cols", [m, cols], s));
            }
            cols += s[1];
        }
        let mut out = Tensor::zeros(m, cols);
        let mut offset = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            let w = v.cols();
            for r in 0..m {
                out.row_mut(r)[offset..offset + w].copy_from_slice(v.row(r));
            }
            offset += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Row `i` of `a` is added into output row `segments[i]`; empty segments stay zero.
    pub fn segment_sum(&mut self, a: Var, segments: &[usize], num_segments: usize) -> Result<Var, DiffError> {
        let [m, n] = self.shape(a);
        check_segments("segment_sum", segments, m, num_segments)?;
        let mut out = Tensor::zeros(num_segments, n);
        let src = self.value(a);
        for (i, &s) in segments.iter().enumerate() {
            for (o, v) in out.row_mut(s).iter_mut().zip(src.row(i)) {
                *o += v;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentSum(a, segments.to_vec()), rg))
    }

    pub fn segment_mean(&mut self, a: Var, segments: &[usize], num_segments: usize) -> Result<Var, DiffError> {
        let [m, n] = self.shape(a);
        check_segments("segment_mean", segments, m, num_segments)?;
        let mut counts = vec![0usize; num_segments];
        let mut out = Tensor::zeros(num_segments, n);
        let src = self.value(a);
        for (i, &s) in segments.iter().enumerate() {
            counts[s] += 1;
            for (o, v) in out.row_mut(s).iter_mut().zip(src.row(i)) {
                *o += v;
            }
        }
        for (s, &c) in counts.iter().enumerate() {
            if c > 0 {
                let inv = c as f64;
                out.row_mut(s).iter_mut().for_each(|o| *o /= inv);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentMean(a, segments.to_vec(), counts), rg))
    }

    /// Per-segment, per-column maximum. Empty segments give zero rows; ties go
    /// to the first row.
    pub fn segment_max(&mut self, a: Var, segments: &[usize], num_segments: usize) -> Result<Var, DiffError> {
        let [m, n] = self.shape(a);
        check_segments("segment_max", segments, m, num_segments)?;
        let mut arg = vec![usize::MAX; num_segments * n];
        let mut out = Tensor::zeros(num_segments, n);
        let src = self.value(a);
        for (i, &s) in segments.iter().enumerate() {
            let row = src.row(i);
            for c in 0..n {
                let k = s * n + c;
                if arg[k] == usize::MAX || row[c] > out.data()[k] {
                    arg[k] = i;
                    out.data_mut()[k] = row[c];
                }
            }
        }
        for &a in &arg {
            self.note(a as u64);
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentMax(a, arg), rg))
    }

    /// Row-wise softmax with max subtraction. `-inf` entries get weight 0; a
    /// row that is entirely `-inf` yields zeros.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let n = out.cols();
        if n > 0 {
            for row in out.data_mut().chunks_mut(n) {
                softmax_in_place(row);
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    /// Per-row normalization to zero mean and unit variance, then `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, DiffError> {
        let [m, n] = self.shape(x);
        for p in [gain, bias] {
            if self.shape(p) != [1, n] {
                return Err(mismatch("layer_norm", [m, n], self.shape(p)));
            }
        }
        let src = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = Tensor::zeros(m, n);
        for r in 0..m {
            let row = src.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            let o = out.row_mut(r);
            for c in 0..n {
                let xh = (row[c] - mean) * inv;
                xhat[r * n + c] = xh;
                o[c] = xh * g[c] + b[c];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::SumAll(a), rg)
    }

    /// `Σ mask · BCE(σ(logit), target) / denom` as a `1 x 1` tensor.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor, mask: &Tensor, denom: f64) -> Result<Var, DiffError> {
        let s = self.shape(logits);
        for t in [targets, mask] {
            if t.shape() != s {
                return Err(mismatch("bce_with_logits", s, t.shape()));
            }
        }
        let mut total = 0.0;
        for ((&x, &y), &w) in self.value(logits).data().iter().zip(targets.data()).zip(mask.data()) {
            if w != 0.0 {
                total += w * (x.max(0.0) - x * y + (-x.abs()).exp().ln_1p());
            }
        }
        let out = Tensor::scalar(total / denom);
        let rg = self.rg(logits);
        Ok(self.push(
            out,
            Op::Bce { logits, targets: targets.clone(), mask: mask.clone(), denom },
            rg,
        ))
    }

    /// `Σ mask · (pred - target)² / denom` as a `1 x 1` tensor.
    pub fn squared_error(&mut self, pred: Var, targets: &Tensor, mask: &Tensor, denom: f64) -> Result<Var, DiffError> {
        let s = self.shape(pred);
        for t in [targets, mask] {
            if t.shape() != s {
                return Err(mismatch("squared_error", s, t.shape()));
            }
        }
        let mut total = 0.0;
        for ((&p, &y), &w) in self.value(pred).data().iter().zip(targets.data()).zip(mask.data()) {
            if w != 0.0 {
                total += w * (p - y) * (p - y);
            }
        }
        let out = Tensor::scalar(total / denom);
        let rg = self.rg(pred);
        Ok(self.push(
            out,
            Op::SquaredError { pred, targets: targets.clone(), mask: mask.clone(), denom },
            rg,
        ))
    }

    /// Fused GRU gate arithmetic. `xg` and `hg` hold the input and hidden
    /// pre-activations laid out as `[r | z | n]` blocks:
    /// `r = σ(x_r + h_r)`, `z = σ(x_z + h_z)`, `n = tanh(x_n + r ⊙ h_n)`,
    /// `h' = (1 - z) ⊙ n + z ⊙ h`.
    pub fn gru_cell(&mut self, xg: Var, hg: Var, h: Var) -> Result<Var, DiffError> {
        let [m, hd] = self.shape(h);
        for v in [xg, hg] {
            if self.shape(v) != [m, 3 * hd] {
                return Err(mismatch("gru_cell", [m, 3 * hd], self.shape(v)));
            }
        }
        let (xv, hv, prev) = (self.value(xg).data(), self.value(hg).data(), self.value(h).data());
        let mut r = vec![0.0; m * hd];
        let mut z = vec![0.0; m * hd];
        let mut nn = vec![0.0; m * hd];
        let mut out = Tensor::zeros(m, hd);
        let o = out.data_mut();
        for i in 0..m {
            let xrow = &xv[i * 3 * hd..(i + 1) * 3 * hd];
            let hrow = &hv[i * 3 * hd..(i + 1) * 3 * hd];
            for j in 0..hd {
                let k = i * hd + j;
                let rv = sigmoid(xrow[j] + hrow[j]);
                let zv = sigmoid(xrow[hd + j] + hrow[hd + j]);
                let nv = (xrow[2 * hd + j] + rv * hrow[2 * hd + j]).tanh();
                r[k] = rv;
                z[k] = zv;
                nn[k] = nv;
                o[k] = (1.0 - zv) * nv + zv * prev[k];
            }
        }
        let rg = self.rg(xg) || self.rg(hg) || self.rg(h);
        Ok(self.push(out, Op::GruCell { xg, hg, h, r, z, n: nn }, rg))
    }

    /// Reverse sweep from `loss`, seeded with ones (so a non-scalar output is
    /// differentiated through its sum).
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        let lv = self.value(loss);
        grads[loss.0] = Some(Tensor::filled(lv.rows(), lv.cols(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match node.op {
                Op::Leaf | Op::Param => grads[i] = Some(g),
                _ => self.backprop(i, &g, &mut grads),
            }
        }
        Gradients {
            leaves: grads,
            params: self.param_order.clone(),
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut Tensor)) {
        if !self.rg(v) {
            return;
        }
        let [m, n] = self.shape(v);
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(m, n));
        }
        f(slot.as_mut().expect("initialized above"));
    }

    fn backprop(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul(a, b) => {
                let ([m, k], n) = (self.shape(a), y.cols());
                self.acc_with(grads, a, |ga| {
                    gemm(m, n, k, g.data(), false, self.value(b).data(), true, ga.data_mut(), true)
                });
                self.acc_with(grads, b, |gb| {
                    gemm(k, m, n, self.value(a).data(), true, g.data(), false, gb.data_mut(), true)
                });
            }
            &Op::MatMulBT(a, b) => {
                let ([m, k], n) = (self.shape(a), y.cols());
                self.acc_with(grads, a, |ga| {
                    gemm(m, n, k, g.data(), false, self.value(b).data(), false, ga.data_mut(), true)
                });
                self.acc_with(grads, b, |gb| {
                    gemm(n, m, k, g.data(), true, self.value(a).data(), false, gb.data_mut(), true)
                });
            }
            &Op::Linear { x, w, b } => {
                let ([m, k], n) = (self.shape(x), y.cols());
                self.acc_with(grads, x, |gx| {
                    gemm(m, n, k, g.data(), false, self.value(w).data(), false, gx.data_mut(), true)
                });
                self.acc_with(grads, w, |gw| {
                    gemm(n, m, k, g.data(), true, self.value(x).data(), false, gw.data_mut(), true)
                });
                if let Some(b) = b {
                    self.acc_with(grads, b, |gb| {
                        for row in g.data().chunks(n.max(1)) {
                            for (o, v) in gb.data_mut().iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    });
                }
            }
            &Op::Add(a, b) => {
                self.acc(grads, a, g.clone());
                self.acc(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.acc(grads, a, g.clone());
                self.acc(grads, b, g.map(|v| -v));
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                self.acc_with(grads, a, |ga| {
                    for ((o, gv), bv) in ga.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *o += gv * bv;
                    }
                });
                self.acc_with(grads, b, |gb| {
                    for ((o, gv), av) in gb.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *o += gv * av;
                    }
                });
            }
            &Op::Scale(a, c) => self.acc(grads, a, g.map(|v| v * c)),
            &Op::AddRow(a, row) => {
                self.acc(grads, a, g.clone());
                let n = y.cols();
                self.acc_with(grads, row, |gr| {
                    for chunk in g.data().chunks(n.max(1)) {
                        for (o, v) in gr.data_mut().iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                });
            }
            &Op::Relu(a) => {
                let x = self.value(a);
                self.acc_with(grads, a, |ga| {
                    for ((o, gv), xv) in ga.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        if *xv > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            &Op::Sigmoid(a) => self.acc_with(grads, a, |ga| {
                for ((o, gv), s) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += gv * s * (1.0 - s);
                }
            }),
            &Op::Tanh(a) => self.acc_with(grads, a, |ga| {
                for ((o, gv), t) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += gv * (1.0 - t * t);
                }
            }),
            Op::GatherRows(a, idx) => self.acc_with(grads, *a, |ga| {
                for (r, &src) in idx.iter().enumerate() {
                    for (o, v) in ga.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }),
            &Op::SliceRows(a, start) => self.acc_with(grads, a, |ga| {
                let n = y.cols();
                for (o, v) in ga.data_mut()[start * n..].iter_mut().zip(g.data()) {
                    *o += v;
                }
            }),
            &Op::SliceCols(a, start) => self.acc_with(grads, a, |ga| {
                let len = y.cols();
                for r in 0..y.rows() {
                    for (o, v) in ga.row_mut(r)[start..start + len].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
            }),
            Op::ConcatRows(parts) => {
                let n = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let rows = self.shape(p)[0];
                    let slice = &g.data()[offset * n..(offset + rows) * n];
                    self.acc_with(grads, p, |gp| {
                        for (o, v) in gp.data_mut().iter_mut().zip(slice) {
                            *o += v;
                        }
                    });
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    self.acc_with(grads, p, |gp| {
                        for r in 0..y.rows() {
                            for (o, v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                *o += v;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SegmentSum(a, seg) => self.acc_with(grads, *a, |ga| {
                for (r, &s) in seg.iter().enumerate() {
                    for (o, v) in ga.row_mut(r).iter_mut().zip(g.row(s)) {
                        *o += v;
                    }
                }
            }),
            Op::SegmentMean(a, seg, counts) => self.acc_with(grads, *a, |ga| {
                for (r, &s) in seg.iter().enumerate() {
                    let inv = counts[s] as f64;
                    for (o, v) in ga.row_mut(r).iter_mut().zip(g.row(s)) {
                        *o += v / inv;
                    }
                }
            }),
            Op::SegmentMax(a, arg) => self.acc_with(grads, *a, |ga| {
                let n = y.cols();
                for (k, &src) in arg.iter().enumerate() {
                    if src != usize::MAX {
                        ga.data_mut()[src * n + k % n] += g.data()[k];
                    }
                }
            }),
            &Op::Softmax(a) => self.acc_with(grads, a, |ga| {
                let n = y.cols();
                if n == 0 {
                    return;
                }
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, p), q) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o += p * (q - dot);
                    }
                }
            }),
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let [m, n] = y.shape();
                let gv = self.value(*gain).data();
                self.acc_with(grads, *x, |gx| {
                    let mut dxhat = vec![0.0; n];
                    for r in 0..m {
                        let gr = g.row(r);
                        let xh = &xhat[r * n..(r + 1) * n];
                        for c in 0..n {
                            dxhat[c] = gr[c] * gv[c];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dx = dxhat.iter().zip(xh).map(|(d, h)| d * h).sum::<f64>() / n as f64;
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o += inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                });
                self.acc_with(grads, *gain, |gg| {
                    for r in 0..m {
                        for (c, o) in gg.data_mut().iter_mut().enumerate() {
                            *o += g.get(r, c) * xhat[r * n + c];
                        }
                    }
                });
                self.acc_with(grads, *bias, |gb| {
                    for r in 0..m {
                        for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            &Op::SumAll(a) => {
                let [m, n] = self.shape(a);
                self.acc(grads, a, Tensor::filled(m, n, g.item()));
            }
            Op::Bce { logits, targets, mask, denom } => {
                let scale = g.item() / denom;
                let x = self.value(*logits);
                self.acc_with(grads, *logits, |gl| {
                    for (k, o) in gl.data_mut().iter_mut().enumerate() {
                        let w = mask.data()[k];
                        if w != 0.0 {
                            *o += scale * w * (sigmoid(x.data()[k]) - targets.data()[k]);
                        }
                    }
                });
            }
            Op::SquaredError { pred, targets, mask, denom } => {
                let scale = g.item() / denom;
                let p = self.value(*pred);
                self.acc_with(grads, *pred, |gp| {
                    for (k, o) in gp.data_mut().iter_mut().enumerate() {
                        let w = mask.data()[k];
                        if w != 0.0 {
                            *o += scale * w * 2.0 * (p.data()[k] - targets.data()[k]);
                        }
                    }
                });
            }
            Op::GruCell { xg, hg, h, r, z, n } => {
                let [m, hd] = y.shape();
                let hgv = self.value(*hg).data();
                let prev = self.value(*h).data();
                let mut dx = Tensor::zeros(m, 3 * hd);
                let mut dh_gates = Tensor::zeros(m, 3 * hd);
                let mut dprev = Tensor::zeros(m, hd);
                for i in 0..m {
                    for j in 0..hd {
                        let k = i * hd + j;
                        let gy = g.data()[k];
                        let (rv, zv, nv) = (r[k], z[k], n[k]);
                        let dn = gy * (1.0 - zv) * (1.0 - nv * nv);
                        let dz = gy * (prev[k] - nv) * zv * (1.0 - zv);
                        let hn = hgv[i * 3 * hd + 2 * hd + j];
                        let dr = dn * hn * rv * (1.0 - rv);
                        let xrow = dx.row_mut(i);
                        xrow[j] = dr;
                        xrow[hd + j] = dz;
                        xrow[2 * hd + j] = dn;
                        let hrow = dh_gates.row_mut(i);
                        hrow[j] = dr;
                        hrow[hd + j] = dz;
                        hrow[2 * hd + j] = dn * rv;
                        dprev.data_mut()[k] = gy * zv;
                    }
                }
                self.acc(grads, *xg, dx);
                self.acc(grads, *hg, dh_gates);
                self.acc(grads, *h, dprev);
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
