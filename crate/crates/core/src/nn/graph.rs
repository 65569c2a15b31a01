//! Reverse-mode differentiation over a linear tape.
//!
//! A [`Graph`] records every operation applied to its nodes in execution
//! order. Values are immutable once recorded; [`Graph::backward`] walks the
//! tape in reverse and returns the gradient of a scalar root with respect to
//! every node and every bound parameter.

use std::ops::Range;
use std::sync::Arc;

use super::kernels::{self, canonical_sum, dot, PROB_CLAMP};
use super::tensor::{gemm, Real, Tensor};
use crate::error::{Error, Result};

/// Reduction order used by order-sensitive kernels (attention sums).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReduceMode {
    /// Natural loop order. Deterministic for a fixed input, but permuting
    /// tokens may change the last bits.
    #[default]
    Sequential,
    /// Sorted summation: results are bitwise invariant to token order.
    Canonical,
}

impl ReduceMode {
    pub fn from_deterministic(deterministic: bool) -> Self {
        if deterministic {
            ReduceMode::Canonical
        } else {
            ReduceMode::Sequential
        }
    }
}

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Packed-sequence layout: rows of a matrix split into independent
/// sequences, plus per-row key validity.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqLayout {
    pub segments: Vec<Range<usize>>,
    pub key_valid: Vec<bool>,
}

impl SeqLayout {
    pub fn single(key_valid: Vec<bool>) -> Self {
        let n = key_valid.len();
        Self { segments: vec![0..n], key_valid }
    }

    pub fn rows(&self) -> usize {
        self.key_valid.len()
    }

    fn validate(&self) -> Result<()> {
        let mut next = 0;
        for seg in &self.segments {
            if seg.start != next || seg.end <= seg.start {
                return Err(Error::Shape {
                    op: "attention",
                    detail: "segments must partition the rows".into(),
                });
            }
            if !self.key_valid[seg.clone()].iter().any(|&v| v) {
                return Err(Error::AllMasked);
            }
            next = seg.end;
        }
        if next != self.key_valid.len() {
            return Err(Error::Shape { op: "attention", detail: "segments must cover every row".into() });
        }
        Ok(())
    }
}

enum Op<T> {
    Input,
    Param(usize),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: Vec<(T, T)> },
    Attention { q: Var, k: Var, v: Var, heads: usize, layout: Arc<SeqLayout>, probs: Vec<T> },
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Var, Var),
    SegmentMax { x: Var, argmax: Vec<usize> },
    MaskedSoftmax { x: Var, valid: Vec<bool> },
    L2NormalizeRows { x: Var, norms: Vec<T> },
    CrossEntropyRows { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    SigmoidBce { scores: Var, labels: Vec<T>, eps: T },
    Sum(Var),
    Mean(Var),
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    op: Op<T>,
    value: Option<Tensor<T>>,
}

/// A tape of operations over parameters borrowed from a model.
pub struct Graph<'p, T: Real> {
    params: &'p [Tensor<T>],
    nodes: Vec<Node<T>>,
    mode: ReduceMode,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p [Tensor<T>], mode: ReduceMode) -> Self {
        Self { params, nodes: Vec::new(), mode }
    }

    pub fn mode(&self) -> ReduceMode {
        self.mode
    }

    pub fn params(&self) -> &'p [Tensor<T>] {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].op {
            Op::Param(i) => &self.params[*i],
            _ => self.nodes[v.0].value.as_ref().expect("recorded node has a value"),
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value: Some(value) });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, index: usize) -> Var {
        assert!(index < self.params.len(), "parameter index out of range");
        self.nodes.push(Node { op: Op::Param(index), value: None });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let (k2, n) = self.dims2(b);
        if k != k2 {
            return Err(shape_err("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out)?))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let (n, k2) = self.dims2(b);
        if k != k2 {
            return Err(shape_err("matmul_nt", format!("{m}x{k} · ({n}x{k2})ᵀ")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, &mut out, false);
        Ok(self.push(Op::MatMulNT(a, b), Tensor::matrix(m, n, out)?))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(Op::Transpose(a), Tensor::matrix(c, r, out)?))
    }

    /// Adds a vector to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims2(a);
        let b = self.value(bias);
        if b.len() != c {
            return Err(shape_err("add_row", format!("{r}x{c} + bias of {}", b.len())));
        }
        let bd = b.data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            for (x, &y) in row.iter_mut().zip(bd) {
                *x = *x + y;
            }
        }
        Ok(self.push(Op::AddRow(a, bias), Tensor::matrix(r, c, out)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        }
        let out: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Op::Add(a, b), Tensor::new(shape, out)?))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let ta = self.value(a);
        let out = ta.data().iter().map(|&x| x * s).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Op::Scale(a, s), Tensor::new(shape, out)?))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let out = ta.data().iter().map(|&x| kernels::gelu(x)).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Op::Gelu(a), Tensor::new(shape, out)?))
    }

    /// `x·w + b` for a matrix `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Row-wise layer normalization with population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (r, c) = self.dims2(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.len() != c || b.len() != c {
            return Err(shape_err("layer_norm", format!("width {c}, gamma {}, beta {}", g.len(), b.len())));
        }
        if eps <= T::zero() {
            return Err(Error::Config("layer_norm eps must be positive".into()));
        }
        let (gd, bd) = (g.data(), b.data());
        let src = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        let mut stats = Vec::with_capacity(r);
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let (mean, rstd) = kernels::row_stats(row, eps);
            for j in 0..c {
                out[i * c + j] = gd[j] * (row[j] - mean) * rstd + bd[j];
            }
            stats.push((mean, rstd));
        }
        Ok(self.push(Op::LayerNorm { x, gamma, beta, stats }, Tensor::matrix(r, c, out)?))
    }

    /// Scaled dot-product self-attention over packed sequences.
    ///
    /// `q`, `k`, `v` are `N×h` with `N == layout.rows()`. Each query attends
    /// only to valid keys of its own segment; heads split the columns evenly.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, layout: Arc<SeqLayout>) -> Result<Var> {
        let (n, h) = self.dims2(q);
        if self.dims2(k) != (n, h) || self.dims2(v) != (n, h) {
            return Err(shape_err("attention", "q, k, v must share a shape".into()));
        }
        if heads == 0 || h % heads != 0 {
            return Err(Error::Config(format!("hidden {h} is not divisible by {heads} heads")));
        }
        if layout.rows() != n {
            return Err(shape_err("attention", format!("layout has {} rows, input {n}", layout.rows())));
        }
        layout.validate()?;
        let dh = h / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let canonical = self.mode == ReduceMode::Canonical;

        let total: usize = layout.segments.iter().map(|s| heads * s.len() * s.len()).sum();
        let mut probs = vec![T::zero(); total];
        let mut out = vec![T::zero(); n * h];
        let mut offset = 0;
        let mut scratch: Vec<T> = Vec::new();
        for seg in &layout.segments {
            let t = seg.len();
            let valid: Vec<usize> = seg.clone().filter(|&r| layout.key_valid[r]).collect();
            for head in 0..heads {
                let cols = head * dh..(head + 1) * dh;
                for i in 0..t {
                    let qi = &qd[(seg.start + i) * h..][cols.clone()];
                    let p = &mut probs[offset + (head * t + i) * t..offset + (head * t + i + 1) * t];
                    let mut max = T::neg_infinity();
                    for &r in &valid {
                        let l = dot(qi, &kd[r * h..][cols.clone()]) * scale;
                        p[r - seg.start] = l;
                        max = max.max(l);
                    }
                    scratch.clear();
                    for &r in &valid {
                        let e = (p[r - seg.start] - max).exp();
                        p[r - seg.start] = e;
                        scratch.push(e);
                    }
                    let denom = if canonical {
                        canonical_sum(&mut scratch)
                    } else {
                        scratch.iter().fold(T::zero(), |a, &x| a + x)
                    };
                    for &r in &valid {
                        p[r - seg.start] = p[r - seg.start] / denom;
                    }
                    let o = &mut out[(seg.start + i) * h..][cols.clone()];
                    if canonical {
                        for (c, oc) in o.iter_mut().enumerate() {
                            scratch.clear();
                            scratch.extend(valid.iter().map(|&r| p[r - seg.start] * vd[r * h + head * dh + c]));
                            *oc = canonical_sum(&mut scratch);
                        }
                    } else {
                        for &r in &valid {
                            let w = p[r - seg.start];
                            for (oc, &vv) in o.iter_mut().zip(&vd[r * h..][cols.clone()]) {
                                *oc = *oc + w * vv;
                            }
                        }
                    }
                }
            }
            offset += heads * t * t;
        }
        let value = Tensor::matrix(n, h, out)?;
        Ok(self.push(Op::Attention { q, k, v, heads, layout, probs }, value))
    }

    pub fn gather_rows(&mut self, x: Var, indices: Vec<usize>) -> Result<Var> {
        let (r, c) = self.dims2(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(shape_err("gather_rows", format!("row {bad} of {r}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in &indices {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let value = Tensor::matrix(indices.len(), c, out)?;
        Ok(self.push(Op::GatherRows(x, indices), value))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts.first().map(|&p| self.dims2(p).1).ok_or(Error::Empty("concat_rows"))?;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(shape_err("concat_rows", format!("widths {c} and {}", t.cols())));
            }
            out.extend_from_slice(t.data());
        }
        let rows = out.len() / c.max(1);
        let value = Tensor::matrix(rows, c, out)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims2(a);
        let (rb, cb) = self.dims2(b);
        if ra != rb {
            return Err(shape_err("concat_cols", format!("{ra} rows vs {rb} rows")));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&da[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&db[i * cb..(i + 1) * cb]);
        }
        let value = Tensor::matrix(ra, ca + cb, out)?;
        Ok(self.push(Op::ConcatCols(a, b), value))
    }

    /// Column-wise max over each group of rows; one output row per group.
    ///
    /// Ties go to the lowest row index, which also receives the gradient.
    pub fn segment_max(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let (r, c) = self.dims2(x);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); groups.len() * c];
        let mut argmax = vec![0usize; groups.len() * c];
        for (g, rows) in groups.iter().enumerate() {
            let mut rows = rows.clone();
            rows.sort_unstable();
            let first = *rows.first().ok_or(Error::EmptyGroup("max pool"))?;
            if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
                return Err(shape_err("segment_max", format!("row {bad} of {r}")));
            }
            for j in 0..c {
                let mut best = first;
                for &i in &rows[1..] {
                    if src[i * c + j] > src[best * c + j] {
                        best = i;
                    }
                }
                out[g * c + j] = src[best * c + j];
                argmax[g * c + j] = best;
            }
        }
        let value = Tensor::matrix(groups.len(), c, out)?;
        Ok(self.push(Op::SegmentMax { x, argmax }, value))
    }

    /// Row-wise softmax restricted to `valid` entries; invalid entries are exactly 0.
    pub fn masked_softmax(&mut self, x: Var, valid: Vec<bool>) -> Result<Var> {
        let (r, c) = self.dims2(x);
        if valid.len() != r * c {
            return Err(shape_err("masked_softmax", format!("mask of {} for {r}x{c}", valid.len())));
        }
        let src = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let ok = &valid[i * c..(i + 1) * c];
            let max = row.iter().zip(ok).filter(|(_, &v)| v).map(|(&x, _)| x).fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() && !ok.iter().any(|&v| v) {
                return Err(Error::AllMasked);
            }
            let o = &mut out[i * c..(i + 1) * c];
            let mut denom = T::zero();
            for j in 0..c {
                if ok[j] {
                    o[j] = (row[j] - max).exp();
                    denom = denom + o[j];
                }
            }
            for x in o.iter_mut() {
                *x = *x / denom;
            }
        }
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(Op::MaskedSoftmax { x, valid }, value))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        let mut norms = Vec::with_capacity(r);
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let norm = dot(row, row).sqrt();
            if norm <= T::zero() {
                return Err(Error::ZeroNorm);
            }
            for j in 0..c {
                out[i * c + j] = row[j] / norm;
            }
            norms.push(norm);
        }
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(Op::L2NormalizeRows { x, norms }, value))
    }

    /// Mean over rows of `-log softmax(row)[target]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var> {
        let (r, c) = self.dims2(logits);
        if targets.len() != r || targets.iter().any(|&t| t >= c) {
            return Err(shape_err("cross_entropy_rows", format!("{} targets for {r}x{c}", targets.len())));
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); r * c];
        let mut total = T::zero();
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let denom: T = row.iter().map(|&x| (x - max).exp()).sum();
            for j in 0..c {
                probs[i * c + j] = (row[j] - max).exp() / denom;
            }
            total = total + denom.ln() + max - row[targets[i]];
        }
        let value = Tensor::scalar(total / T::of(r as f64));
        Ok(self.push(Op::CrossEntropyRows { logits, targets, probs }, value))
    }

    /// Mean smoothed binary cross-entropy of `sigmoid(scores)` against `labels`.
    pub fn sigmoid_bce(&mut self, scores: Var, labels: Vec<T>, eps: T) -> Result<Var> {
        let s = self.value(scores);
        if s.len() != labels.len() || s.is_empty() {
            return Err(shape_err("sigmoid_bce", format!("{} scores, {} labels", s.len(), labels.len())));
        }
        if !(eps >= T::zero() && eps < T::one()) {
            return Err(Error::Config(format!("label smoothing {eps} outside [0,1)")));
        }
        let total: T = s
            .data()
            .iter()
            .zip(&labels)
            .map(|(&x, &y)| kernels::smoothed_bce(kernels::sigmoid(x), y, eps))
            .sum();
        let value = Tensor::scalar(total / T::of(labels.len() as f64));
        Ok(self.push(Op::SigmoidBce { scores, labels, eps }, value))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: T = self.value(x).data().iter().copied().sum();
        Ok(self.push(Op::Sum(x), Tensor::scalar(total)))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::Empty("mean"));
        }
        let total: T = t.data().iter().copied().sum();
        let value = Tensor::scalar(total / T::of(t.len() as f64));
        Ok(self.push(Op::Mean(x), value))
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut total = T::zero();
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(shape_err("weighted_sum", format!("term of shape {:?}", t.shape())));
            }
            total = total + w * t.data()[0];
        }
        Ok(self.push(Op::WeightedSum(terms.to_vec()), Tensor::scalar(total)))
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(shape_err("backward", format!("root has shape {:?}", rv.shape())));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let mut param_grads: Vec<Tensor<T>> = self.params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(p), Some(g)) = (&node.op, &grads[idx]) {
                for (a, &b) in param_grads[*p].data_mut().iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
        }
        Ok(Gradients { nodes: grads, params: param_grads })
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let out = self.nodes[idx].value.as_ref();
        match &self.nodes[idx].op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.dims2(*b).1;
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                gemm(m, n, k, g, false, bd, true, slot(grads, *a, m * k), true);
                gemm(k, m, n, ad, true, g, false, slot(grads, *b, k * n), true);
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.dims2(*b).0;
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                gemm(m, n, k, g, false, bd, false, slot(grads, *a, m * k), true);
                gemm(n, m, k, g, true, ad, false, slot(grads, *b, n * k), true);
            }
            Op::Transpose(a) => {
                let (r, c) = self.dims2(*a);
                let ga = slot(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = ga[i * c + j] + g[j * r + i];
                    }
                }
            }
            Op::AddRow(a, bias) => {
                let (r, c) = self.dims2(*a);
                accumulate(slot(grads, *a, r * c), g);
                let gb = slot(grads, *bias, c);
                for row in g.chunks(c) {
                    accumulate(gb, row);
                }
            }
            Op::Add(a, b) => {
                accumulate(slot(grads, *a, g.len()), g);
                accumulate(slot(grads, *b, g.len()), g);
            }
            Op::Scale(a, s) => {
                let ga = slot(grads, *a, g.len());
                for (x, &y) in ga.iter_mut().zip(g) {
                    *x = *x + y * *s;
                }
            }
            Op::Gelu(a) => {
                let src = self.value(*a).data();
                let ga = slot(grads, *a, g.len());
                for ((x, &y), &s) in ga.iter_mut().zip(g).zip(src) {
                    *x = *x + y * kernels::gelu_grad(s);
                }
            }
            Op::LayerNorm { x, gamma, beta, stats } => {
                let (r, c) = self.dims2(*x);
                let src = self.value(*x).data();
                let gd = self.value(*gamma).data();
                let cf = T::of(c as f64);
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); r * c];
                let mut xhat = vec![T::zero(); c];
                let mut dxhat = vec![T::zero(); c];
                for i in 0..r {
                    let (mean, rstd) = stats[i];
                    let gi = &g[i * c..(i + 1) * c];
                    for j in 0..c {
                        xhat[j] = (src[i * c + j] - mean) * rstd;
                        dxhat[j] = gi[j] * gd[j];
                        dgamma[j] = dgamma[j] + gi[j] * xhat[j];
                        dbeta[j] = dbeta[j] + gi[j];
                    }
                    let m1 = dxhat.iter().copied().sum::<T>() / cf;
                    let m2 = dot(&dxhat, &xhat) / cf;
                    for j in 0..c {
                        dx[i * c + j] = rstd * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                accumulate(slot(grads, *x, r * c), &dx);
                accumulate(slot(grads, *gamma, c), &dgamma);
                accumulate(slot(grads, *beta, c), &dbeta);
            }
            Op::Attention { q, k, v, heads, layout, probs } => {
                self.attention_backward(g, grads, (*q, *k, *v), *heads, layout, probs);
            }
            Op::GatherRows(x, indices) => {
                let (r, c) = self.dims2(*x);
                let gx = slot(grads, *x, r * c);
                for (o, &i) in indices.iter().enumerate() {
                    accumulate(&mut gx[i * c..(i + 1) * c], &g[o * c..(o + 1) * c]);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    accumulate(slot(grads, p, len), &g[off..off + len]);
                    off += len;
                }
            }
            Op::ConcatCols(a, b) => {
                let (r, ca) = self.dims2(*a);
                let cb = self.dims2(*b).1;
                {
                    let ga = slot(grads, *a, r * ca);
                    for i in 0..r {
                        accumulate(&mut ga[i * ca..(i + 1) * ca], &g[i * (ca + cb)..i * (ca + cb) + ca]);
                    }
                }
                let gb = slot(grads, *b, r * cb);
                for i in 0..r {
                    accumulate(&mut gb[i * cb..(i + 1) * cb], &g[i * (ca + cb) + ca..(i + 1) * (ca + cb)]);
                }
            }
            Op::SegmentMax { x, argmax } => {
                let (r, c) = self.dims2(*x);
                let gx = slot(grads, *x, r * c);
                for (o, &src_row) in argmax.iter().enumerate() {
                    let j = o % c;
                    gx[src_row * c + j] = gx[src_row * c + j] + g[o];
                }
            }
            Op::MaskedSoftmax { x, valid } => {
                let y = out.expect("softmax output").data();
                let (r, c) = self.dims2(*x);
                let gx = slot(grads, *x, r * c);
                for i in 0..r {
                    let yi = &y[i * c..(i + 1) * c];
                    let gi = &g[i * c..(i + 1) * c];
                    let s = dot(yi, gi);
                    for j in 0..c {
                        if valid[i * c + j] {
                            gx[i * c + j] = gx[i * c + j] + yi[j] * (gi[j] - s);
                        }
                    }
                }
            }
            Op::L2NormalizeRows { x, norms } => {
                let y = out.expect("normalize output").data();
                let (r, c) = self.dims2(*x);
                let gx = slot(grads, *x, r * c);
                for i in 0..r {
                    let yi = &y[i * c..(i + 1) * c];
                    let gi = &g[i * c..(i + 1) * c];
                    let s = dot(yi, gi);
                    for j in 0..c {
                        gx[i * c + j] = gx[i * c + j] + (gi[j] - yi[j] * s) / norms[i];
                    }
                }
            }
            Op::CrossEntropyRows { logits, targets, probs } => {
                let (r, c) = self.dims2(*logits);
                let scale = g[0] / T::of(r as f64);
                let gl = slot(grads, *logits, r * c);
                for i in 0..r {
                    for j in 0..c {
                        let onehot = if j == targets[i] { T::one() } else { T::zero() };
                        gl[i * c + j] = gl[i * c + j] + (probs[i * c + j] - onehot) * scale;
                    }
                }
            }
            Op::SigmoidBce { scores, labels, eps } => {
                let s = self.value(*scores).data();
                let n = labels.len();
                let scale = g[0] / T::of(n as f64);
                let lo = T::of(PROB_CLAMP);
                let hi = T::one() - lo;
                let gs = slot(grads, *scores, n);
                for i in 0..n {
                    let p = kernels::sigmoid(s[i]);
                    if p > lo && p < hi {
                        let target = labels[i] * (T::one() - *eps) + *eps / T::of(2.0);
                        gs[i] = gs[i] + (p - target) * scale;
                    }
                }
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                let gx = slot(grads, *x, len);
                for a in gx.iter_mut() {
                    *a = *a + g[0];
                }
            }
            Op::Mean(x) => {
                let len = self.value(*x).len();
                let share = g[0] / T::of(len as f64);
                let gx = slot(grads, *x, len);
                for a in gx.iter_mut() {
                    *a = *a + share;
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    let gv = slot(grads, v, 1);
                    gv[0] = gv[0] + g[0] * w;
                }
            }
        }
        Ok(())
    }

    fn attention_backward(
        &self,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        (q, k, v): (Var, Var, Var),
        heads: usize,
        layout: &SeqLayout,
        probs: &[T],
    ) {
        let (n, h) = self.dims2(q);
        let dh = h / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![T::zero(); n * h];
        let mut dk = vec![T::zero(); n * h];
        let mut dv = vec![T::zero(); n * h];
        let mut ds: Vec<T> = Vec::new();
        let mut offset = 0;
        for seg in &layout.segments {
            let t = seg.len();
            let valid: Vec<usize> = seg.clone().filter(|&r| layout.key_valid[r]).collect();
            for head in 0..heads {
                let c0 = head * dh;
                for i in 0..t {
                    let row = seg.start + i;
                    let p = &probs[offset + (head * t + i) * t..offset + (head * t + i + 1) * t];
                    let go = &g[row * h + c0..row * h + c0 + dh];
                    ds.clear();
                    let mut s = T::zero();
                    for &r in &valid {
                        let dp = dot(go, &vd[r * h + c0..r * h + c0 + dh]);
                        ds.push(dp);
                        s = s + p[r - seg.start] * dp;
                    }
                    for (idx, &r) in valid.iter().enumerate() {
                        let pk = p[r - seg.start];
                        let dsk = pk * (ds[idx] - s) * scale;
                        for c in 0..dh {
                            dv[r * h + c0 + c] = dv[r * h + c0 + c] + pk * go[c];
                            dq[row * h + c0 + c] = dq[row * h + c0 + c] + dsk * kd[r * h + c0 + c];
                            dk[r * h + c0 + c] = dk[r * h + c0 + c] + dsk * qd[row * h + c0 + c];
                        }
                    }
                }
            }
            offset += heads * t * t;
        }
        accumulate(slot(grads, q, n * h), &dq);
        accumulate(slot(grads, k, n * h), &dk);
        accumulate(slot(grads, v, n * h), &dv);
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn accumulate<T: Real>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a = *a + b;
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a node, or `None` when the root does not depend on it.
    pub fn of(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Tensor<T>> {
        self.params
    }
}
