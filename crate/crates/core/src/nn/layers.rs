//! Transformer building blocks recorded on a [`Graph`], addressed by
//! parameter indices.

use std::sync::Arc;

use super::graph::{Graph, SeqLayout, Var};
use super::tensor::{Real, Tensor};
use crate::error::Result;

/// Epsilon used by every layer normalization in the encoder.
pub const LN_EPS: f64 = 1e-5;

/// Named, ordered parameter list.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Self {
        assert_eq!(names.len(), tensors.len());
        Self { names, tensors }
    }

    /// Appends a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionIndex {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerIndex {
    pub ln1_gamma: usize,
    pub ln1_beta: usize,
    pub attn: AttentionIndex,
    pub ln2_gamma: usize,
    pub ln2_beta: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Query/key/value/output projections (`h×h` weights, length-`h` biases).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights<T> {
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
}

impl<T: Real> AttentionWeights<T> {
    /// Identity projections with zero biases.
    pub fn identity(h: usize) -> Self {
        let mut eye = Tensor::zeros(vec![h, h]);
        for i in 0..h {
            eye.data_mut()[i * h + i] = T::one();
        }
        let zero = Tensor::zeros(vec![h]);
        Self {
            wq: eye.clone(),
            bq: zero.clone(),
            wk: eye.clone(),
            bk: zero.clone(),
            wv: eye.clone(),
            bv: zero.clone(),
            wo: eye,
            bo: zero,
        }
    }

    pub fn push_into(&self, set: &mut ParamSet<T>, prefix: &str) -> AttentionIndex {
        AttentionIndex {
            wq: set.push(format!("{prefix}.wq"), self.wq.clone()),
            bq: set.push(format!("{prefix}.bq"), self.bq.clone()),
            wk: set.push(format!("{prefix}.wk"), self.wk.clone()),
            bk: set.push(format!("{prefix}.bk"), self.bk.clone()),
            wv: set.push(format!("{prefix}.wv"), self.wv.clone()),
            bv: set.push(format!("{prefix}.bv"), self.bv.clone()),
            wo: set.push(format!("{prefix}.wo"), self.wo.clone()),
            bo: set.push(format!("{prefix}.bo"), self.bo.clone()),
        }
    }
}

/// One pre-norm encoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    pub ln1_gamma: Tensor<T>,
    pub ln1_beta: Tensor<T>,
    pub attn: AttentionWeights<T>,
    pub ln2_gamma: Tensor<T>,
    pub ln2_beta: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl<T: Real> LayerWeights<T> {
    pub fn push_into(&self, set: &mut ParamSet<T>, prefix: &str) -> LayerIndex {
        let ln1_gamma = set.push(format!("{prefix}.ln1.gamma"), self.ln1_gamma.clone());
        let ln1_beta = set.push(format!("{prefix}.ln1.beta"), self.ln1_beta.clone());
        let attn = self.attn.push_into(set, &format!("{prefix}.attn"));
        LayerIndex {
            ln1_gamma,
            ln1_beta,
            attn,
            ln2_gamma: set.push(format!("{prefix}.ln2.gamma"), self.ln2_gamma.clone()),
            ln2_beta: set.push(format!("{prefix}.ln2.beta"), self.ln2_beta.clone()),
            w1: set.push(format!("{prefix}.ffn.w1"), self.w1.clone()),
            b1: set.push(format!("{prefix}.ffn.b1"), self.b1.clone()),
            w2: set.push(format!("{prefix}.ffn.w2"), self.w2.clone()),
            b2: set.push(format!("{prefix}.ffn.b2"), self.b2.clone()),
        }
    }
}

pub fn linear_params<T: Real>(g: &mut Graph<'_, T>, x: Var, w: usize, b: usize) -> Result<Var> {
    let (w, b) = (g.param(w), g.param(b));
    g.linear(x, w, b)
}

pub fn layer_norm_params<T: Real>(g: &mut Graph<'_, T>, x: Var, gamma: usize, beta: usize) -> Result<Var> {
    let (gamma, beta) = (g.param(gamma), g.param(beta));
    g.layer_norm(x, gamma, beta, T::of(LN_EPS))
}

/// Multi-head self-attention with output projection.
pub fn attention_block<T: Real>(
    g: &mut Graph<'_, T>,
    x: Var,
    idx: &AttentionIndex,
    heads: usize,
    layout: Arc<SeqLayout>,
) -> Result<Var> {
    let q = linear_params(g, x, idx.wq, idx.bq)?;
    let k = linear_params(g, x, idx.wk, idx.bk)?;
    let v = linear_params(g, x, idx.wv, idx.bv)?;
    let a = g.attention(q, k, v, heads, layout)?;
    linear_params(g, a, idx.wo, idx.bo)
}

/// `x + MHSA(LN(x))`, then `x + FFN(LN(x))` with a GELU feed-forward.
pub fn transformer_layer_block<T: Real>(
    g: &mut Graph<'_, T>,
    x: Var,
    idx: &LayerIndex,
    heads: usize,
    layout: Arc<SeqLayout>,
) -> Result<Var> {
    let n1 = layer_norm_params(g, x, idx.ln1_gamma, idx.ln1_beta)?;
    let a = attention_block(g, n1, &idx.attn, heads, layout)?;
    let x = g.add(x, a)?;
    let n2 = layer_norm_params(g, x, idx.ln2_gamma, idx.ln2_beta)?;
    let f1 = linear_params(g, n2, idx.w1, idx.b1)?;
    let f1 = g.gelu(f1)?;
    let f2 = linear_params(g, f1, idx.w2, idx.b2)?;
    g.add(x, f2)
}
