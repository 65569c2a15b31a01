//! Value-level entry points for the building blocks. Each runs the same
//! tape kernels the model uses, on a throwaway graph.

use std::sync::Arc;

use super::graph::{Graph, ReduceMode, SeqLayout};
use super::kernels;
use super::layers::{attention_block, transformer_layer_block, AttentionWeights, LayerWeights, ParamSet};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

fn as_matrix<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>> {
    t.clone().reshape(vec![t.rows(), t.cols()])
}

/// `x·w + b`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new(&[], ReduceMode::Sequential);
    let (x, w, b) = (g.input(as_matrix(x)?), g.input(as_matrix(w)?), g.input(b.clone()));
    let out = g.linear(x, w, b)?;
    Ok(g.value(out).clone())
}

/// Layer normalization of a single vector (population variance).
pub fn layer_norm<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let mut g = Graph::new(&[], ReduceMode::Sequential);
    let xv = g.input(as_matrix(x)?);
    let (gv, bv) = (g.input(gamma.clone()), g.input(beta.clone()));
    let out = g.layer_norm(xv, gv, bv, eps)?;
    g.value(out).clone().reshape(x.shape().to_vec())
}

/// Softmax over the valid entries of a vector; invalid entries are exactly 0.
pub fn masked_softmax<T: Real>(logits: &Tensor<T>, valid: &[bool]) -> Result<Tensor<T>> {
    let mut g = Graph::new(&[], ReduceMode::Sequential);
    let x = g.input(as_matrix(logits)?);
    let out = g.masked_softmax(x, valid.to_vec())?;
    g.value(out).clone().reshape(logits.shape().to_vec())
}

/// Multi-head self-attention of one `T×h` token matrix.
pub fn multi_head_self_attention<T: Real>(
    tokens: &Tensor<T>,
    key_valid: &[bool],
    heads: usize,
    proj: &AttentionWeights<T>,
    mode: ReduceMode,
) -> Result<Tensor<T>> {
    let mut set = ParamSet::new();
    let idx = proj.push_into(&mut set, "attn");
    let mut g = Graph::new(set.tensors(), mode);
    let x = g.input(as_matrix(tokens)?);
    let out = attention_block(&mut g, x, &idx, heads, Arc::new(SeqLayout::single(key_valid.to_vec())))?;
    Ok(g.value(out).clone())
}

/// One pre-norm encoder layer applied to a `T×h` token matrix.
pub fn transformer_layer<T: Real>(
    tokens: &Tensor<T>,
    key_valid: &[bool],
    heads: usize,
    params: &LayerWeights<T>,
    mode: ReduceMode,
) -> Result<Tensor<T>> {
    let mut set = ParamSet::new();
    let idx = params.push_into(&mut set, "layer");
    let mut g = Graph::new(set.tensors(), mode);
    let x = g.input(as_matrix(tokens)?);
    let out = transformer_layer_block(&mut g, x, &idx, heads, Arc::new(SeqLayout::single(key_valid.to_vec())))?;
    Ok(g.value(out).clone())
}

/// Column-wise max over the valid rows.
pub fn masked_max_pool<T: Real>(rows: &Tensor<T>, valid: &[bool]) -> Result<Tensor<T>> {
    if valid.len() != rows.rows() {
        return Err(Error::Shape { op: "masked_max_pool", detail: format!("{} flags for {} rows", valid.len(), rows.rows()) });
    }
    let group: Vec<usize> = (0..valid.len()).filter(|&i| valid[i]).collect();
    if group.is_empty() {
        return Err(Error::EmptyGroup("masked_max_pool"));
    }
    let mut g = Graph::new(&[], ReduceMode::Sequential);
    let x = g.input(as_matrix(rows)?);
    let out = g.segment_max(x, &[group])?;
    g.value(out).clone().reshape(vec![rows.cols()])
}

/// Smoothed binary cross-entropy; `p` is clamped to `[1e-7, 1 - 1e-7]`.
pub fn smoothed_bce<T: Real>(p: T, y: T, eps: T) -> Result<T> {
    if !(eps >= T::zero() && eps < T::one()) {
        return Err(Error::Config(format!("label smoothing {eps} outside [0,1)")));
    }
    Ok(kernels::smoothed_bce(p, y, eps))
}
