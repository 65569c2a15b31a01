use std::ops::Range;
use std::sync::Arc;

use super::config::ModelConfig;
use super::params::{MatchLayout, ModelLayout, ModelParams, TransformerLayout};
use crate::data::{Batch, MaskSample};
use crate::error::{Error, Result};
use crate::nn::layers::{layer_norm_params, linear_params, transformer_layer_block};
use crate::nn::{Graph, ReduceMode, Real, SeqLayout, Tensor, Var};

/// Real (non-padding) rows of a batch, flattened in canonical order.
#[derive(Clone, Debug)]
pub struct PackedInput<T> {
    pub size: usize,
    pub objects: usize,
    pub dim: usize,
    /// `Nv × d` view features, instance-major, then object, then view slot.
    pub views: Vec<T>,
    /// Position of each view row within its object.
    pub view_index: Vec<usize>,
    pub view_keep: Vec<bool>,
    /// Rows of `views` belonging to object `(b, j)`, at `b * objects + j`.
    pub view_ranges: Vec<Range<usize>>,
    pub tokens: Vec<T>,
    pub token_keep: Vec<bool>,
    pub token_ranges: Vec<Range<usize>>,
    pub targets: Vec<usize>,
}

impl<T: Real> PackedInput<T> {
    pub fn from_batch(batch: &Batch) -> Result<Self> {
        let mut p = PackedInput {
            size: batch.size,
            objects: batch.objects,
            dim: batch.dim,
            views: Vec::new(),
            view_index: Vec::new(),
            view_keep: Vec::new(),
            view_ranges: Vec::with_capacity(batch.size * batch.objects),
            tokens: Vec::new(),
            token_keep: Vec::new(),
            token_ranges: Vec::with_capacity(batch.size),
            targets: batch.targets.clone(),
        };
        for b in 0..batch.size {
            for j in 0..batch.objects {
                let start = p.view_keep.len();
                for v in 0..batch.max_views {
                    let s = batch.view_slot(b, j, v);
                    if batch.view_valid[s] {
                        p.views.extend(batch.view_row(b, j, v).iter().map(|&x| T::of(x as f64)));
                        p.view_index.push(v);
                        p.view_keep.push(batch.view_keep[s]);
                    }
                }
                p.view_ranges.push(start..p.view_keep.len());
            }
            let start = p.token_keep.len();
            for t in 0..batch.max_tokens {
                let s = batch.token_slot(b, t);
                if batch.token_valid[s] {
                    p.tokens.extend(batch.token_row(b, t).iter().map(|&x| T::of(x as f64)));
                    p.token_keep.push(batch.token_keep[s]);
                }
            }
            p.token_ranges.push(start..p.token_keep.len());
        }
        p.validate()?;
        Ok(p)
    }

    /// One instance from explicit feature matrices (views in canonical order).
    pub fn from_instance(views: &[Tensor<T>], language: &Tensor<T>, masks: Option<&MaskSample>) -> Result<Self> {
        let dim = language.cols();
        let mut p = PackedInput {
            size: 1,
            objects: views.len(),
            dim,
            views: Vec::new(),
            view_index: Vec::new(),
            view_keep: Vec::new(),
            view_ranges: Vec::new(),
            tokens: language.data().to_vec(),
            token_keep: vec![true; language.rows()],
            token_ranges: vec![0..language.rows()],
            targets: vec![0],
        };
        for (j, obj) in views.iter().enumerate() {
            if obj.shape().len() != 2 || obj.cols() != dim {
                return Err(Error::Shape { op: "embed_and_assemble", detail: format!("object {j} has shape {:?}", obj.shape()) });
            }
            let start = p.view_keep.len();
            p.views.extend_from_slice(obj.data());
            p.view_index.extend(0..obj.rows());
            p.view_keep.extend(std::iter::repeat_n(true, obj.rows()));
            p.view_ranges.push(start..p.view_keep.len());
        }
        if let Some(m) = masks {
            if m.view_keep.len() != views.len() || m.lang_keep.len() != language.rows() {
                return Err(Error::Shape { op: "embed_and_assemble", detail: "mask shape mismatch".into() });
            }
            for (range, keep) in p.view_ranges.iter().zip(&m.view_keep) {
                if keep.len() != range.len() {
                    return Err(Error::Shape { op: "embed_and_assemble", detail: "view mask length mismatch".into() });
                }
                p.view_keep[range.clone()].copy_from_slice(keep);
            }
            p.token_keep.copy_from_slice(&m.lang_keep);
        }
        p.validate()?;
        Ok(p)
    }

    /// Concatenates instances with equal object counts and feature dims.
    pub fn stack(parts: &[PackedInput<T>]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("packed inputs"))?;
        let mut out = PackedInput {
            size: 0,
            objects: first.objects,
            dim: first.dim,
            views: Vec::new(),
            view_index: Vec::new(),
            view_keep: Vec::new(),
            view_ranges: Vec::new(),
            tokens: Vec::new(),
            token_keep: Vec::new(),
            token_ranges: Vec::new(),
            targets: Vec::new(),
        };
        for p in parts {
            if p.objects != out.objects || p.dim != out.dim {
                return Err(Error::Shape { op: "stack", detail: "inputs disagree on objects or dim".into() });
            }
            let (vo, to) = (out.view_keep.len(), out.token_keep.len());
            out.size += p.size;
            out.views.extend_from_slice(&p.views);
            out.view_index.extend_from_slice(&p.view_index);
            out.view_keep.extend_from_slice(&p.view_keep);
            out.view_ranges.extend(p.view_ranges.iter().map(|r| r.start + vo..r.end + vo));
            out.tokens.extend_from_slice(&p.tokens);
            out.token_keep.extend_from_slice(&p.token_keep);
            out.token_ranges.extend(p.token_ranges.iter().map(|r| r.start + to..r.end + to));
            out.targets.extend_from_slice(&p.targets);
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        if self.objects == 0 {
            return Err(Error::Empty("objects"));
        }
        for r in &self.view_ranges {
            if r.is_empty() {
                return Err(Error::EmptyGroup("object views"));
            }
            if !self.view_keep[r.clone()].iter().any(|&k| k) {
                return Err(Error::AllMasked);
            }
        }
        for r in &self.token_ranges {
            if r.is_empty() {
                return Err(Error::Empty("language tokens"));
            }
        }
        if self.targets.iter().any(|&t| t >= self.objects) {
            return Err(Error::Shape { op: "forward", detail: "target out of range".into() });
        }
        Ok(())
    }

    fn view_rows(&self) -> usize {
        self.view_keep.len()
    }

    fn token_rows(&self) -> usize {
        self.token_keep.len()
    }

    fn kept_view_groups(&self) -> Vec<Vec<usize>> {
        self.view_ranges.iter().map(|r| r.clone().filter(|&i| self.view_keep[i]).collect()).collect()
    }

    fn kept_token_groups(&self) -> Vec<Vec<usize>> {
        self.token_ranges.iter().map(|r| r.clone().filter(|&i| self.token_keep[i]).collect()).collect()
    }
}

/// One encoder pass: rows of the packed sequence matrix and their roles.
#[derive(Clone, Debug, PartialEq)]
pub struct PassInfo {
    pub instance: usize,
    pub rows: Range<usize>,
    /// `(object index, absolute row span)`.
    pub object_spans: Vec<(usize, Range<usize>)>,
    pub language_span: Range<usize>,
}

/// Graph nodes produced by [`build_forward`].
pub struct ForwardGraph {
    /// `(size · objects) × 1`, instance-major.
    pub scores: Var,
    /// `(size · objects) × h`.
    pub pooled: Var,
    /// Encoder output rows of all passes; `None` for the baseline.
    pub outputs: Option<Var>,
    /// `size × h` pooled language rows, built only when requested.
    pub language: Option<Var>,
    pub passes: Vec<PassInfo>,
}

struct Assembled {
    seq: Var,
    layout: Arc<SeqLayout>,
    passes: Vec<PassInfo>,
}

fn feature_check<T: Real>(cfg: &ModelConfig, input: &PackedInput<T>) -> Result<()> {
    if input.dim != cfg.feature_dim {
        return Err(Error::Shape { op: "forward", detail: format!("feature dim {} but model expects {}", input.dim, cfg.feature_dim) });
    }
    Ok(())
}

fn assemble<T: Real>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    l: &TransformerLayout,
    input: &PackedInput<T>,
) -> Result<Assembled> {
    feature_check(cfg, input)?;
    let strategy = cfg.strategy();
    let (d, m) = (input.dim, input.objects);
    if let Some(&bad) = input.view_index.iter().find(|&&v| v >= cfg.max_views) {
        return Err(Error::Shape { op: "embed_and_assemble", detail: format!("view index {bad} exceeds max_views {}", cfg.max_views) });
    }

    let xv = g.input(Tensor::matrix(input.view_rows(), d, input.views.clone())?);
    let mut pv = linear_params(g, xv, l.view_w, l.view_b)?;
    if let Some(pos) = l.view_pos {
        let table = g.param(pos);
        let rows = g.gather_rows(table, input.view_index.clone())?;
        pv = g.add(pv, rows)?;
    }

    // Units are the per-object rows entering the encoder: one per view, or one pooled row.
    let (units, unit_ranges, unit_keep): (Var, Vec<Range<usize>>, Vec<bool>) = if strategy.pool_views_first {
        let pooled = g.segment_max(pv, &input.kept_view_groups())?;
        let n = input.view_ranges.len();
        (pooled, (0..n).map(|i| i..i + 1).collect(), vec![true; n])
    } else {
        (pv, input.view_ranges.clone(), input.view_keep.clone())
    };
    let n_units = unit_keep.len();
    let types = g.param(l.token_type);
    let image_type = g.gather_rows(types, vec![0; n_units])?;
    let units = g.add(units, image_type)?;

    let xl = g.input(Tensor::matrix(input.token_rows(), d, input.tokens.clone())?);
    let pl = linear_params(g, xl, l.lang_w, l.lang_b)?;
    let lang_type = g.gather_rows(types, vec![1; input.token_rows()])?;
    let pl = g.add(pl, lang_type)?;
    let all = g.concat_rows(&[units, pl])?;

    let mut order = Vec::new();
    let mut key_valid = Vec::new();
    let mut segments = Vec::new();
    let mut passes = Vec::new();
    let object_groups: Vec<Vec<usize>> = if strategy.separate_objects {
        (0..m).map(|j| vec![j]).collect()
    } else {
        vec![(0..m).collect()]
    };
    for b in 0..input.size {
        for group in &object_groups {
            let start = order.len();
            let mut object_spans = Vec::with_capacity(group.len());
            for &j in group {
                let r = unit_ranges[b * m + j].clone();
                let s = order.len();
                order.extend(r.clone());
                key_valid.extend(r.map(|i| unit_keep[i]));
                object_spans.push((j, s..order.len()));
            }
            let s = order.len();
            let tr = input.token_ranges[b].clone();
            order.extend(tr.clone().map(|i| n_units + i));
            key_valid.extend(tr.map(|i| input.token_keep[i]));
            passes.push(PassInfo { instance: b, rows: start..order.len(), object_spans, language_span: s..order.len() });
            segments.push(start..order.len());
        }
    }
    let seq = g.gather_rows(all, order)?;
    Ok(Assembled { seq, layout: Arc::new(SeqLayout { segments, key_valid }), passes })
}

fn encode_graph<T: Real>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    l: &TransformerLayout,
    seq: Var,
    layout: &Arc<SeqLayout>,
) -> Result<Var> {
    let mut x = seq;
    for idx in &l.layers {
        x = transformer_layer_block(g, x, idx, cfg.heads, layout.clone())?;
    }
    layer_norm_params(g, x, l.final_gamma, l.final_beta)
}

fn score_graph<T: Real>(g: &mut Graph<'_, T>, l: &TransformerLayout, pooled: Var) -> Result<Var> {
    let h = linear_params(g, pooled, l.score_w1, l.score_b1)?;
    let h = g.gelu(h)?;
    linear_params(g, h, l.score_w2, l.score_b2)
}

/// Object groups in `(instance, object)` order: valid rows of each object span.
fn object_groups(passes: &[PassInfo], key_valid: &[bool], size: usize, objects: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); size * objects];
    for pass in passes {
        for (j, span) in &pass.object_spans {
            groups[pass.instance * objects + j] = span.clone().filter(|&r| key_valid[r]).collect();
        }
    }
    groups
}

fn match_forward<T: Real>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    l: &MatchLayout,
    input: &PackedInput<T>,
) -> Result<ForwardGraph> {
    feature_check(cfg, input)?;
    let d = input.dim;
    let xv = g.input(Tensor::matrix(input.view_rows(), d, input.views.clone())?);
    let objects = g.segment_max(xv, &input.kept_view_groups())?;
    let xl = g.input(Tensor::matrix(input.token_rows(), d, input.tokens.clone())?);
    let lang = g.segment_max(xl, &input.kept_token_groups())?;
    let per_object: Vec<usize> = (0..input.size).flat_map(|b| std::iter::repeat_n(b, input.objects)).collect();
    let lang = g.gather_rows(lang, per_object)?;
    let joint = g.concat_cols(objects, lang)?;
    let hidden = linear_params(g, joint, l.w1, l.b1)?;
    let hidden = g.gelu(hidden)?;
    let scores = linear_params(g, hidden, l.w2, l.b2)?;
    Ok(ForwardGraph { scores, pooled: hidden, outputs: None, language: None, passes: Vec::new() })
}

/// Records the full forward pass of every instance in `input`.
///
/// `with_language` additionally pools each instance's language outputs (for
/// the contrastive term). Per-object variants pool the language span of the
/// target object's pass.
pub fn build_forward<T: Real>(
    g: &mut Graph<'_, T>,
    params: &ModelParams<T>,
    input: &PackedInput<T>,
    with_language: bool,
) -> Result<ForwardGraph> {
    let cfg = &params.config;
    let l = match &params.layout {
        ModelLayout::Match(l) => return match_forward(g, cfg, l, input),
        ModelLayout::Transformer(l) => l,
    };
    let Assembled { seq, layout, passes } = assemble(g, cfg, l, input)?;
    let x = encode_graph(g, cfg, l, seq, &layout)?;
    let groups = object_groups(&passes, &layout.key_valid, input.size, input.objects);
    let pooled = g.segment_max(x, &groups)?;
    let scores = score_graph(g, l, pooled)?;
    let language = if with_language {
        let groups: Vec<Vec<usize>> = (0..input.size)
            .map(|b| {
                let target = input.targets[b];
                let pass = passes
                    .iter()
                    .find(|p| p.instance == b && p.object_spans.iter().any(|(j, _)| *j == target))
                    .expect("every object belongs to a pass");
                pass.language_span.clone().filter(|&r| layout.key_valid[r]).collect()
            })
            .collect();
        Some(g.segment_max(x, &groups)?)
    } else {
        None
    };
    Ok(ForwardGraph { scores, pooled, outputs: Some(x), language, passes })
}

/// Symmetric in-batch cross-entropy over cosine similarities / temperature.
pub fn contrastive_graph<T: Real>(g: &mut Graph<'_, T>, objects: Var, language: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("contrastive temperature {temperature} must be positive")));
    }
    let rows = g.value(objects).rows();
    let a = g.l2_normalize_rows(objects)?;
    let b = g.l2_normalize_rows(language)?;
    let sim = g.matmul_nt(a, b)?;
    let logits = g.scale(sim, T::of(1.0 / temperature))?;
    let targets: Vec<usize> = (0..rows).collect();
    let i2t = g.cross_entropy_rows(logits, targets.clone())?;
    let lt = g.transpose(logits)?;
    let t2i = g.cross_entropy_rows(lt, targets)?;
    g.weighted_sum(&[(i2t, T::of(0.5)), (t2i, T::of(0.5))])
}

/// Total training loss: mean per-object smoothed BCE, plus the weighted
/// contrastive term when enabled.
pub fn build_loss<T: Real>(g: &mut Graph<'_, T>, params: &ModelParams<T>, input: &PackedInput<T>) -> Result<(Var, ForwardGraph)> {
    let cfg = &params.config;
    let contrastive = cfg.contrastive_weight > 0.0;
    let fwd = build_forward(g, params, input, contrastive)?;
    let m = input.objects;
    let labels: Vec<T> = (0..input.size * m)
        .map(|i| if input.targets[i / m] == i % m { T::one() } else { T::zero() })
        .collect();
    let bce = g.sigmoid_bce(fwd.scores, labels, T::of(cfg.smoothing))?;
    if !contrastive {
        return Ok((bce, fwd));
    }
    let target_rows: Vec<usize> = (0..input.size).map(|b| b * m + input.targets[b]).collect();
    let objects = g.gather_rows(fwd.pooled, target_rows)?;
    let language = fwd.language.expect("language pooled when contrastive");
    let c = contrastive_graph(g, objects, language, cfg.contrastive_temperature)?;
    let total = g.weighted_sum(&[(bce, T::one()), (c, T::of(cfg.contrastive_weight))])?;
    Ok((total, fwd))
}

/// Per-instance forward result.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    pub scores: Vec<T>,
    /// `m × h` pooled object embeddings (the baseline's hidden layer).
    pub pooled: Tensor<T>,
    /// Encoder outputs of this instance's passes, concatenated; empty for the baseline.
    pub token_outputs: Tensor<T>,
}

fn rows_of<T: Real>(t: &Tensor<T>, rows: impl Iterator<Item = usize>) -> Result<Tensor<T>> {
    let c = t.cols();
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        data.extend_from_slice(t.row(r));
        n += 1;
    }
    Tensor::matrix(n, c, data)
}

/// Scores every instance of a packed input.
pub fn forward_packed<T: Real>(params: &ModelParams<T>, input: &PackedInput<T>, mode: ReduceMode) -> Result<Vec<ForwardOutput<T>>> {
    let mut g = Graph::new(params.tensors(), mode);
    let fwd = build_forward(&mut g, params, input, false)?;
    let scores = g.value(fwd.scores).data().to_vec();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let pooled = g.value(fwd.pooled);
    let m = input.objects;
    (0..input.size)
        .map(|b| {
            let token_outputs = match fwd.outputs {
                Some(x) => {
                    let x = g.value(x);
                    let rows = fwd.passes.iter().filter(|p| p.instance == b).flat_map(|p| p.rows.clone());
                    rows_of(x, rows)?
                }
                None => Tensor::matrix(0, pooled.cols(), Vec::new())?,
            };
            Ok(ForwardOutput {
                scores: scores[b * m..(b + 1) * m].to_vec(),
                pooled: rows_of(pooled, b * m..(b + 1) * m)?,
                token_outputs,
            })
        })
        .collect()
}

pub fn forward<T: Real>(batch: &Batch, params: &ModelParams<T>, mode: ReduceMode) -> Result<Vec<ForwardOutput<T>>> {
    forward_packed(params, &PackedInput::from_batch(batch)?, mode)
}

/// Encoder input for one pass, with spans relative to the pass.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceAssembly<T> {
    pub tokens: Tensor<T>,
    pub key_valid: Vec<bool>,
    /// `(object index, span)`.
    pub object_spans: Vec<(usize, Range<usize>)>,
    pub language_span: Range<usize>,
}

impl<T> SequenceAssembly<T> {
    pub fn len(&self) -> usize {
        self.key_valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.key_valid.is_empty()
    }
}

fn transformer_layout<T>(params: &ModelParams<T>) -> Result<&TransformerLayout> {
    match &params.layout {
        ModelLayout::Transformer(l) => Ok(l),
        ModelLayout::Match(_) => Err(Error::Config("match_baseline has no encoder sequence".into())),
    }
}

/// Builds the encoder sequence(s) of one instance: one for joint variants,
/// one per object for per-object variants.
pub fn embed_and_assemble<T: Real>(
    views: &[Tensor<T>],
    language: &Tensor<T>,
    masks: Option<&MaskSample>,
    params: &ModelParams<T>,
) -> Result<Vec<SequenceAssembly<T>>> {
    let l = transformer_layout(params)?;
    let input = PackedInput::from_instance(views, language, masks)?;
    let mut g = Graph::new(params.tensors(), ReduceMode::Sequential);
    let a = assemble(&mut g, &params.config, l, &input)?;
    let seq = g.value(a.seq);
    a.passes
        .iter()
        .map(|p| {
            let off = p.rows.start;
            Ok(SequenceAssembly {
                tokens: rows_of(seq, p.rows.clone())?,
                key_valid: a.layout.key_valid[p.rows.clone()].to_vec(),
                object_spans: p.object_spans.iter().map(|(j, s)| (*j, s.start - off..s.end - off)).collect(),
                language_span: p.language_span.start - off..p.language_span.end - off,
            })
        })
        .collect()
}

pub fn encode<T: Real>(assembly: &SequenceAssembly<T>, params: &ModelParams<T>, mode: ReduceMode) -> Result<Tensor<T>> {
    let l = transformer_layout(params)?;
    let mut g = Graph::new(params.tensors(), mode);
    let x = g.input(assembly.tokens.clone());
    let layout = Arc::new(SeqLayout::single(assembly.key_valid.clone()));
    let out = encode_graph(&mut g, &params.config, l, x, &layout)?;
    Ok(g.value(out).clone())
}

/// Max-pools each object span over valid rows and scores it.
/// Returns scores and pooled rows in span order.
pub fn pool_and_score<T: Real>(
    outputs: &Tensor<T>,
    assembly: &SequenceAssembly<T>,
    params: &ModelParams<T>,
) -> Result<(Vec<T>, Tensor<T>)> {
    let l = transformer_layout(params)?;
    let mut g = Graph::new(params.tensors(), ReduceMode::Sequential);
    let x = g.input(outputs.clone());
    let groups: Vec<Vec<usize>> = assembly
        .object_spans
        .iter()
        .map(|(_, s)| s.clone().filter(|&r| assembly.key_valid[r]).collect())
        .collect();
    let pooled = g.segment_max(x, &groups)?;
    let scores = score_graph(&mut g, l, pooled)?;
    Ok((g.value(scores).data().to_vec(), g.value(pooled).clone()))
}
