use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, VariantKind};
use crate::error::{Error, Result};
use crate::nn::{AttentionIndex, LayerIndex, ParamSet, Real, Tensor};

/// Standard deviation of the scaled-normal weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLayout {
    pub view_w: usize,
    pub view_b: usize,
    pub lang_w: usize,
    pub lang_b: usize,
    /// Row 0: image view, row 1: language token.
    pub token_type: usize,
    pub view_pos: Option<usize>,
    pub layers: Vec<LayerIndex>,
    pub final_gamma: usize,
    pub final_beta: usize,
    pub score_w1: usize,
    pub score_b1: usize,
    pub score_w2: usize,
    pub score_b2: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchLayout {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Where each named weight lives in the flat parameter list.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelLayout {
    Transformer(TransformerLayout),
    Match(MatchLayout),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Normal,
    Zeros,
    Ones,
}

/// Calls `make` for every parameter in canonical order and records the layout.
fn build_layout<T: Real>(
    cfg: &ModelConfig,
    mut make: impl FnMut(&str, Vec<usize>, InitKind) -> Result<Tensor<T>>,
) -> Result<(ParamSet<T>, ModelLayout)> {
    let mut set = ParamSet::new();
    let mut add = |set: &mut ParamSet<T>, name: &str, shape: Vec<usize>, kind: InitKind| -> Result<usize> {
        let t = make(name, shape, kind)?;
        Ok(set.push(name, t))
    };
    let (d, h, f) = (cfg.feature_dim, cfg.hidden, cfg.ffn_dim);
    use InitKind::*;
    if cfg.variant == VariantKind::MatchBaseline {
        let layout = MatchLayout {
            w1: add(&mut set, "match.w1", vec![2 * d, h], Normal)?,
            b1: add(&mut set, "match.b1", vec![h], Zeros)?,
            w2: add(&mut set, "match.w2", vec![h, 1], Normal)?,
            b2: add(&mut set, "match.b2", vec![1], Zeros)?,
        };
        return Ok((set, ModelLayout::Match(layout)));
    }
    let view_w = add(&mut set, "view_proj.w", vec![d, h], Normal)?;
    let view_b = add(&mut set, "view_proj.b", vec![h], Zeros)?;
    let lang_w = add(&mut set, "lang_proj.w", vec![d, h], Normal)?;
    let lang_b = add(&mut set, "lang_proj.b", vec![h], Zeros)?;
    let token_type = add(&mut set, "token_type", vec![2, h], Normal)?;
    let view_pos = if cfg.use_view_positions {
        Some(add(&mut set, "view_pos", vec![cfg.max_views, h], Normal)?)
    } else {
        None
    };
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let p = format!("layer{l}");
        let ln1_gamma = add(&mut set, &format!("{p}.ln1.gamma"), vec![h], Ones)?;
        let ln1_beta = add(&mut set, &format!("{p}.ln1.beta"), vec![h], Zeros)?;
        let attn = AttentionIndex {
            wq: add(&mut set, &format!("{p}.attn.wq"), vec![h, h], Normal)?,
            bq: add(&mut set, &format!("{p}.attn.bq"), vec![h], Zeros)?,
            wk: add(&mut set, &format!("{p}.attn.wk"), vec![h, h], Normal)?,
            bk: add(&mut set, &format!("{p}.attn.bk"), vec![h], Zeros)?,
            wv: add(&mut set, &format!("{p}.attn.wv"), vec![h, h], Normal)?,
            bv: add(&mut set, &format!("{p}.attn.bv"), vec![h], Zeros)?,
            wo: add(&mut set, &format!("{p}.attn.wo"), vec![h, h], Normal)?,
            bo: add(&mut set, &format!("{p}.attn.bo"), vec![h], Zeros)?,
        };
        layers.push(LayerIndex {
            ln1_gamma,
            ln1_beta,
            attn,
            ln2_gamma: add(&mut set, &format!("{p}.ln2.gamma"), vec![h], Ones)?,
            ln2_beta: add(&mut set, &format!("{p}.ln2.beta"), vec![h], Zeros)?,
            w1: add(&mut set, &format!("{p}.ffn.w1"), vec![h, f], Normal)?,
            b1: add(&mut set, &format!("{p}.ffn.b1"), vec![f], Zeros)?,
            w2: add(&mut set, &format!("{p}.ffn.w2"), vec![f, h], Normal)?,
            b2: add(&mut set, &format!("{p}.ffn.b2"), vec![h], Zeros)?,
        });
    }
    let layout = TransformerLayout {
        view_w,
        view_b,
        lang_w,
        lang_b,
        token_type,
        view_pos,
        layers,
        final_gamma: add(&mut set, "final_ln.gamma", vec![h], Ones)?,
        final_beta: add(&mut set, "final_ln.beta", vec![h], Zeros)?,
        score_w1: add(&mut set, "scorer.w1", vec![h, h], Normal)?,
        score_b1: add(&mut set, "scorer.b1", vec![h], Zeros)?,
        score_w2: add(&mut set, "scorer.w2", vec![h, 1], Normal)?,
        score_b2: add(&mut set, "scorer.b2", vec![1], Zeros)?,
    };
    Ok((set, ModelLayout::Transformer(layout)))
}

/// Learned weights together with the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub set: ParamSet<T>,
    pub layout: ModelLayout,
}

impl<T: Real> ModelParams<T> {
    pub fn tensors(&self) -> &[Tensor<T>] {
        self.set.tensors()
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        self.set.tensors_mut()
    }

    /// Number of trainable scalars actually allocated.
    pub fn count(&self) -> usize {
        self.set.count()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams { config: self.config.clone(), set: self.set.cast(), layout: self.layout.clone() }
    }

    /// Rebuilds parameters from named tensors (e.g. a checkpoint), checking
    /// names and shapes against the layout implied by `config`.
    pub fn from_named(config: ModelConfig, mut lookup: impl FnMut(&str) -> Option<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let (set, layout) = build_layout(&config, |name, shape, _| {
            let t = lookup(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!("tensor {name:?} has shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok(t)
        })?;
        Ok(Self { config, set, layout })
    }
}

/// Scaled-normal weights (std 0.02), zero biases, unit layer-norm gains.
/// The same `(config, seed)` always yields bitwise-identical parameters.
pub fn init_model<T: Real>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let (set, layout) = build_layout(config, |_, shape, kind| {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match kind {
            InitKind::Normal => (0..n).map(|_| T::of(normal.sample(&mut rng))).collect(),
            InitKind::Zeros => vec![T::zero(); n],
            InitKind::Ones => vec![T::one(); n],
        };
        Tensor::new(shape, data)
    })?;
    Ok(ModelParams { config: config.clone(), set, layout })
}
