//! The gradient verification suite behind `magic-ground gradcheck`.
//!
//! Each tape operation is checked on small random inputs, reduced to a
//! scalar by a random bilinear form so that no gradient vanishes by
//! symmetry. The full model loss is checked on a hidden-8, 1-layer model.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{build_loss, init_model, ModelConfig, ModelParams, PackedInput, VariantKind};
use crate::nn::{grad_check, GradCheckReport, Graph, SeqLayout, Tensor, Var};

pub const DEFAULT_H: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct NamedCheck {
    pub name: String,
    pub report: GradCheckReport,
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// `uᵀ Y w` for fixed random `u`, `w`.
fn bilinear(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let (r, c) = {
        let t = g.value(y);
        if t.shape().len() == 2 { (t.rows(), t.cols()) } else { (1, t.len()) }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = g.input(random(&mut rng, r, 1));
    let w = g.input(random(&mut rng, c, 1));
    let ut = g.transpose(u)?;
    let left = g.matmul(ut, y)?;
    g.matmul(left, w)
}

type OpFn = fn(&mut Graph<'_, f64>) -> Result<Var>;

fn op_cases() -> Vec<(&'static str, Vec<(usize, usize)>, OpFn)> {
    vec![
        ("matmul", vec![(3, 4), (4, 2)], |g| {
            let (a, b) = (g.param(0), g.param(1));
            let y = g.matmul(a, b)?;
            bilinear(g, y, 1)
        }),
        ("matmul_nt", vec![(3, 4), (2, 4)], |g| {
            let (a, b) = (g.param(0), g.param(1));
            let y = g.matmul_nt(a, b)?;
            bilinear(g, y, 2)
        }),
        ("transpose", vec![(3, 4)], |g| {
            let a = g.param(0);
            let y = g.transpose(a)?;
            bilinear(g, y, 3)
        }),
        ("add_row", vec![(3, 4), (1, 4)], |g| {
            let (a, b) = (g.param(0), g.param(1));
            let y = g.add_row(a, b)?;
            bilinear(g, y, 4)
        }),
        ("add", vec![(3, 4), (3, 4)], |g| {
            let (a, b) = (g.param(0), g.param(1));
            let y = g.add(a, b)?;
            bilinear(g, y, 5)
        }),
        ("scale", vec![(3, 4)], |g| {
            let a = g.param(0);
            let y = g.scale(a, -1.7)?;
            bilinear(g, y, 6)
        }),
        ("gelu", vec![(3, 4)], |g| {
            let a = g.param(0);
            let y = g.gelu(a)?;
            bilinear(g, y, 7)
        }),
        ("layer_norm", vec![(3, 5), (1, 5), (1, 5)], |g| {
            let (x, gamma, beta) = (g.param(0), g.param(1), g.param(2));
            let y = g.layer_norm(x, gamma, beta, 1e-5)?;
            bilinear(g, y, 8)
        }),
        ("attention", vec![(5, 4), (5, 4), (5, 4)], |g| {
            let (q, k, v) = (g.param(0), g.param(1), g.param(2));
            let layout = SeqLayout { segments: vec![0..3, 3..5], key_valid: vec![true, false, true, true, true] };
            let y = g.attention(q, k, v, 2, Arc::new(layout))?;
            bilinear(g, y, 9)
        }),
        ("gather_rows", vec![(3, 4)], |g| {
            let a = g.param(0);
            let y = g.gather_rows(a, vec![2, 0, 2, 1])?;
            bilinear(g, y, 10)
        }),
        ("concat_rows", vec![(2, 3), (3, 3)], |g| {
            let (a, b) = (g.param(0), g.param(1));
            let y = g.concat_rows(&[a, b, a])?;
            bilinear(g, y, 11)
        }),
        ("concat_cols", vec![(3, 2), (3, 4)], |g| {
            let (a, b) = (g.param(0), g.param(1));
            let y = g.concat_cols(a, b)?;
            bilinear(g, y, 12)
        }),
        ("segment_max", vec![(6, 4)], |g| {
            let a = g.param(0);
            let y = g.segment_max(a, &[vec![0, 1, 2], vec![3], vec![4, 5, 1]])?;
            bilinear(g, y, 13)
        }),
        ("masked_softmax", vec![(3, 4)], |g| {
            let a = g.param(0);
            let valid = vec![true, false, true, true, true, true, true, true, false, false, true, false];
            let y = g.masked_softmax(a, valid)?;
            bilinear(g, y, 14)
        }),
        ("l2_normalize_rows", vec![(3, 4)], |g| {
            let a = g.param(0);
            let y = g.l2_normalize_rows(a)?;
            bilinear(g, y, 15)
        }),
        ("cross_entropy_rows", vec![(3, 4)], |g| {
            let a = g.param(0);
            g.cross_entropy_rows(a, vec![1, 3, 0])
        }),
        ("sigmoid_bce", vec![(4, 1)], |g| {
            let a = g.param(0);
            g.sigmoid_bce(a, vec![1.0, 0.0, 0.0, 1.0], 0.1)
        }),
        ("sum", vec![(3, 4)], |g| {
            let a = g.param(0);
            let y = g.gelu(a)?;
            g.sum(y)
        }),
        ("mean", vec![(3, 4)], |g| {
            let a = g.param(0);
            let y = g.gelu(a)?;
            g.mean(y)
        }),
        ("weighted_sum", vec![(3, 4), (2, 2)], |g| {
            let (a, b) = (g.param(0), g.param(1));
            let (x, y) = (bilinear(g, a, 16)?, bilinear(g, b, 17)?);
            g.weighted_sum(&[(x, 0.3), (y, -2.0)])
        }),
    ]
}

/// Small model configuration used for the full-loss check.
pub fn tiny_model_config(variant: VariantKind) -> ModelConfig {
    ModelConfig { feature_dim: 6, hidden: 8, layers: 1, heads: 2, ffn_dim: 16, max_tokens: 8, max_views: 8, variant, ..ModelConfig::default() }
}

/// `instances` instances of two objects with two views each and three
/// language tokens. The default init is inflated so activations are far
/// from linear.
pub fn tiny_model_instance(cfg: &ModelConfig, seed: u64, instances: usize) -> Result<(ModelParams<f64>, PackedInput<f64>)> {
    let mut params = init_model::<f64>(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for t in params.tensors_mut() {
        for x in t.data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    let mut parts = Vec::new();
    for target in 0..instances {
        let views = vec![random(&mut rng, 2, cfg.feature_dim), random(&mut rng, 2, cfg.feature_dim)];
        let language = random(&mut rng, 3, cfg.feature_dim);
        let mut input = PackedInput::from_instance(&views, &language, None)?;
        input.targets = vec![(target + 1) % 2];
        parts.push(input);
    }
    Ok((params, PackedInput::stack(&parts)?))
}

/// The contrastive term is constant for a single instance, so it is checked on two.
pub fn model_check(cfg: &ModelConfig, h: f64, tol: f64) -> Result<GradCheckReport> {
    let instances = if cfg.contrastive_weight > 0.0 { 2 } else { 1 };
    let (params, input) = tiny_model_instance(cfg, 7, instances)?;
    grad_check(|g| build_loss(g, &params, &input).map(|(loss, _)| loss), params.tensors(), h, tol)
}

/// Every differentiable operation, then the full model loss for each variant.
pub fn gradient_suite(h: f64, tol: f64) -> Result<Vec<NamedCheck>> {
    let mut out = Vec::new();
    for (i, (name, shapes, f)) in op_cases().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let params: Vec<Tensor<f64>> = shapes.iter().map(|&(r, c)| random(&mut rng, r, c)).collect();
        out.push(NamedCheck { name: format!("op {name}"), report: grad_check(f, &params, h, tol)? });
    }
    for kind in VariantKind::ALL {
        let cfg = tiny_model_config(kind);
        out.push(NamedCheck { name: format!("model {kind}"), report: model_check(&cfg, h, tol)? });
    }
    let contrastive = ModelConfig { contrastive_weight: 0.5, contrastive_temperature: 0.5, ..tiny_model_config(VariantKind::Magic) };
    out.push(NamedCheck { name: "model magic + contrastive".into(), report: model_check(&contrastive, h, tol)? });
    Ok(out)
}
