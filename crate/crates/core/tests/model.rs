use magic_ground::data::{make_batch, AnnotationRecord, BatchSpec, FeatureStore, Kind, MaskSample, Split};
use magic_ground::model::{
    contrastive_loss, embed_and_assemble, encode, forward, forward_packed, grounding_loss, init_model, make_variant,
    pool_and_score, predict, ModelConfig, ModelParams, PackedInput, VariantKind,
};
use magic_ground::nn::{grad_check, layer_norm, Graph, ReduceMode, Tensor};
use magic_ground::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const D: usize = 6;

fn small(variant: VariantKind) -> ModelConfig {
    ModelConfig {
        feature_dim: D,
        hidden: 8,
        layers: 2,
        heads: 2,
        ffn_dim: 16,
        max_tokens: 8,
        max_views: 8,
        variant,
        ..ModelConfig::default()
    }
}

/// Larger init than the default so that outputs are not nearly constant.
fn params(cfg: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut p = init_model::<f64>(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
    for t in p.tensors_mut() {
        for x in t.data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    p
}

fn random(rows: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::matrix(rows, D, (0..rows * D).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn instance(views: &[usize], tokens: usize, seed: u64) -> (Vec<Tensor<f64>>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objects = views.iter().map(|&n| random(n, &mut rng)).collect();
    (objects, random(tokens, &mut rng))
}

fn scores(p: &ModelParams<f64>, views: &[Tensor<f64>], lang: &Tensor<f64>, mode: ReduceMode) -> Vec<f64> {
    let input = PackedInput::from_instance(views, lang, None).unwrap();
    forward_packed(p, &input, mode).unwrap().remove(0).scores
}

fn permute_rows(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| t.row(i).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

#[test]
fn init_is_deterministic_per_seed() {
    let cfg = small(VariantKind::Magic);
    let a = init_model::<f32>(&cfg, 3).unwrap();
    let b = init_model::<f32>(&cfg, 3).unwrap();
    let c = init_model::<f32>(&cfg, 4).unwrap();
    let bits = |p: &ModelParams<f32>| -> Vec<u32> { p.tensors().iter().flat_map(|t| t.data().iter().map(|x| x.to_bits())).collect() };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn init_follows_bias_and_gain_conventions() {
    let p = init_model::<f64>(&small(VariantKind::Magic), 0).unwrap();
    for (name, t) in p.set.names().iter().zip(p.tensors()) {
        if name.ends_with(".gamma") {
            assert!(t.data().iter().all(|&x| x == 1.0), "{name}");
        } else if name.ends_with(".beta") || name.contains(".b") {
            assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
        } else {
            let n = t.len() as f64;
            let std = (t.data().iter().map(|x| x * x).sum::<f64>() / n).sqrt();
            assert!(std < 0.05 && std > 0.0, "{name}: {std}");
        }
    }
}

#[test]
fn default_scale_parameter_count() {
    // Hand-summed inventory: projections 262656, type table 512, three layers
    // of 789760, final norm 512, scorer 66049.
    let cfg = ModelConfig::default();
    assert_eq!(cfg.parameter_count(), 2_699_009);
    assert_eq!(init_model::<f32>(&cfg, 0).unwrap().count(), 2_699_009);

    let with_pos = ModelConfig { use_view_positions: true, ..ModelConfig::default() };
    assert_eq!(with_pos.parameter_count(), 2_699_009 + 8 * 256);

    let baseline = ModelConfig { variant: VariantKind::MatchBaseline, ..ModelConfig::default() };
    assert_eq!(baseline.parameter_count(), 1024 * 256 + 256 + 256 + 1);
    assert_eq!(init_model::<f32>(&baseline, 0).unwrap().count(), baseline.parameter_count());
}

proptest! {
    #[test]
    fn allocated_count_matches_formula(h in 1usize..5, heads in 1usize..3, layers in 0usize..3, f in 1usize..7, d in 1usize..5, pos: bool, v in 0usize..5) {
        let cfg = ModelConfig {
            feature_dim: d, hidden: h * heads, heads, layers, ffn_dim: f, max_views: 3,
            use_view_positions: pos, variant: VariantKind::ALL[v], ..ModelConfig::default()
        };
        prop_assert_eq!(init_model::<f32>(&cfg, 1).unwrap().count(), cfg.parameter_count());
    }
}

#[test]
fn indivisible_heads_is_a_config_error() {
    let cfg = ModelConfig { heads: 7, ..ModelConfig::default() };
    assert!(matches!(init_model::<f32>(&cfg, 0), Err(Error::Config(_))));
}

#[test]
fn variant_names_round_trip() {
    for k in VariantKind::ALL {
        assert_eq!(k.to_string().parse::<VariantKind>().unwrap(), k);
        let json = serde_json::to_string(&k).unwrap();
        assert_eq!(json, format!("\"{k}\""));
    }
    assert!("magic_plus".parse::<VariantKind>().is_err());
}

#[test]
fn variant_sequence_lengths() {
    let expect = [
        (VariantKind::Magic, vec![20]),
        (VariantKind::MagicNoObjCtx, vec![12, 12]),
        (VariantKind::MagicNoMvCtx, vec![6]),
        (VariantKind::MagicNoCtx, vec![5, 5]),
        (VariantKind::MatchBaseline, vec![]),
    ];
    for (kind, lens) in expect {
        assert_eq!(make_variant(kind).sequence_lengths(&[8, 8], 4), lens, "{kind}");
        let cfg = small(kind);
        if kind != VariantKind::MatchBaseline {
            let (v, l) = instance(&[8, 8], 4, 1);
            let got: Vec<usize> = embed_and_assemble(&v, &l, None, &params(&cfg, 0)).unwrap().iter().map(|a| a.len()).collect();
            assert_eq!(got, lens, "{kind}");
        }
    }
}

#[test]
fn joint_assembly_layout_and_token_types() {
    let cfg = small(VariantKind::Magic);
    let p = params(&cfg, 0);
    let (v, l) = instance(&[8, 8], 4, 2);
    let a = embed_and_assemble(&v, &l, None, &p).unwrap().remove(0);
    assert_eq!(a.len(), 20);
    assert_eq!(a.object_spans, vec![(0, 0..8), (1, 8..16)]);
    assert_eq!(a.language_span, 16..20);
    assert!(a.key_valid.iter().all(|&k| k));

    // Reconstruct each row as projection + type embedding.
    let get = |name: &str| &p.tensors()[p.set.names().iter().position(|n| n == name).unwrap()];
    let types = get("token_type");
    let views = Tensor::from_rows(&v.iter().flat_map(|o| (0..o.rows()).map(|i| o.row(i).to_vec())).collect::<Vec<_>>()).unwrap();
    let pv = magic_ground::nn::linear(&views, get("view_proj.w"), get("view_proj.b")).unwrap();
    let pl = magic_ground::nn::linear(&l, get("lang_proj.w"), get("lang_proj.b")).unwrap();
    for r in 0..20 {
        let (base, ty) = if r < 16 { (pv.row(r), 0) } else { (pl.row(r - 16), 1) };
        for c in 0..8 {
            assert!((a.tokens.at(r, c) - (base[c] + types.at(ty, c))).abs() < 1e-12);
        }
    }
}

#[test]
fn view_positions_break_permutation_symmetry() {
    let (v, l) = instance(&[4, 3], 3, 5);
    let perm = [2, 0, 3, 1];
    let mut permuted = v.clone();
    permuted[0] = permute_rows(&v[0], &perm);
    for positions in [false, true] {
        let cfg = ModelConfig { use_view_positions: positions, ..small(VariantKind::Magic) };
        let p = params(&cfg, 1);
        let a = embed_and_assemble(&v, &l, None, &p).unwrap().remove(0);
        let b = embed_and_assemble(&permuted, &l, None, &p).unwrap().remove(0);
        let row_perm: Vec<usize> = perm.iter().copied().chain(4..a.len()).collect();
        let is_row_perm = permute_rows(&a.tokens, &row_perm) == b.tokens;
        assert_eq!(is_row_perm, !positions);
    }
}

#[test]
fn zero_layers_encode_is_final_norm() {
    let cfg = ModelConfig { layers: 0, ..small(VariantKind::Magic) };
    let p = params(&cfg, 0);
    let (v, l) = instance(&[3, 2], 3, 0);
    let a = embed_and_assemble(&v, &l, None, &p).unwrap().remove(0);
    let out = encode(&a, &p, ReduceMode::Sequential).unwrap();
    let n = p.tensors().len();
    // With zero layers the final norm is followed only by the scorer (4 tensors).
    let expect = layer_norm(&a.tokens, &p.tensors()[n - 6], &p.tensors()[n - 5], 1e-5).unwrap();
    assert_eq!(out, expect);
}

#[test]
fn masked_token_matches_deleted_token() {
    let cfg = small(VariantKind::Magic);
    let p = params(&cfg, 2);
    let (v, l) = instance(&[3, 3], 4, 9);
    let mut mask = MaskSample::keep_all(&[3, 3], 4);
    mask.lang_keep[2] = false;
    mask.view_keep[1][0] = false;
    let masked = embed_and_assemble(&v, &l, Some(&mask), &p).unwrap().remove(0);
    let out_masked = encode(&masked, &p, ReduceMode::Sequential).unwrap();

    let mut v2 = v.clone();
    v2[1] = permute_rows(&v[1], &[1, 2]);
    let l2 = permute_rows(&l, &[0, 1, 3]);
    let deleted = embed_and_assemble(&v2, &l2, None, &p).unwrap().remove(0);
    let out_deleted = encode(&deleted, &p, ReduceMode::Sequential).unwrap();

    let kept: Vec<usize> = (0..masked.len()).filter(|&r| masked.key_valid[r]).collect();
    assert_eq!(kept.len(), out_deleted.rows());
    for (i, &r) in kept.iter().enumerate() {
        for c in 0..8 {
            assert!((out_masked.at(r, c) - out_deleted.at(i, c)).abs() < 1e-6);
        }
    }
    let s_masked = pool_and_score(&out_masked, &masked, &p).unwrap().0;
    let s_deleted = pool_and_score(&out_deleted, &deleted, &p).unwrap().0;
    for (a, b) in s_masked.iter().zip(&s_deleted) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn encoder_is_permutation_equivariant() {
    let cfg = small(VariantKind::Magic);
    let p = params(&cfg, 3);
    let (v, l) = instance(&[3, 2], 3, 4);
    let a = embed_and_assemble(&v, &l, None, &p).unwrap().remove(0);
    let perm = [7, 2, 0, 5, 1, 6, 3, 4];
    let mut b = a.clone();
    b.tokens = permute_rows(&a.tokens, &perm);
    let out_a = encode(&a, &p, ReduceMode::Canonical).unwrap();
    let out_b = encode(&b, &p, ReduceMode::Canonical).unwrap();
    assert_eq!(permute_rows(&out_a, &perm), out_b);
}

#[test]
fn singleton_pool_takes_the_row() {
    let cfg = small(VariantKind::Magic);
    let p = params(&cfg, 0);
    let (v, l) = instance(&[1], 2, 1);
    let a = embed_and_assemble(&v, &l, None, &p).unwrap().remove(0);
    let out = encode(&a, &p, ReduceMode::Sequential).unwrap();
    let (_, pooled) = pool_and_score(&out, &a, &p).unwrap();
    assert_eq!(pooled.row(0), out.row(0));
}

#[test]
fn identical_objects_score_identically() {
    for kind in VariantKind::ALL {
        let p = params(&small(kind), 4);
        let (v, l) = instance(&[3], 3, 2);
        let s = scores(&p, &[v[0].clone(), v[0].clone()], &l, ReduceMode::Canonical);
        assert_eq!(s[0].to_bits(), s[1].to_bits(), "{kind}");
    }
}

#[test]
fn swapping_objects_swaps_scores_exactly() {
    for kind in VariantKind::ALL {
        let p = params(&small(kind), 5);
        let (v, l) = instance(&[3, 4], 3, 6);
        let s = scores(&p, &v, &l, ReduceMode::Canonical);
        let t = scores(&p, &[v[1].clone(), v[0].clone()], &l, ReduceMode::Canonical);
        assert_eq!(s[0].to_bits(), t[1].to_bits(), "{kind}");
        assert_eq!(s[1].to_bits(), t[0].to_bits(), "{kind}");
    }
}

#[test]
fn view_order_within_an_object_is_irrelevant() {
    for kind in VariantKind::ALL {
        let p = params(&small(kind), 6);
        let (v, l) = instance(&[5, 3], 3, 7);
        let mut w = v.clone();
        w[0] = permute_rows(&v[0], &[3, 1, 4, 0, 2]);
        let a = scores(&p, &v, &l, ReduceMode::Canonical);
        let b = scores(&p, &w, &l, ReduceMode::Canonical);
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), "{kind}");
    }
}

#[test]
fn per_object_variants_ignore_the_other_object() {
    for kind in [VariantKind::MagicNoObjCtx, VariantKind::MagicNoCtx, VariantKind::MatchBaseline] {
        let p = params(&small(kind), 7);
        let (v, l) = instance(&[3, 3], 3, 8);
        let (other, _) = instance(&[5], 1, 99);
        let a = scores(&p, &v, &l, ReduceMode::Sequential);
        let b = scores(&p, &[v[0].clone(), other[0].clone()], &l, ReduceMode::Sequential);
        assert_eq!(a[0], b[0], "{kind}");
        assert_ne!(a[1], b[1], "{kind}");
    }
    // The joint model does look at the other object.
    let p = params(&small(VariantKind::Magic), 7);
    let (v, l) = instance(&[3, 3], 3, 8);
    let (other, _) = instance(&[5], 1, 99);
    assert_ne!(scores(&p, &v, &l, ReduceMode::Sequential)[0], scores(&p, &[v[0].clone(), other[0].clone()], &l, ReduceMode::Sequential)[0]);
}

#[test]
fn fully_masked_language_removes_language_dependence() {
    let p = params(&small(VariantKind::Magic), 8);
    let (v, l) = instance(&[3, 3], 3, 10);
    let (_, other) = instance(&[1], 3, 11);
    let mut mask = MaskSample::keep_all(&[3, 3], 3);
    mask.lang_keep = vec![false; 3];
    let run = |lang: &Tensor<f64>| {
        let input = PackedInput::from_instance(&v, lang, Some(&mask)).unwrap();
        forward_packed(&p, &input, ReduceMode::Sequential).unwrap().remove(0).scores
    };
    assert_eq!(run(&l), run(&other));
    assert_ne!(scores(&p, &v, &l, ReduceMode::Sequential), scores(&p, &v, &other, ReduceMode::Sequential));
}

#[test]
fn fully_masked_object_is_rejected() {
    let p = params(&small(VariantKind::Magic), 0);
    let (v, l) = instance(&[2, 2], 2, 0);
    let mut mask = MaskSample::keep_all(&[2, 2], 2);
    mask.view_keep[1] = vec![false, false];
    assert!(matches!(PackedInput::from_instance(&v, &l, Some(&mask)), Err(Error::AllMasked)));
    assert!(embed_and_assemble(&v, &l, Some(&mask), &p).is_err());
}

#[test]
fn wrong_feature_dim_is_rejected() {
    let p = params(&small(VariantKind::Magic), 0);
    let v = vec![Tensor::<f64>::zeros(vec![2, 4])];
    let l = Tensor::<f64>::zeros(vec![2, 4]);
    assert!(matches!(embed_and_assemble(&v, &l, None, &p), Err(Error::Shape { .. })));
}

fn store(records: Vec<(&str, &Tensor<f64>)>) -> FeatureStore {
    FeatureStore::new(D, records.into_iter().map(|(id, t)| (id.to_string(), t.data().iter().map(|&x| x as f32).collect())).collect()).unwrap()
}

fn record(id: &str, objects: &[&str], target: usize) -> AnnotationRecord {
    AnnotationRecord {
        id: id.into(),
        objects: objects.iter().map(|s| s.to_string()).collect(),
        target,
        text: String::new(),
        kind: Kind::Visual,
        split: Split::Train,
    }
}

#[test]
fn batching_is_transparent_and_padding_is_inert() {
    // Round features through f32 first, since stores hold f32.
    let round = |t: &Tensor<f64>| Tensor::matrix(t.rows(), t.cols(), t.data().iter().map(|&x| x as f32 as f64).collect()).unwrap();
    let (v1, l1) = instance(&[3, 2, 4], 3, 20);
    let (v2, l2) = instance(&[1, 4, 2], 5, 21);
    let (v1, l1): (Vec<_>, _) = (v1.iter().map(round).collect(), round(&l1));
    let (v2, l2): (Vec<_>, _) = (v2.iter().map(round).collect(), round(&l2));
    let objects = store(vec![("a", &v1[0]), ("b", &v1[1]), ("c", &v1[2]), ("d", &v2[0]), ("e", &v2[1]), ("f", &v2[2])]);
    let language = store(vec![("x", &l1), ("y", &l2)]);
    let recs = vec![record("x", &["a", "b", "c"], 1), record("y", &["d", "e", "f"], 2)];

    for kind in VariantKind::ALL {
        let cfg = small(kind);
        let p = params(&cfg, 9);
        let tight = BatchSpec { max_views: 4, max_tokens: 5, views: None };
        let loose = BatchSpec { max_views: 8, max_tokens: 8, views: None };
        let batched = forward(&make_batch(&recs, &objects, &language, &tight, None).unwrap(), &p, ReduceMode::Canonical).unwrap();
        let padded = forward(&make_batch(&recs, &objects, &language, &loose, None).unwrap(), &p, ReduceMode::Canonical).unwrap();
        assert_eq!(batched.len(), 2);
        assert_eq!(batched[0].scores.len(), 3);
        let single = scores(&p, &v1, &l1, ReduceMode::Canonical);
        assert_eq!(batched[0].scores, single, "{kind}");
        assert_eq!(batched[1].scores, scores(&p, &v2, &l2, ReduceMode::Canonical), "{kind}");
        for (a, b) in batched.iter().zip(&padded) {
            for (x, y) in a.scores.iter().zip(&b.scores) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn forward_equals_the_staged_composition() {
    let cfg = small(VariantKind::MagicNoObjCtx);
    let p = params(&cfg, 10);
    let (v, l) = instance(&[3, 2], 4, 12);
    let mut staged = Vec::new();
    for a in embed_and_assemble(&v, &l, None, &p).unwrap() {
        let out = encode(&a, &p, ReduceMode::Canonical).unwrap();
        staged.extend(pool_and_score(&out, &a, &p).unwrap().0);
    }
    assert_eq!(staged, scores(&p, &v, &l, ReduceMode::Canonical));
}

#[test]
fn grounding_loss_examples() {
    assert!((grounding_loss(&[0.0, 0.0], 0, 0.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(grounding_loss(&[40.0, -40.0], 0, 0.0).unwrap() < 1e-6);
    // Direct evaluation: targets smoothed to 0.95 and 0.05.
    let p0 = 1.0 / (1.0 + (-1.0f64).exp());
    let p1 = 1.0 / (1.0 + 0.5f64.exp());
    let expect = -0.5 * (0.95 * p0.ln() + 0.05 * (1.0 - p0).ln() + 0.05 * p1.ln() + 0.95 * (1.0 - p1).ln());
    assert!((grounding_loss(&[1.0, -0.5], 0, 0.1).unwrap() - expect).abs() < 1e-12);
    assert!(grounding_loss(&[1.0], 1, 0.1).is_err());
}

proptest! {
    #[test]
    fn grounding_loss_is_non_negative(s in proptest::collection::vec(-30.0f64..30.0, 1..6), eps in 0.0f64..0.5, t in 0usize..6) {
        let t = t % s.len();
        prop_assert!(grounding_loss(&s, t, eps).unwrap() >= 0.0);
    }

    #[test]
    fn prediction_ignores_constant_shifts(s in proptest::collection::vec(-10.0f64..10.0, 1..6), c in -5.0f64..5.0) {
        let shifted: Vec<f64> = s.iter().map(|x| x + c).collect();
        let best = predict(&s).unwrap();
        prop_assert!(s.iter().all(|&x| x <= s[best]));
        // Shifting can merge near-ties through rounding; only a true winner must survive.
        if s.iter().enumerate().all(|(j, &x)| j == best || x < s[best] - 1e-9) {
            prop_assert_eq!(predict(&shifted).unwrap(), best);
        }
    }
}

#[test]
fn contrastive_loss_examples() {
    let one = Tensor::<f64>::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
    assert!(contrastive_loss(&one, &one, 0.07).unwrap().abs() < 1e-12);
    let eye = Tensor::<f64>::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    // Logits [[1,0],[0,1]]: each row loses ln(1 + e^-1), in both directions.
    let expect = (1.0 + (-1.0f64).exp()).ln();
    assert!((contrastive_loss(&eye, &eye, 1.0).unwrap() - expect).abs() < 1e-12);
    assert!(matches!(contrastive_loss(&eye, &eye, 0.0), Err(Error::Config(_))));
    assert!(matches!(contrastive_loss(&eye, &eye, -1.0), Err(Error::Config(_))));
    let zero = Tensor::matrix(2, 2, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
    assert!(matches!(contrastive_loss(&zero, &eye, 1.0), Err(Error::ZeroNorm)));
}

#[test]
fn predict_examples() {
    assert_eq!(predict(&[0.2, 0.9]).unwrap(), 1);
    assert_eq!(predict(&[0.5, 0.5]).unwrap(), 0);
    assert!(predict::<f64>(&[]).is_err());
}

fn loss_check(cfg: ModelConfig) {
    let p = params(&cfg, 11);
    let (v, l) = instance(&[2, 2], 3, 13);
    let mut input = PackedInput::from_instance(&v, &l, None).unwrap();
    input.targets = vec![1];
    // The graph reads weights from its own (perturbed) parameter slice.
    let report = grad_check(
        |g: &mut Graph<f64>| magic_ground::model::build_loss(g, &p, &input).map(|(loss, _)| loss),
        p.tensors(),
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{:?}: max rel error {}", cfg.variant, report.max_rel_error);
}

#[test]
fn full_model_loss_passes_gradient_check() {
    loss_check(ModelConfig { layers: 1, ..small(VariantKind::Magic) });
}

#[test]
fn every_variant_and_the_contrastive_term_pass_gradient_check() {
    for kind in VariantKind::ALL {
        loss_check(ModelConfig { layers: 1, use_view_positions: kind == VariantKind::Magic, ..small(kind) });
    }
    loss_check(ModelConfig { layers: 1, contrastive_weight: 0.5, contrastive_temperature: 0.5, ..small(VariantKind::Magic) });
}
