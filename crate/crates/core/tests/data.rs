use std::collections::HashSet;
use std::io::Cursor;

use magic_ground::data::synth::{single_object_posterior, Predicate, Relation};
use magic_ground::data::{
    bayes_single_object_ceiling, extend_distractors, generate_synthetic, make_batch, parse_annotations,
    read_feature_store, sample_masks, subsample_indices, subsample_views, write_annotations, write_dataset,
    write_feature_store, AnnotationRecord, BatchSpec, Dataset, FeatureStore, Kind, MaskSample, Split, SynthConfig,
};
use magic_ground::error::{AnnotationError, StoreError};
use magic_ground::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---- annotations ----

const GOOD: &str = r#"{"id":"a1","objects":["o1","o2"],"target":0,"text":"the taller one","kind":"blind","split":"train"}"#;

fn parse_one(line: &str) -> Result<Vec<AnnotationRecord>, Error> {
    parse_annotations(Cursor::new(line.to_string()))
}

fn annotation_error(line: &str) -> AnnotationError {
    match parse_one(line) {
        Err(Error::Annotation { line: 1, kind }) => kind,
        other => panic!("expected an annotation error, got {other:?}"),
    }
}

#[test]
fn parses_happy_path() {
    let recs = parse_one(GOOD).unwrap();
    assert_eq!(
        recs,
        vec![AnnotationRecord {
            id: "a1".into(),
            objects: vec!["o1".into(), "o2".into()],
            target: 0,
            text: "the taller one".into(),
            kind: Kind::Blind,
            split: Split::Train,
        }]
    );
    assert!(parse_one("").unwrap().is_empty());
    assert_eq!(parse_one(&format!("\n{GOOD}\n\n")).unwrap().len(), 1);
}

#[test]
fn each_malformed_class_has_its_own_error() {
    let cases: Vec<(String, AnnotationError)> = vec![
        ("{not json".into(), AnnotationError::Syntax(String::new())),
        (GOOD.replace(r#""id":"a1","#, ""), AnnotationError::MissingField("id")),
        (GOOD.replace(r#""target":0"#, r#""target":"0""#), AnnotationError::WrongType("target")),
        (GOOD.replace(r#""target":0"#, r#""target":2"#), AnnotationError::TargetOutOfRange { target: 2, objects: 2 }),
        (GOOD.replace(r#"["o1","o2"]"#, r#"["o1"]"#), AnnotationError::TooFewObjects),
        (GOOD.replace(r#"["o1","o2"]"#, r#"["o1","o1"]"#), AnnotationError::DuplicateObject("o1".into())),
        (GOOD.replace("blind", "deaf"), AnnotationError::UnknownKind("deaf".into())),
        (GOOD.replace("train", "dev"), AnnotationError::UnknownSplit("dev".into())),
    ];
    let mut seen = HashSet::new();
    for (line, want) in &cases {
        let got = annotation_error(line);
        match (want, &got) {
            (AnnotationError::Syntax(_), AnnotationError::Syntax(_)) => {}
            _ => assert_eq!(&got, want, "line {line}"),
        }
        seen.insert(std::mem::discriminant(&got));
    }
    assert_eq!(seen.len(), cases.len());
}

#[test]
fn annotation_errors_carry_line_numbers() {
    let text = format!("{GOOD}\n\n{}\n", GOOD.replace("train", "dev"));
    match parse_annotations(Cursor::new(text)) {
        Err(Error::Annotation { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn annotations_round_trip() {
    let data = generate_synthetic(&SynthConfig { count_train: 20, count_val: 5, ..SynthConfig::default() }).unwrap();
    let mut buf = Vec::new();
    write_annotations(&mut buf, &data.annotations).unwrap();
    assert_eq!(parse_annotations(Cursor::new(buf)).unwrap(), data.annotations);
}

// ---- feature store ----

fn random_store(rng: &mut ChaCha8Rng) -> FeatureStore {
    let dim = rng.random_range(1..9);
    let n = rng.random_range(0..12);
    let records = (0..n)
        .map(|i| {
            let rows = rng.random_range(1..6);
            // Arbitrary bit patterns, including NaNs and infinities.
            let values = (0..rows * dim).map(|_| f32::from_bits(rng.random())).collect();
            (format!("rec-{i}-{}", rng.random::<u16>()), values)
        })
        .collect();
    FeatureStore::new(dim, records).unwrap()
}

fn bits(s: &FeatureStore) -> Vec<(String, Vec<u32>)> {
    s.records().iter().map(|(id, v)| (id.clone(), v.iter().map(|x| x.to_bits()).collect())).collect()
}

#[test]
fn store_round_trip_two_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.mvgf");
    let a: Vec<f32> = (0..32).map(|i| i as f32 * 0.5).collect();
    let b: Vec<f32> = (0..12).map(|i| -(i as f32)).collect();
    write_feature_store(&path, 4, vec![("a".into(), a.clone()), ("b".into(), b.clone())]).unwrap();
    let s = read_feature_store(&path).unwrap();
    assert_eq!(s.dim(), 4);
    assert_eq!((s.rows("a"), s.rows("b")), (Some(8), Some(3)));
    assert_eq!(s.get("a").unwrap(), a.as_slice());
    assert_eq!(s.get("b").unwrap(), b.as_slice());
    assert_eq!(s.ids().collect::<Vec<_>>(), vec!["a", "b"]);
}

#[test]
fn store_round_trip_randomized_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let s = random_store(&mut rng);
        let bytes = s.to_bytes();
        let back = FeatureStore::from_bytes(&bytes).unwrap();
        assert_eq!(bits(&back), bits(&s));
        assert_eq!(back.to_bytes(), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn store_round_trip_property(seed in any::<u64>()) {
        let s = random_store(&mut ChaCha8Rng::seed_from_u64(seed));
        let back = FeatureStore::from_bytes(&s.to_bytes()).unwrap();
        prop_assert_eq!(bits(&back), bits(&s));
    }

    #[test]
    fn store_truncation_is_always_detected(seed in any::<u64>(), cut in 0.0f64..1.0) {
        let s = random_store(&mut ChaCha8Rng::seed_from_u64(seed));
        let bytes = s.to_bytes();
        let keep = (bytes.len() as f64 * cut) as usize;
        prop_assume!(keep < bytes.len());
        prop_assert!(matches!(FeatureStore::from_bytes(&bytes[..keep]), Err(StoreError::Truncated(_))));
    }
}

#[test]
fn store_rejects_malformed_files() {
    let s = FeatureStore::new(2, vec![("x".into(), vec![1.0, 2.0, 3.0, 4.0])]).unwrap();
    let good = s.to_bytes();

    let mut bad = good.clone();
    bad[..4].copy_from_slice(b"XXXX");
    assert!(matches!(FeatureStore::from_bytes(&bad), Err(StoreError::BadMagic(m)) if &m == b"XXXX"));

    let mut bad = good.clone();
    bad[4..8].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(FeatureStore::from_bytes(&bad), Err(StoreError::Version(7))));

    // Row count claims more rows than remain.
    let mut bad = good.clone();
    let rows_at = 4 + 4 + 4 + 8 + 2 + 1;
    bad[rows_at..rows_at + 4].copy_from_slice(&3u32.to_le_bytes());
    assert!(matches!(FeatureStore::from_bytes(&bad), Err(StoreError::Truncated(_))));

    let mut bad = good.clone();
    bad.push(0);
    assert!(matches!(FeatureStore::from_bytes(&bad), Err(StoreError::TrailingBytes)));

    let mut bad = good;
    bad[4 + 4 + 4 + 8 + 2] = 0xff;
    assert!(matches!(FeatureStore::from_bytes(&bad), Err(StoreError::Utf8)));
}

#[test]
fn store_rejects_bad_records() {
    assert!(matches!(FeatureStore::new(2, vec![("a".into(), vec![1.0; 3])]), Err(StoreError::RaggedRecord { .. })));
    assert!(matches!(FeatureStore::new(2, vec![("a".into(), vec![])]), Err(StoreError::EmptyRecord(_))));
    let dup = vec![("a".into(), vec![1.0; 2]), ("a".into(), vec![2.0; 2])];
    assert!(matches!(FeatureStore::new(2, dup), Err(StoreError::DuplicateId(_))));
    assert!(matches!(FeatureStore::new(1, vec![("x".repeat(70_000), vec![1.0])]), Err(StoreError::IdTooLong(_))));
}

// ---- masks ----

#[test]
fn masks_keep_everything_at_zero_rates() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let m = sample_masks(&mut rng, &[8, 5], 4, 0.0, 0.0).unwrap();
    assert_eq!(m, MaskSample::keep_all(&[8, 5], 4));
}

#[test]
fn masks_restore_one_view_at_full_drop() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..200 {
        let m = sample_masks(&mut rng, &[8, 8], 3, 1.0, 1.0).unwrap();
        for keep in &m.view_keep {
            assert_eq!(keep.iter().filter(|&&k| k).count(), 1);
        }
        assert_eq!(m.lang_keep.iter().filter(|&&k| k).count(), 1);
    }
}

#[test]
fn view_drop_rate_is_calibrated() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (mut dropped, mut total) = (0usize, 0usize);
    for _ in 0..10_000 {
        let m = sample_masks(&mut rng, &[8, 8], 6, 0.1, 0.2).unwrap();
        for keep in &m.view_keep {
            dropped += keep.iter().filter(|&&k| !k).count();
            total += keep.len();
        }
    }
    let rate = dropped as f64 / total as f64;
    assert!((0.09..=0.11).contains(&rate), "rate {rate}");
}

#[test]
fn masks_never_leave_a_group_empty() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..10_000 {
        let views: Vec<usize> = (0..rng.random_range(2..5)).map(|_| rng.random_range(1..9)).collect();
        let tokens = rng.random_range(1..10);
        let (pv, pl) = (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
        let m = sample_masks(&mut rng, &views, tokens, pv, pl).unwrap();
        assert!(m.view_keep.iter().all(|k| k.iter().any(|&x| x)));
        assert!(m.lang_keep.iter().any(|&x| x));
        assert_eq!(m.view_keep.iter().map(Vec::len).collect::<Vec<_>>(), views);
    }
}

#[test]
fn masks_reject_bad_rates() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    assert!(sample_masks(&mut rng, &[2], 2, 1.5, 0.0).is_err());
    assert!(sample_masks(&mut rng, &[2], 2, 0.0, -0.1).is_err());
}

// ---- views ----

#[test]
fn subsample_examples() {
    assert_eq!(subsample_indices(8, 8).unwrap(), (0..8).collect::<Vec<_>>());
    assert_eq!(subsample_indices(8, 1).unwrap(), vec![0]);
    assert_eq!(subsample_indices(8, 4).unwrap(), vec![0, 2, 4, 6]);
    assert!(subsample_indices(8, 0).is_err());
    assert!(subsample_indices(8, 9).is_err());
    let rows: Vec<f32> = (0..16).map(|i| i as f32).collect();
    assert_eq!(subsample_views(&rows, 2, 8).unwrap(), rows);
    assert_eq!(subsample_views(&rows, 2, 2).unwrap(), vec![0.0, 1.0, 8.0, 9.0]);
}

proptest! {
    #[test]
    fn subsample_is_strictly_ascending_and_exact(n in 1usize..64, frac in 0.0f64..1.0) {
        let j = 1 + ((n - 1) as f64 * frac) as usize;
        let idx = subsample_indices(n, j).unwrap();
        prop_assert_eq!(idx.len(), j);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().all(|&i| i < n));
        prop_assert_eq!(idx, subsample_indices(n, j).unwrap());
    }
}

// ---- distractors ----

fn record(objects: &[&str], target: usize) -> AnnotationRecord {
    AnnotationRecord {
        id: "r".into(),
        objects: objects.iter().map(|s| s.to_string()).collect(),
        target,
        text: "t".into(),
        kind: Kind::Visual,
        split: Split::Train,
    }
}

#[test]
fn distractor_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let r = record(&["a", "b"], 1);
    let pool: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
    assert_eq!(extend_distractors(&r, &pool, 2, &mut rng).unwrap(), r);
    let ext = extend_distractors(&r, &pool, 4, &mut rng).unwrap();
    assert_eq!(ext.objects.len(), 4);
    assert_eq!(ext.objects[ext.target], "b");
    assert!(ext.objects.contains(&"a".to_string()));
    let tiny = vec!["c".to_string()];
    assert!(matches!(
        extend_distractors(&r, &tiny, 4, &mut rng),
        Err(Error::InsufficientPool { needed: 2, available: 1 })
    ));
}

proptest! {
    #[test]
    fn distractors_never_duplicate(seed in any::<u64>(), m in 2usize..8, pool_size in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = record(&["o0", "o1"], 0);
        // The pool overlaps the record's own objects.
        let pool: Vec<String> = (0..pool_size).map(|i| format!("o{i}")).collect();
        match extend_distractors(&r, &pool, m, &mut rng) {
            Ok(ext) => {
                let set: HashSet<&String> = ext.objects.iter().collect();
                prop_assert_eq!(set.len(), ext.objects.len());
                prop_assert_eq!(ext.objects.len(), m);
                prop_assert_eq!(&ext.objects[ext.target], "o0");
            }
            Err(Error::InsufficientPool { .. }) => prop_assert!(pool_size.saturating_sub(2) < m - 2),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}

// ---- synthetic data ----

#[test]
fn synthetic_is_deterministic() {
    let cfg = SynthConfig { count_train: 50, count_val: 10, count_test: 5, ..SynthConfig::default() };
    let (a, b) = (generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
    assert_eq!(a.objects.to_bytes(), b.objects.to_bytes());
    assert_eq!(a.language.to_bytes(), b.language.to_bytes());
    assert_eq!(a.annotations, b.annotations);
    let c = generate_synthetic(&SynthConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.objects.to_bytes(), c.objects.to_bytes());
}

#[test]
fn synthetic_shapes_and_splits() {
    let cfg = SynthConfig { count_train: 30, count_val: 7, count_test: 3, ..SynthConfig::default() };
    let d = generate_synthetic(&cfg).unwrap();
    let data: Dataset = d.into();
    assert_eq!(data.split(Split::Train).len(), 30);
    assert_eq!(data.split(Split::Val).len(), 7);
    assert_eq!(data.split(Split::Test).len(), 3);
    for r in &data.annotations {
        assert_eq!(r.objects.len(), 2);
        for o in &r.objects {
            assert_eq!(data.objects.rows(o), Some(cfg.views));
        }
        let k = data.language.rows(&r.id).unwrap();
        assert!((3..=3 + cfg.max_fillers).contains(&k));
    }
    assert_eq!(data.object_pool(Split::Val).len(), 14);
}

#[test]
fn synthetic_target_is_balanced() {
    let cfg = SynthConfig { count_train: 10_000, count_val: 0, dim: 4, ..SynthConfig::default() };
    let d = generate_synthetic(&cfg).unwrap();
    let zeros = d.annotations.iter().filter(|r| r.target == 0).count();
    let freq = zeros as f64 / 10_000.0;
    assert!((freq - 0.5).abs() <= 0.02, "{freq}");
}

#[test]
fn synthetic_views_follow_visibility_plan() {
    // Noise-free: a view's features are exactly slot + value of the attributes it shows.
    let cfg = SynthConfig { count_train: 40, count_val: 0, view_noise: 0.0, ..SynthConfig::default() };
    let d = generate_synthetic(&cfg).unwrap();
    let plan = cfg.visibility_plan();
    for r in &d.annotations {
        let rows = d.objects.get(&r.objects[0]).unwrap();
        for (v, w) in (0..cfg.views).zip(1..cfg.views) {
            let same = rows[v * cfg.dim..(v + 1) * cfg.dim] == rows[w * cfg.dim..(w + 1) * cfg.dim];
            assert_eq!(same, plan[v] == plan[w]);
        }
    }
}

/// Brute force over every predicate and every attribute pair, weighted as
/// the generator weights them, with no reference to the posterior helper.
fn exact_single_object_ceiling(a: usize, k: usize) -> f64 {
    let mut preds = Vec::new();
    for subject in 0..a {
        for reference in (0..a).filter(|&r| r != subject) {
            for relation in [Relation::Matches, Relation::Differs] {
                preds.push(Predicate { subject, reference, relation });
            }
        }
    }
    let configs: Vec<Vec<usize>> = (0..k.pow(a as u32))
        .map(|mut c| {
            (0..a)
                .map(|_| {
                    let v = c % k;
                    c /= k;
                    v
                })
                .collect()
        })
        .collect();
    let mut total = 0.0;
    for p in &preds {
        // Joint counts of (own attributes, is target) under the rejection sampler.
        let mut target_count = std::collections::HashMap::<Vec<usize>, (f64, f64)>::new();
        let mut valid = Vec::new();
        for x in &configs {
            for y in &configs {
                let (sx, sy) = (p.holds(x, y), p.holds(y, x));
                if sx != sy {
                    valid.push((x.clone(), y.clone(), sx));
                    let e = target_count.entry(x.clone()).or_default();
                    if sx {
                        e.0 += 1.0;
                    } else {
                        e.1 += 1.0;
                    }
                }
            }
        }
        let score = |o: &Vec<usize>| target_count.get(o).map(|&(t, f)| t / (t + f)).unwrap_or(0.5);
        let mut acc = 0.0;
        for (x, y, x_is_target) in &valid {
            // Both presentation orders are equally likely; ties go to the first candidate.
            let (sx, sy) = (score(x), score(y));
            let first_x = if sy > sx { !*x_is_target } else { *x_is_target };
            let first_y = if sx > sy { *x_is_target } else { !*x_is_target };
            acc += 0.5 * (f64::from(u8::from(first_x)) + f64::from(u8::from(first_y)));
        }
        total += acc / valid.len() as f64 / preds.len() as f64;
    }
    total
}

#[test]
fn single_object_posterior_is_uninformative() {
    let p = Predicate { subject: 0, reference: 1, relation: Relation::Matches };
    for own in [[0, 0], [0, 1], [3, 2]] {
        let post = single_object_posterior(&p, &own, 4);
        assert!(post > 0.0 && post < 1.0);
    }
    // A candidate's own subject and reference values are independent of the other's, so nothing is learned.
    assert_eq!(single_object_posterior(&p, &[1, 2], 4), single_object_posterior(&p, &[2, 2], 4));
}

#[test]
fn single_object_ceiling_matches_exact_enumeration() {
    for (a, k) in [(2, 4), (3, 3)] {
        let exact = exact_single_object_ceiling(a, k);
        let cfg = SynthConfig { attributes: a, values: k, ..SynthConfig::default() };
        let mc = bayes_single_object_ceiling(&cfg, 20_000, 3).unwrap();
        // Binomial standard error at 20k samples is about 0.0035.
        assert!((mc - exact).abs() < 0.015, "a={a} k={k}: mc {mc} exact {exact}");
        assert!(mc < 1.0);
    }
    assert!((exact_single_object_ceiling(2, 4) - 0.5).abs() < 1e-12);
}

#[test]
fn synthetic_rejects_bad_configs() {
    assert!(generate_synthetic(&SynthConfig { attributes: 1, ..SynthConfig::default() }).is_err());
    assert!(generate_synthetic(&SynthConfig { values: 1, ..SynthConfig::default() }).is_err());
    assert!(generate_synthetic(&SynthConfig { visibility: Some(vec![vec![0]; 8]), ..SynthConfig::default() }).is_err());
}

// ---- batching ----

fn tiny_stores() -> (FeatureStore, FeatureStore, Vec<AnnotationRecord>) {
    let dim = 2;
    let obj = |n: usize, base: f32| (0..n * dim).map(|i| base + i as f32).collect::<Vec<f32>>();
    let objects = FeatureStore::new(
        dim,
        vec![("a".into(), obj(8, 0.0)), ("b".into(), obj(8, 100.0)), ("c".into(), obj(3, 200.0))],
    )
    .unwrap();
    let language = FeatureStore::new(dim, vec![("r0".into(), obj(3, -1.0)), ("r1".into(), obj(5, -50.0))]).unwrap();
    let mut r0 = record(&["a", "b"], 0);
    r0.id = "r0".into();
    let mut r1 = record(&["c", "a"], 1);
    r1.id = "r1".into();
    r1.kind = Kind::Blind;
    (objects, language, vec![r0, r1])
}

#[test]
fn batch_pads_and_marks_validity() {
    let (objects, language, recs) = tiny_stores();
    let spec = BatchSpec { max_views: 8, max_tokens: 32, views: None };
    let b = make_batch(&recs, &objects, &language, &spec, None).unwrap();
    assert_eq!((b.size, b.objects, b.max_views, b.max_tokens, b.dim), (2, 2, 8, 32, 2));
    assert_eq!(b.token_count(0), 3);
    assert_eq!(b.token_count(1), 5);
    assert_eq!(b.view_counts(1), vec![3, 8]);
    assert_eq!(b.view_row(1, 0, 2), &[204.0, 205.0]);
    assert_eq!(b.view_row(1, 0, 3), &[0.0, 0.0]);
    assert_eq!(b.targets, vec![0, 1]);
    assert_eq!(b.kinds, vec![Kind::Visual, Kind::Blind]);
    assert!(b.view_keep.iter().all(|&k| k) && b.token_keep.iter().all(|&k| k));
}

#[test]
fn batch_subsamples_and_truncates() {
    let (objects, language, recs) = tiny_stores();
    let spec = BatchSpec { max_views: 8, max_tokens: 4, views: Some(4) };
    let b = make_batch(&recs, &objects, &language, &spec, None).unwrap();
    assert_eq!(b.view_counts(0), vec![4, 4]);
    // Objects with fewer views than requested keep all of them.
    assert_eq!(b.view_counts(1), vec![3, 4]);
    assert_eq!(b.view_row(0, 0, 1), &[4.0, 5.0]);
    assert_eq!(b.token_count(1), 4);
}

#[test]
fn batch_errors() {
    let (objects, language, mut recs) = tiny_stores();
    let spec = BatchSpec { max_views: 8, max_tokens: 32, views: None };
    assert!(matches!(make_batch(&[], &objects, &language, &spec, None), Err(Error::Empty(_))));
    let small = BatchSpec { max_views: 4, ..spec };
    assert!(make_batch(&recs, &objects, &language, &small, None).is_err());
    recs[0].objects[1] = "zzz".into();
    assert!(matches!(make_batch(&recs, &objects, &language, &spec, None), Err(Error::MissingId(id)) if id == "zzz"));
}

#[test]
fn batch_applies_masks() {
    let (objects, language, recs) = tiny_stores();
    let spec = BatchSpec { max_views: 8, max_tokens: 32, views: None };
    let mut m0 = MaskSample::keep_all(&[8, 8], 3);
    m0.view_keep[1][5] = false;
    m0.lang_keep[2] = false;
    let m1 = MaskSample::keep_all(&[3, 8], 5);
    let mut b = make_batch(&recs, &objects, &language, &spec, Some(&[m0, m1.clone()])).unwrap();
    assert!(!b.view_keep[b.view_slot(0, 1, 5)]);
    assert!(!b.token_keep[b.token_slot(0, 2)]);
    assert_eq!(b.view_keep.iter().filter(|&&k| !k).count(), 1);
    assert!(b.apply_masks(&[m1.clone(), m1]).is_err());
    b.clear_masks();
    assert!(b.view_keep.iter().all(|&k| k));
}

// ---- dataset directory ----

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { count_train: 12, count_val: 4, ..SynthConfig::default() };
    let d = generate_synthetic(&cfg).unwrap();
    write_dataset(dir.path(), &d, &cfg, serde_json::json!({"note": 1})).unwrap();
    let loaded = Dataset::load(dir.path()).unwrap();
    assert_eq!(loaded.annotations, d.annotations);
    assert_eq!(loaded.objects.to_bytes(), d.objects.to_bytes());
    assert_eq!(loaded.language.to_bytes(), d.language.to_bytes());
    assert_eq!(loaded.dim(), cfg.dim);
    assert!(Dataset::load(&dir.path().join("missing")).is_err());
}
