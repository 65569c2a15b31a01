//! Synthetic relational reference game.
//!
//! Each object has `A` categorical attributes drawn uniformly from `K`
//! values. A referring expression names a subject attribute `c1`, a
//! different reference attribute `c2` and a relation: the target is the
//! object whose `c1` value *matches* (or *differs from*) the other object's
//! `c2` value. Instances are resampled until exactly one object satisfies the
//! relation. Because a single object's own attributes carry no information
//! about the other object's values, an object-by-object scorer cannot beat
//! chance, while a scorer that sees both objects can solve every instance.
//!
//! A view only shows the attributes its visibility plan lists, so dropping
//! views removes information.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::annotations::{AnnotationRecord, Kind, Split};
use super::store::FeatureStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub attributes: usize,
    pub values: usize,
    pub dim: usize,
    pub views: usize,
    /// Visible attributes per view; `None` uses [`default_visibility`].
    pub visibility: Option<Vec<Vec<usize>>>,
    /// Attribute whose use marks an expression as visual rather than blind.
    pub hue_attribute: usize,
    pub view_noise: f64,
    /// Width of the per-object appearance code shared by all of its views.
    pub appearance_dim: usize,
    pub appearance_scale: f64,
    pub language_noise: f64,
    pub max_fillers: usize,
    pub count_train: usize,
    pub count_val: usize,
    pub count_test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            attributes: 2,
            values: 4,
            dim: 32,
            views: 8,
            visibility: None,
            hue_attribute: 0,
            view_noise: 0.1,
            appearance_dim: 4,
            appearance_scale: 0.0,
            language_noise: 0.05,
            max_fillers: 2,
            count_train: 2000,
            count_val: 500,
            count_test: 0,
            seed: 0,
        }
    }
}

/// View `v` shows attribute `⌊v·A/n⌋`, so each attribute occupies a
/// contiguous arc of `n/A` views.
pub fn default_visibility(attributes: usize, views: usize) -> Vec<Vec<usize>> {
    (0..views).map(|v| vec![v * attributes / views]).collect()
}

/// Relation between the subject attribute of a candidate and the reference
/// attribute of the other candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Matches,
    Differs,
}

/// Sampled referring expression.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Predicate {
    pub subject: usize,
    pub reference: usize,
    pub relation: Relation,
}

impl Predicate {
    /// Whether `own` satisfies the predicate against `other`.
    pub fn holds(&self, own: &[usize], other: &[usize]) -> bool {
        let same = own[self.subject] == other[self.reference];
        match self.relation {
            Relation::Matches => same,
            Relation::Differs => !same,
        }
    }
}

impl SynthConfig {
    pub fn visibility_plan(&self) -> Vec<Vec<usize>> {
        self.visibility.clone().unwrap_or_else(|| default_visibility(self.attributes, self.views))
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes < 2 {
            return Err(Error::Config("need at least two attributes".into()));
        }
        if self.values < 2 {
            return Err(Error::Config("need at least two attribute values".into()));
        }
        if self.dim == 0 || self.views == 0 {
            return Err(Error::Config("dim and views must be positive".into()));
        }
        if self.hue_attribute >= self.attributes {
            return Err(Error::Config("hue attribute out of range".into()));
        }
        let plan = self.visibility_plan();
        if plan.len() != self.views {
            return Err(Error::Config(format!("visibility plan covers {} of {} views", plan.len(), self.views)));
        }
        let mut seen = vec![0usize; self.attributes];
        for attrs in &plan {
            for &a in attrs {
                if a >= self.attributes {
                    return Err(Error::Config(format!("visibility plan names attribute {a}")));
                }
                seen[a] += 1;
            }
        }
        if let Some(a) = seen.iter().position(|&c| c < 2) {
            return Err(Error::Config(format!("invalid visibility plan: attribute {a} visible in fewer than two views")));
        }
        Ok(())
    }
}

fn sample_predicate<R: Rng + ?Sized>(rng: &mut R, attributes: usize) -> Predicate {
    let subject = rng.random_range(0..attributes);
    let mut reference = rng.random_range(0..attributes - 1);
    if reference >= subject {
        reference += 1;
    }
    let relation = if rng.random::<bool>() { Relation::Matches } else { Relation::Differs };
    Predicate { subject, reference, relation }
}

/// Rejection-samples attribute vectors for two objects until exactly one
/// satisfies `pred`; returns them with the satisfying index.
fn sample_pair<R: Rng + ?Sized>(rng: &mut R, pred: &Predicate, a: usize, k: usize) -> ([Vec<usize>; 2], usize) {
    loop {
        let x: Vec<usize> = (0..a).map(|_| rng.random_range(0..k)).collect();
        let y: Vec<usize> = (0..a).map(|_| rng.random_range(0..k)).collect();
        let (sx, sy) = (pred.holds(&x, &y), pred.holds(&y, &x));
        if sx != sy {
            let target = if sx { 0 } else { 1 };
            return ([x, y], target);
        }
    }
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

/// Fixed random embeddings of one generated dataset.
struct World {
    slot: Vec<Vec<f64>>,
    value: Vec<Vec<f64>>,
    /// `dim × appearance_dim`, row-major.
    appearance: Vec<f64>,
    subject_words: Vec<Vec<f64>>,
    reference_words: Vec<Vec<f64>>,
    relation_words: Vec<Vec<f64>>,
    filler_words: Vec<Vec<f64>>,
}

const FILLER_WORDS: usize = 3;

impl World {
    fn new(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.dim;
        let mut rows = |n: usize| (0..n).map(|_| normal_vec(rng, d, 1.0)).collect::<Vec<_>>();
        let slot = rows(cfg.attributes);
        let value = rows(cfg.values);
        let subject_words = rows(cfg.attributes);
        let reference_words = rows(cfg.attributes);
        let relation_words = rows(2);
        let filler_words = rows(FILLER_WORDS);
        let appearance = normal_vec(rng, d * cfg.appearance_dim, cfg.appearance_scale);
        Self { slot, value, appearance, subject_words, reference_words, relation_words, filler_words }
    }
}

/// Generated annotations plus object-view and language-token stores.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub annotations: Vec<AnnotationRecord>,
    pub objects: FeatureStore,
    pub language: FeatureStore,
}

fn describe(p: &Predicate) -> String {
    let rel = match p.relation {
        Relation::Matches => "matches",
        Relation::Differs => "differs from",
    };
    format!("the one whose attribute {} {} the other's attribute {}", p.subject, rel, p.reference)
}

/// Deterministically generates train/val/test splits from `cfg.seed`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let plan = cfg.visibility_plan();
    let d = cfg.dim;
    let mut world_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    world_rng.set_stream(1);
    let world = World::new(cfg, &mut world_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);

    let mut annotations = Vec::new();
    let mut objects = Vec::new();
    let mut language = Vec::new();
    for (split, count) in [(Split::Train, cfg.count_train), (Split::Val, cfg.count_val), (Split::Test, cfg.count_test)] {
        for i in 0..count {
            let pred = sample_predicate(&mut rng, cfg.attributes);
            let (mut attrs, mut target) = sample_pair(&mut rng, &pred, cfg.attributes, cfg.values);
            assert!(
                pred.holds(&attrs[target], &attrs[1 - target]) && !pred.holds(&attrs[1 - target], &attrs[target]),
                "exactly one candidate satisfies the expression"
            );
            if rng.random::<bool>() {
                attrs.swap(0, 1);
                target = 1 - target;
            }
            let id = format!("{split}-{i:06}");
            let mut object_ids = Vec::with_capacity(2);
            for (o, a) in attrs.iter().enumerate() {
                let z = normal_vec(&mut rng, cfg.appearance_dim, 1.0);
                let mut shared = vec![0.0; d];
                for (r, s) in shared.iter_mut().enumerate() {
                    *s = (0..cfg.appearance_dim).map(|c| world.appearance[r * cfg.appearance_dim + c] * z[c]).sum();
                }
                let mut rows = Vec::with_capacity(cfg.views * d);
                for visible in &plan {
                    let noise = normal_vec(&mut rng, d, cfg.view_noise);
                    for r in 0..d {
                        let mut x = shared[r] + noise[r];
                        for &attr in visible {
                            x += world.slot[attr][r] + world.value[a[attr]][r];
                        }
                        rows.push(x as f32);
                    }
                }
                let oid = format!("{id}-{}", (b'a' + o as u8) as char);
                objects.push((oid.clone(), rows));
                object_ids.push(oid);
            }
            let mut words = vec![
                &world.subject_words[pred.subject],
                &world.reference_words[pred.reference],
                &world.relation_words[pred.relation as usize],
            ];
            let fillers = rng.random_range(0..=cfg.max_fillers);
            for _ in 0..fillers {
                words.push(&world.filler_words[rng.random_range(0..FILLER_WORDS)]);
            }
            words.shuffle(&mut rng);
            let mut tokens = Vec::with_capacity(words.len() * d);
            for w in words {
                let noise = normal_vec(&mut rng, d, cfg.language_noise);
                tokens.extend(w.iter().zip(&noise).map(|(&x, &n)| (x + n) as f32));
            }
            language.push((id.clone(), tokens));
            let kind = if pred.subject == cfg.hue_attribute || pred.reference == cfg.hue_attribute {
                Kind::Visual
            } else {
                Kind::Blind
            };
            annotations.push(AnnotationRecord { id, objects: object_ids, target, text: describe(&pred), kind, split });
        }
    }
    Ok(SynthDataset {
        annotations,
        objects: FeatureStore::new(d, objects)?,
        language: FeatureStore::new(d, language)?,
    })
}

/// Posterior probability that an object with attributes `own` is the target,
/// given only its own (noise-free) attributes and the expression.
///
/// Marginalizes the other candidate's `subject`/`reference` values, which
/// are uniform and independent under the generator.
pub fn single_object_posterior(pred: &Predicate, own: &[usize], values: usize) -> f64 {
    let (mut hit, mut miss) = (0.0, 0.0);
    let mut other = vec![0usize; own.len()];
    for vs in 0..values {
        for vr in 0..values {
            other[pred.subject] = vs;
            other[pred.reference] = vr;
            let (mine, theirs) = (pred.holds(own, &other), pred.holds(&other, own));
            if mine && !theirs {
                hit += 1.0;
            } else if theirs && !mine {
                miss += 1.0;
            }
        }
    }
    if hit + miss == 0.0 {
        0.5
    } else {
        hit / (hit + miss)
    }
}

/// Monte-Carlo estimate of the accuracy ceiling of any scorer that rates
/// each candidate from its own attributes alone (argmax of the posterior,
/// ties to the first candidate), over the generative process of `cfg`.
pub fn bayes_single_object_ceiling(cfg: &SynthConfig, samples: usize, seed: u64) -> Result<f64> {
    cfg.validate()?;
    if samples == 0 {
        return Err(Error::Empty("Monte-Carlo samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut correct = 0usize;
    for _ in 0..samples {
        let pred = sample_predicate(&mut rng, cfg.attributes);
        let (mut attrs, mut target) = sample_pair(&mut rng, &pred, cfg.attributes, cfg.values);
        if rng.random::<bool>() {
            attrs.swap(0, 1);
            target = 1 - target;
        }
        let s0 = single_object_posterior(&pred, &attrs[0], cfg.values);
        let s1 = single_object_posterior(&pred, &attrs[1], cfg.values);
        let guess = if s1 > s0 { 1 } else { 0 };
        correct += usize::from(guess == target);
    }
    Ok(correct as f64 / samples as f64)
}
