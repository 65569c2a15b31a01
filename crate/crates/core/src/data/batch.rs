use super::annotations::{AnnotationRecord, Kind};
use super::masks::MaskSample;
use super::store::FeatureStore;
use super::views::subsample_views;
use crate::error::{Error, Result};

/// Shape limits applied when batching.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchSpec {
    pub max_views: usize,
    pub max_tokens: usize,
    /// Evenly subsample each object down to this many views.
    pub views: Option<usize>,
}

/// Padded tensors for `size` instances of `objects` candidates each.
///
/// `view_valid`/`token_valid` mark real (non-padding) rows; `view_keep`/`token_keep`
/// carry augmentation masks and are all-true outside training.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub objects: usize,
    pub max_views: usize,
    pub max_tokens: usize,
    pub dim: usize,
    /// `size × objects × max_views × dim`
    pub views: Vec<f32>,
    pub view_valid: Vec<bool>,
    pub view_keep: Vec<bool>,
    /// `size × max_tokens × dim`
    pub tokens: Vec<f32>,
    pub token_valid: Vec<bool>,
    pub token_keep: Vec<bool>,
    pub targets: Vec<usize>,
    pub kinds: Vec<Kind>,
    pub ids: Vec<String>,
}

impl Batch {
    pub fn view_slot(&self, b: usize, j: usize, v: usize) -> usize {
        (b * self.objects + j) * self.max_views + v
    }

    pub fn token_slot(&self, b: usize, t: usize) -> usize {
        b * self.max_tokens + t
    }

    pub fn view_row(&self, b: usize, j: usize, v: usize) -> &[f32] {
        let s = self.view_slot(b, j, v);
        &self.views[s * self.dim..(s + 1) * self.dim]
    }

    pub fn token_row(&self, b: usize, t: usize) -> &[f32] {
        let s = self.token_slot(b, t);
        &self.tokens[s * self.dim..(s + 1) * self.dim]
    }

    /// Real view count of each object of instance `b`.
    pub fn view_counts(&self, b: usize) -> Vec<usize> {
        (0..self.objects)
            .map(|j| (0..self.max_views).filter(|&v| self.view_valid[self.view_slot(b, j, v)]).count())
            .collect()
    }

    pub fn token_count(&self, b: usize) -> usize {
        (0..self.max_tokens).filter(|&t| self.token_valid[self.token_slot(b, t)]).count()
    }

    /// Installs one augmentation sample per instance.
    pub fn apply_masks(&mut self, masks: &[MaskSample]) -> Result<()> {
        if masks.len() != self.size {
            return Err(Error::Shape { op: "apply_masks", detail: format!("{} masks for {} instances", masks.len(), self.size) });
        }
        for (b, mask) in masks.iter().enumerate() {
            let counts = self.view_counts(b);
            let tokens = self.token_count(b);
            if mask.view_keep.len() != self.objects
                || mask.view_keep.iter().zip(&counts).any(|(k, &n)| k.len() != n)
                || mask.lang_keep.len() != tokens
            {
                return Err(Error::Shape { op: "apply_masks", detail: format!("mask shape mismatch for instance {b}") });
            }
            for (j, keep) in mask.view_keep.iter().enumerate() {
                for (v, &k) in keep.iter().enumerate() {
                    let s = self.view_slot(b, j, v);
                    self.view_keep[s] = k;
                }
            }
            for (t, &k) in mask.lang_keep.iter().enumerate() {
                let s = self.token_slot(b, t);
                self.token_keep[s] = k;
            }
        }
        Ok(())
    }

    pub fn clear_masks(&mut self) {
        self.view_keep.iter_mut().for_each(|k| *k = true);
        self.token_keep.iter_mut().for_each(|k| *k = true);
    }
}

/// Pads the referenced features into a [`Batch`]. Language is truncated to
/// `spec.max_tokens`; more than `spec.max_views` views per object is an error.
pub fn make_batch(
    instances: &[AnnotationRecord],
    objects: &FeatureStore,
    language: &FeatureStore,
    spec: &BatchSpec,
    masks: Option<&[MaskSample]>,
) -> Result<Batch> {
    let first = instances.first().ok_or(Error::Empty("batch"))?;
    let m = first.objects.len();
    if instances.iter().any(|r| r.objects.len() != m) {
        return Err(Error::Shape { op: "make_batch", detail: "instances disagree on object count".into() });
    }
    let dim = objects.dim();
    if language.dim() != dim {
        return Err(Error::Shape { op: "make_batch", detail: format!("object dim {dim}, language dim {}", language.dim()) });
    }
    let (nmax, kmax) = (spec.max_views, spec.max_tokens);
    let size = instances.len();
    let mut batch = Batch {
        size,
        objects: m,
        max_views: nmax,
        max_tokens: kmax,
        dim,
        views: vec![0.0; size * m * nmax * dim],
        view_valid: vec![false; size * m * nmax],
        view_keep: vec![true; size * m * nmax],
        tokens: vec![0.0; size * kmax * dim],
        token_valid: vec![false; size * kmax],
        token_keep: vec![true; size * kmax],
        targets: instances.iter().map(|r| r.target).collect(),
        kinds: instances.iter().map(|r| r.kind).collect(),
        ids: instances.iter().map(|r| r.id.clone()).collect(),
    };
    for (b, rec) in instances.iter().enumerate() {
        for (j, oid) in rec.objects.iter().enumerate() {
            let raw = objects.get(oid).ok_or_else(|| Error::MissingId(oid.clone()))?;
            let rows = match spec.views {
                Some(jv) if jv < raw.len() / dim => subsample_views(raw, dim, jv)?,
                _ => raw.to_vec(),
            };
            let n = rows.len() / dim;
            if n > nmax {
                return Err(Error::Config(format!("object {oid:?} has {n} views, limit is {nmax}")));
            }
            let s = batch.view_slot(b, j, 0);
            batch.views[s * dim..(s + n) * dim].copy_from_slice(&rows);
            batch.view_valid[s..s + n].iter_mut().for_each(|v| *v = true);
        }
        let raw = language.get(&rec.id).ok_or_else(|| Error::MissingId(rec.id.clone()))?;
        let k = (raw.len() / dim).min(kmax);
        let s = batch.token_slot(b, 0);
        batch.tokens[s * dim..(s + k) * dim].copy_from_slice(&raw[..k * dim]);
        batch.token_valid[s..s + k].iter_mut().for_each(|v| *v = true);
    }
    if let Some(masks) = masks {
        batch.apply_masks(masks)?;
    }
    Ok(batch)
}
