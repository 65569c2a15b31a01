use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::annotations::AnnotationRecord;
use crate::error::{Error, Result};

/// Adds uniformly sampled distractors from `pool` until the record has `m`
/// objects, then shuffles the candidates and re-indexes the target.
pub fn extend_distractors<R: Rng + ?Sized>(
    record: &AnnotationRecord,
    pool: &[String],
    m: usize,
    rng: &mut R,
) -> Result<AnnotationRecord> {
    if m <= record.objects.len() {
        return Ok(record.clone());
    }
    let needed = m - record.objects.len();
    let mut seen: HashSet<&str> = record.objects.iter().map(String::as_str).collect();
    let candidates: Vec<&String> = pool.iter().filter(|id| seen.insert(id.as_str())).collect();
    if candidates.len() < needed {
        return Err(Error::InsufficientPool { needed, available: candidates.len() });
    }
    let target_id = record.objects[record.target].clone();
    let mut objects = record.objects.clone();
    objects.extend(index::sample(rng, candidates.len(), needed).into_iter().map(|i| candidates[i].clone()));
    objects.shuffle(rng);
    let target = objects.iter().position(|o| *o == target_id).expect("target kept");
    Ok(AnnotationRecord { objects, target, ..record.clone() })
}
