use rand::Rng;

use crate::error::{Error, Result};

/// Training-time keep flags: per object per view, and per language token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSample {
    pub view_keep: Vec<Vec<bool>>,
    pub lang_keep: Vec<bool>,
}

impl MaskSample {
    pub fn keep_all(views_per_object: &[usize], tokens: usize) -> Self {
        Self { view_keep: views_per_object.iter().map(|&n| vec![true; n]).collect(), lang_keep: vec![true; tokens] }
    }
}

fn drop_group<R: Rng + ?Sized>(rng: &mut R, n: usize, p: f64) -> Vec<bool> {
    let mut keep: Vec<bool> = (0..n).map(|_| rng.random::<f64>() >= p).collect();
    if n > 0 && !keep.iter().any(|&k| k) {
        keep[rng.random_range(0..n)] = true;
    }
    keep
}

/// Drops each view with probability `p_view` and each token with `p_lang`.
/// A group left empty gets one uniformly chosen member restored.
pub fn sample_masks<R: Rng + ?Sized>(
    rng: &mut R,
    views_per_object: &[usize],
    tokens: usize,
    p_view: f64,
    p_lang: f64,
) -> Result<MaskSample> {
    for (name, p) in [("p_view", p_view), ("p_lang", p_lang)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{name}={p} outside [0,1]")));
        }
    }
    let view_keep = views_per_object.iter().map(|&n| drop_group(rng, n, p_view)).collect();
    let lang_keep = drop_group(rng, tokens, p_lang);
    Ok(MaskSample { view_keep, lang_keep })
}
