use super::forward::contrastive_graph;
use crate::error::{Error, Result};
use crate::nn::kernels::{sigmoid, smoothed_bce};
use crate::nn::{Graph, ReduceMode, Real, Tensor};

/// Mean over objects of the smoothed BCE of `sigmoid(score)` against the
/// one-hot target. Probabilities are per object, never renormalized.
pub fn grounding_loss<T: Real>(scores: &[T], target: usize, eps: T) -> Result<T> {
    if target >= scores.len() {
        return Err(Error::Shape { op: "grounding_loss", detail: format!("target {target} of {} scores", scores.len()) });
    }
    if !(eps >= T::zero() && eps < T::one()) {
        return Err(Error::Config(format!("label smoothing {eps} outside [0,1)")));
    }
    let total: T = scores
        .iter()
        .enumerate()
        .map(|(j, &s)| smoothed_bce(sigmoid(s), if j == target { T::one() } else { T::zero() }, eps))
        .sum();
    Ok(total / T::of(scores.len() as f64))
}

/// Symmetric in-batch contrastive loss between matching rows of `objects` and `language`.
pub fn contrastive_loss<T: Real>(objects: &Tensor<T>, language: &Tensor<T>, temperature: f64) -> Result<T> {
    if objects.shape() != language.shape() || objects.shape().len() != 2 || objects.rows() == 0 {
        return Err(Error::Shape {
            op: "contrastive_loss",
            detail: format!("{:?} vs {:?}", objects.shape(), language.shape()),
        });
    }
    let mut g = Graph::new(&[], ReduceMode::Sequential);
    let a = g.input(objects.clone());
    let b = g.input(language.clone());
    let loss = contrastive_graph(&mut g, a, b, temperature)?;
    Ok(g.value(loss).data()[0])
}

/// Index of the highest score; ties go to the lowest index.
pub fn predict<T: Real>(scores: &[T]) -> Result<usize> {
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = j;
        }
    }
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    Ok(best)
}
