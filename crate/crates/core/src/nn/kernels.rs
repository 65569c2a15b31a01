//! Scalar kernels shared by the tape and the value-level operations.

use super::tensor::Real;

/// Lower/upper clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Tanh-form GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::of(SQRT_2_OVER_PI);
    let a = T::of(GELU_CUBIC);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of(SQRT_2_OVER_PI);
    let a = T::of(GELU_CUBIC);
    let half = T::of(0.5);
    let inner = c * (x + a * x * x * x);
    let th = inner.tanh();
    let sech2 = T::one() - th * th;
    half * (T::one() + th) + half * x * sech2 * c * (T::one() + T::of(3.0) * a * x * x)
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Smoothed binary cross-entropy of a probability against a {0,1} label.
pub fn smoothed_bce<T: Real>(p: T, y: T, eps: T) -> T {
    let lo = T::of(PROB_CLAMP);
    let hi = T::one() - lo;
    let p = p.max(lo).min(hi);
    let target = y * (T::one() - eps) + eps / T::of(2.0);
    -(target * p.ln() + (T::one() - target) * (T::one() - p).ln())
}

/// Sum whose result does not depend on the order of `terms`.
///
/// The terms are sorted by value first, which makes the rounding sequence a
/// function of the multiset alone.
pub fn canonical_sum<T: Real>(terms: &mut [T]) -> T {
    terms.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    terms.iter().fold(T::zero(), |acc, &x| acc + x)
}

/// Population mean and reciprocal standard deviation of one row.
pub fn row_stats<T: Real>(x: &[T], eps: T) -> (T, T) {
    let n = T::of(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
