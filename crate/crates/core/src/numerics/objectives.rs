//! Forward values and analytic gradients of the ranking objectives. Shared by
//! the tape ops and the scalar loss functions in `train::loss`.

use super::{log_add_exp, sigmoid, softplus, Real};

/// Plackett–Luce negative log-likelihood of `scores` listed best first,
/// averaged over the list length. Returns 0 for an empty slice.
pub fn plackett_luce<T: Real>(scores: &[T]) -> T {
    let m = scores.len();
    if m == 0 {
        return T::zero();
    }
    let mut suffix = T::neg_infinity();
    let mut total = T::zero();
    for &s in scores.iter().rev() {
        suffix = log_add_exp(s, suffix);
        total += suffix - s;
    }
    total / T::of(m as f64)
}

/// Gradient of [`plackett_luce`] with respect to each score.
///
/// `d/ds_j = (1/M)·(Σ_{i≤j} exp(s_j − lse_i) − 1)` where `lse_i` is the
/// log-sum-exp of the suffix starting at `i`.
pub fn plackett_luce_grad<T: Real>(scores: &[T]) -> Vec<T> {
    let m = scores.len();
    if m == 0 {
        return Vec::new();
    }
    let mut lse = vec![T::zero(); m];
    let mut suffix = T::neg_infinity();
    for i in (0..m).rev() {
        suffix = log_add_exp(scores[i], suffix);
        lse[i] = suffix;
    }
    let inv_m = T::one() / T::of(m as f64);
    let mut running = T::neg_infinity(); // log Σ_{i≤j} exp(−lse_i)
    let mut grad = Vec::with_capacity(m);
    for j in 0..m {
        running = log_add_exp(running, -lse[j]);
        grad.push(((scores[j] + running).exp() - T::one()) * inv_m);
    }
    grad
}

/// BPR loss `−ln σ(margin)` for one pair.
pub fn bpr<T: Real>(positive: T, negative: T) -> T {
    softplus(negative - positive)
}

/// Derivative of [`bpr`] with respect to the positive score; the negative
/// score receives the opposite sign.
pub fn bpr_grad<T: Real>(positive: T, negative: T) -> T {
    -sigmoid(negative - positive)
}

pub fn mse<T: Real>(pred: &[T], target: &[T]) -> T {
    if pred.is_empty() {
        return T::zero();
    }
    let s = pred.iter().zip(target).fold(T::zero(), |acc, (&p, &t)| acc + (p - t) * (p - t));
    s / T::of(pred.len() as f64)
}
