//! Per-group ranking metrics.
//!
//! Ground truth is given as 1-based ranks (`truth[i]` is item `i`'s rank);
//! predictions either as raw scores or as an order of item indices.

use std::cmp::Ordering;

use super::{EvalError, Result};

/// Item indices sorted by descending score, ties broken by ascending key.
pub fn predicted_order(scores: &[f64], keys: &[&str]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then_with(|| keys[a].cmp(keys[b]))
    });
    idx
}

/// Top-weighted Kendall τ with additive hyperbolic weights.
///
/// An item of ground-truth rank `r` (1-based) weighs `1/r`; the pair `(i, j)`
/// weighs `w_i + w_j` and contributes `+1` if the prediction orders it like
/// the truth, `−1` if reversed and `0` on a prediction tie.
pub fn weighted_kendall_tau(pred: &[f64], truth: &[usize]) -> Result<f64> {
    let m = pred.len();
    if m < 2 {
        return Err(EvalError::GroupTooSmall(m));
    }
    if truth.len() != m {
        return Err(EvalError::Length { pred: m, truth: truth.len() });
    }
    let w: Vec<f64> = truth.iter().map(|&r| 1.0 / r as f64).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..m {
        for j in i + 1..m {
            let pw = w[i] + w[j];
            den += pw;
            // Orient the pair so that `a` is the truly better item.
            let (a, b) = if truth[i] < truth[j] { (i, j) } else { (j, i) };
            match pred[a].partial_cmp(&pred[b]) {
                Some(Ordering::Greater) => num += pw,
                Some(Ordering::Less) => num -= pw,
                _ => {}
            }
        }
    }
    Ok(num / den)
}

fn check_k(m: usize, k: usize) -> Result<()> {
    if k == 0 || k > m {
        Err(EvalError::IneligibleK { m, k })
    } else {
        Ok(())
    }
}

/// NDCG@K with linear relevance `(M − rank)/(M − 1)`.
pub fn ndcg_at_k(order: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    let m = truth.len();
    check_k(m, k)?;
    if m < 2 {
        return Err(EvalError::GroupTooSmall(m));
    }
    let rel = |rank: usize| (m - rank) as f64 / (m - 1) as f64;
    let dcg: f64 = order.iter().take(k).enumerate().map(|(p, &i)| rel(truth[i]) / ((p + 2) as f64).log2()).sum();
    let idcg: f64 = (1..=k).map(|rank| rel(rank) / ((rank + 1) as f64).log2()).sum();
    Ok(if idcg > 0.0 { dcg / idcg } else { 0.0 })
}

/// 1 when the ground-truth best item is among the first `k` predictions.
pub fn hit_at_k(order: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    check_k(truth.len(), k)?;
    Ok(if order.iter().take(k).any(|&i| truth[i] == 1) { 1.0 } else { 0.0 })
}

/// Overlap between predicted and true top-`k` sets, divided by `k`.
pub fn recall_at_k(order: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    check_k(truth.len(), k)?;
    let hits = order.iter().take(k).filter(|&&i| truth[i] <= k).count();
    Ok(hits as f64 / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Brute-force references written straight from the definitions.

    fn tau_ref(pred: &[f64], truth: &[usize]) -> f64 {
        let m = pred.len();
        let mut agree = 0.0;
        let mut total = 0.0;
        for i in 0..m {
            for j in 0..m {
                if truth[i] < truth[j] {
                    let w = 1.0 / truth[i] as f64 + 1.0 / truth[j] as f64;
                    total += w;
                    let s = pred[i] - pred[j];
                    agree += w * if s > 0.0 {
                        1.0
                    } else if s < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
        }
        agree / total
    }

    fn dcg_ref(order: &[usize], truth: &[usize], k: usize) -> f64 {
        let m = truth.len() as f64;
        let mut dcg = 0.0;
        for pos in 1..=k {
            let r = truth[order[pos - 1]] as f64;
            dcg += ((m - r) / (m - 1.0)) / (pos as f64 + 1.0).log2();
        }
        dcg
    }

    fn ndcg_ref(order: &[usize], truth: &[usize], k: usize) -> f64 {
        let mut ideal: Vec<usize> = (0..truth.len()).collect();
        ideal.sort_by_key(|&i| truth[i]);
        dcg_ref(order, truth, k) / dcg_ref(&ideal, truth, k)
    }

    fn hit_ref(order: &[usize], truth: &[usize], k: usize) -> f64 {
        let best = (0..truth.len()).find(|&i| truth[i] == 1).unwrap();
        if order[..k].contains(&best) {
            1.0
        } else {
            0.0
        }
    }

    fn recall_ref(order: &[usize], truth: &[usize], k: usize) -> f64 {
        let mut n = 0;
        for &i in &order[..k] {
            for j in 0..truth.len() {
                if j == i && truth[j] <= k {
                    n += 1;
                }
            }
        }
        n as f64 / k as f64
    }

    #[test]
    fn tau_extremes() {
        let truth = [1, 2, 3, 4];
        assert_eq!(weighted_kendall_tau(&[4.0, 3.0, 2.0, 1.0], &truth).unwrap(), 1.0);
        assert_eq!(weighted_kendall_tau(&[1.0, 2.0, 3.0, 4.0], &truth).unwrap(), -1.0);
        assert!(matches!(weighted_kendall_tau(&[1.0], &[1]), Err(EvalError::GroupTooSmall(1))));
    }

    #[test]
    fn top_swap_costs_more() {
        let truth = [1, 2, 3, 4];
        let top = weighted_kendall_tau(&[3.0, 4.0, 2.0, 1.0], &truth).unwrap();
        let bottom = weighted_kendall_tau(&[4.0, 3.0, 1.0, 2.0], &truth).unwrap();
        assert!(top < bottom);
        // Hand enumeration: total weight Σ(w_i + w_j) over 6 pairs = 3·(1 + 1/2 + 1/3 + 1/4).
        let total = 3.0 * (1.0 + 0.5 + 1.0 / 3.0 + 0.25);
        assert!((top - (total - 2.0 * 1.5) / total).abs() < 1e-15);
        assert!((bottom - (total - 2.0 * (1.0 / 3.0 + 0.25)) / total).abs() < 1e-15);
        assert_eq!(top, tau_ref(&[3.0, 4.0, 2.0, 1.0], &truth));
    }

    #[test]
    fn tau_prediction_ties_count_zero() {
        let t = weighted_kendall_tau(&[1.0, 1.0], &[1, 2]).unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn ndcg_examples() {
        let truth = [1, 2, 3, 4];
        assert_eq!(ndcg_at_k(&[0, 1, 2, 3], &truth, 2).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[1, 0], &[1, 2], 1).unwrap(), 0.0);
        let v = ndcg_at_k(&[1, 0, 2, 3], &truth, 2).unwrap();
        let want = ((2.0 / 3.0) + 1.0 / 3f64.log2()) / (1.0 + (2.0 / 3.0) / 3f64.log2());
        assert!((v - want).abs() < 1e-15);
        assert!((v - 0.912).abs() < 2e-3, "{v}");
        assert!(ndcg_at_k(&[0, 1], &[1, 2], 3).is_err());
    }

    #[test]
    fn hit_and_recall_examples() {
        let truth = [3, 1, 2];
        assert_eq!(hit_at_k(&[0, 2, 1], &truth, 3).unwrap(), 1.0);
        assert_eq!(hit_at_k(&[1, 0, 2], &truth, 1).unwrap(), 1.0);
        assert_eq!(hit_at_k(&[0, 1, 2], &truth, 1).unwrap(), 0.0);
        let truth6 = [1, 2, 3, 4, 5, 6];
        assert_eq!(recall_at_k(&[0, 1, 2, 3, 4, 5], &truth6, 3).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[3, 4, 5, 0, 1, 2], &truth6, 3).unwrap(), 0.0);
        assert!((recall_at_k(&[0, 4, 1, 2, 3, 5], &truth6, 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tie_break_by_key() {
        assert_eq!(predicted_order(&[1.0, 2.0, 1.0], &["b", "c", "a"]), vec![1, 2, 0]);
    }

    /// 1000 random groups with M ≤ 7, every metric against its brute-force
    /// reference.
    #[test]
    fn exhaustive_small_groups_match_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let m = rng.random_range(2..=7);
            let mut truth: Vec<usize> = (1..=m).collect();
            truth.shuffle(&mut rng);
            // Coarse scores so prediction ties occur.
            let pred: Vec<f64> = (0..m).map(|_| rng.random_range(0..4) as f64).collect();
            let keys: Vec<String> = (0..m).map(|i| format!("k{i}")).collect();
            let keys: Vec<&str> = keys.iter().map(String::as_str).collect();
            let order = predicted_order(&pred, &keys);
            assert!((weighted_kendall_tau(&pred, &truth).unwrap() - tau_ref(&pred, &truth)).abs() <= 1e-12);
            for k in 1..=m {
                assert!((ndcg_at_k(&order, &truth, k).unwrap() - ndcg_ref(&order, &truth, k)).abs() <= 1e-12);
                assert_eq!(hit_at_k(&order, &truth, k).unwrap(), hit_ref(&order, &truth, k));
                assert_eq!(recall_at_k(&order, &truth, k).unwrap(), recall_ref(&order, &truth, k));
            }
            assert_eq!(hit_at_k(&order, &truth, 1).unwrap(), recall_at_k(&order, &truth, 1).unwrap());
        }
    }

    proptest! {
        #[test]
        fn tau_antisymmetric(vals in prop::collection::hash_set(-1000i32..1000, 2..30)) {
            let pred: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
            let m = pred.len();
            let truth: Vec<usize> = (1..=m).collect();
            let neg: Vec<f64> = pred.iter().map(|v| -v).collect();
            let a = weighted_kendall_tau(&pred, &truth).unwrap();
            let b = weighted_kendall_tau(&neg, &truth).unwrap();
            prop_assert!((a + b).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&a));
        }

        #[test]
        fn at_k_monotone_invariance(vals in prop::collection::vec(-10.0f64..10.0, 2..25), seed in 0u64..1000) {
            let m = vals.len();
            let mut truth: Vec<usize> = (1..=m).collect();
            truth.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let keys: Vec<String> = (0..m).map(|i| format!("{i:03}")).collect();
            let keys: Vec<&str> = keys.iter().map(String::as_str).collect();
            let o1 = predicted_order(&vals, &keys);
            let warped: Vec<f64> = vals.iter().map(|v| (v * 0.3).exp() * 5.0 - 2.0).collect();
            let o2 = predicted_order(&warped, &keys);
            let mut prev_hit = 0.0;
            for k in 1..=m {
                prop_assert_eq!(ndcg_at_k(&o1, &truth, k).unwrap(), ndcg_at_k(&o2, &truth, k).unwrap());
                prop_assert_eq!(recall_at_k(&o1, &truth, k).unwrap(), recall_at_k(&o2, &truth, k).unwrap());
                let h = hit_at_k(&o1, &truth, k).unwrap();
                prop_assert!(h >= prev_hit);
                prev_hit = h;
                let nd = ndcg_at_k(&o1, &truth, k).unwrap();
                prop_assert!((0.0..=1.0 + 1e-12).contains(&nd));
            }
        }
    }
}
