//! Scalar ranking losses, pair sampling and their weighted combination.
//!
//! The functions here work on plain numbers and serve as the reference for
//! the tape-based batch loss used during training.

use rand::Rng;

use super::{Result, TrainError};
use crate::numerics::objectives;

/// Draws before a tied pair is given up.
const TIE_RETRIES: usize = 10;

/// `−ln σ(s_plus − s_minus)`, stable for any margin.
pub fn bpr_loss(s_plus: f64, s_minus: f64) -> f64 {
    objectives::bpr(s_plus, s_minus)
}

/// Mean Plackett–Luce negative log-likelihood of a list given best first.
pub fn plackett_luce_loss(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(TrainError::Contract("Plackett–Luce loss of an empty list".into()));
    }
    Ok(objectives::plackett_luce(scores))
}

pub fn pointwise_loss(z_hat: &[f64], z: &[f64]) -> Result<f64> {
    if z_hat.len() != z.len() {
        return Err(TrainError::Contract(format!("{} predictions for {} targets", z_hat.len(), z.len())));
    }
    if z.is_empty() {
        return Err(TrainError::Contract("pointwise loss of an empty list".into()));
    }
    Ok(objectives::mse(z_hat, z))
}

/// Samples up to `count` (better, worse) position pairs from a group whose
/// standardized scores are listed best first.
///
/// The anchor is uniform over `0..M−1` and the negative uniform over the
/// positions below it. A pair with equal scores is redrawn up to ten times
/// and then skipped, so fully tied groups yield nothing.
pub fn sample_pairs<R: Rng + ?Sized>(z_by_rank: &[f64], rng: &mut R, count: usize) -> Vec<(usize, usize)> {
    let m = z_by_rank.len();
    let mut out = Vec::with_capacity(count);
    if m < 2 {
        return out;
    }
    for _ in 0..count {
        for _ in 0..=TIE_RETRIES {
            let i = rng.random_range(0..m - 1);
            let j = rng.random_range(i + 1..m);
            if z_by_rank[i] != z_by_rank[j] {
                out.push((i, j));
                break;
            }
        }
    }
    out
}

/// Loss weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub list: f64,
    pub pair: f64,
    pub point: f64,
}

/// Reference value of the combined objective:
/// `λ_list·mean_g PL(g) + λ_pair·mean_p BPR(p) + λ_point·MSE(list members)`.
///
/// `lists` holds composed scores best first; `points` holds `(ẑ, z)` for the
/// members of those lists.
pub fn total_loss(lists: &[Vec<f64>], pairs: &[(f64, f64)], points: &[(f64, f64)], w: LossWeights) -> Result<f64> {
    if lists.is_empty() && pairs.is_empty() {
        return Err(TrainError::Contract("both the listwise and the pairwise batch are empty".into()));
    }
    let mut total = 0.0;
    if !lists.is_empty() {
        let pl = lists.iter().map(|l| plackett_luce_loss(l)).sum::<Result<f64>>()?;
        total += w.list * pl / lists.len() as f64;
        let (zh, z): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
        total += w.point * pointwise_loss(&zh, &z)?;
    }
    if !pairs.is_empty() {
        total += w.pair * pairs.iter().map(|&(p, n)| bpr_loss(p, n)).sum::<f64>() / pairs.len() as f64;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::{bpr_loss, plackett_luce_loss, pointwise_loss, sample_pairs, total_loss, LossWeights, TrainError};
    use proptest::prelude::{prop, prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// −log P(identity) under Plackett–Luce by normalizing over every
    /// permutation of the list.
    fn pl_permutation_oracle(s: &[f64]) -> f64 {
        fn perms(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(n - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, n - 1);
                    out.push(q);
                }
            }
            out
        }
        let unnorm = |order: &[usize]| -> f64 {
            let mut prob = 1.0;
            for k in 0..order.len() {
                let denom: f64 = order[k..].iter().map(|&i| s[i].exp()).sum();
                prob *= s[order[k]].exp() / denom;
            }
            prob
        };
        let all = perms(s.len());
        let z: f64 = all.iter().map(|p| unnorm(p)).sum();
        let identity: Vec<usize> = (0..s.len()).collect();
        // Sequential-choice probabilities already sum to one; the division
        // guards the oracle against its own rounding.
        -(unnorm(&identity) / z).ln() / s.len() as f64
    }

    #[test]
    fn bpr_closed_forms() {
        assert!((bpr_loss(0.0, 0.0) - 2f64.ln()).abs() < 1e-12);
        assert!((bpr_loss(2.0, 0.0) - (1.0 + (-2f64).exp()).ln()).abs() < 1e-12);
        assert!((bpr_loss(2.0, 0.0) - 0.126928).abs() < 1e-6);
        let big = bpr_loss(1000.0, 0.0);
        assert!(big.is_finite() && big >= 0.0 && big < 1e-300);
        assert!((bpr_loss(0.0, 1000.0) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn plackett_luce_closed_forms() {
        assert_eq!(plackett_luce_loss(&[4.2]).unwrap(), 0.0);
        assert!((plackett_luce_loss(&[1.0, 1.0]).unwrap() - 2f64.ln() / 2.0).abs() < 1e-12);
        let e = std::f64::consts::E;
        let want = ((e.powi(3) + e.powi(2) + e).ln() - 3.0 + (e.powi(2) + e).ln() - 2.0) / 3.0;
        let got = plackett_luce_loss(&[3.0, 2.0, 1.0]).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - pl_permutation_oracle(&[3.0, 2.0, 1.0])).abs() < 1e-12);
        assert!(matches!(plackett_luce_loss(&[]), Err(TrainError::Contract(_))));
    }

    #[test]
    fn pointwise_examples() {
        assert_eq!(pointwise_loss(&[0.5, 1.0], &[0.5, 1.0]).unwrap(), 0.0);
        assert_eq!(pointwise_loss(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert!(pointwise_loss(&[0.0], &[1.0, 2.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let mut s = 0.0;
        for i in 0..50 {
            s += (a[i] - b[i]) * (a[i] - b[i]);
        }
        assert!((pointwise_loss(&a, &b).unwrap() - s / 50.0).abs() < 1e-7);
    }

    #[test]
    fn pair_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!(sample_pairs(&[1.0, 0.0], &mut rng, 20).iter().all(|&p| p == (0, 1)));
        assert!(sample_pairs(&[0.5; 6], &mut rng, 50).is_empty());
        assert!(sample_pairs(&[0.5], &mut rng, 5).is_empty());

        let z = [2.0, 1.0, 0.0, -1.0, -2.0];
        let n = 100_000;
        let pairs = sample_pairs(&z, &mut rng, n);
        assert_eq!(pairs.len(), n);
        let p: f64 = 0.25;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for anchor in 0..4 {
            let c = pairs.iter().filter(|&&(i, _)| i == anchor).count() as f64;
            assert!((c - n as f64 * p).abs() <= 3.0 * sigma, "anchor {anchor}: {c}");
        }
        assert!(pairs.iter().all(|&(i, j)| i < j && j < 5));
    }

    #[test]
    fn total_loss_composition() {
        let lists = vec![vec![1.0, 0.5, -0.2], vec![0.3, 0.3]];
        let pairs = vec![(0.4, 0.1), (-1.0, 2.0)];
        let points = vec![(0.1, 1.0), (0.0, 0.0), (0.2, -1.0), (0.0, 0.5), (0.1, -0.5)];
        let w = LossWeights { list: 0.5, pair: 1.0, point: 0.1 };
        let got = total_loss(&lists, &pairs, &points, w).unwrap();
        let pl = (plackett_luce_loss(&lists[0]).unwrap() + plackett_luce_loss(&lists[1]).unwrap()) / 2.0;
        let bpr = (bpr_loss(0.4, 0.1) + bpr_loss(-1.0, 2.0)) / 2.0;
        let (zh, z): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
        assert!((got - (0.5 * pl + bpr + 0.1 * pointwise_loss(&zh, &z).unwrap())).abs() < 1e-12);

        let list_only = LossWeights { list: 1.0, pair: 0.0, point: 0.0 };
        assert!((total_loss(&lists, &pairs, &points, list_only).unwrap() - pl).abs() < 1e-15);
        let zero = LossWeights { list: 0.0, pair: 0.0, point: 0.0 };
        assert_eq!(total_loss(&lists, &pairs, &points, zero).unwrap(), 0.0);
        assert!(matches!(total_loss(&[], &[], &[], w), Err(TrainError::Contract(_))));
    }

    proptest! {
        #[test]
        fn shift_invariance(s in prop::collection::vec(-5.0f64..5.0, 1..12), c in -50.0f64..50.0) {
            let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
            prop_assert!((plackett_luce_loss(&s).unwrap() - plackett_luce_loss(&shifted).unwrap()).abs() < 1e-6);
            if s.len() >= 2 {
                prop_assert!((bpr_loss(s[0], s[1]) - bpr_loss(s[0] + c, s[1] + c)).abs() < 1e-6);
            }
            prop_assert!(plackett_luce_loss(&s).unwrap() >= 0.0);
        }

        #[test]
        fn plackett_luce_matches_permutation_oracle(s in prop::collection::vec(-3.0f64..3.0, 1..6)) {
            prop_assert!((plackett_luce_loss(&s).unwrap() - pl_permutation_oracle(&s)).abs() < 1e-9);
        }
    }
}
