use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Grads, ParamId, ParamStore};

/// Coordinates above which a parameter array is subsampled.
const FULL_CHECK_LIMIT: usize = 10_000;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over the coordinates that are not flat.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates where both gradients are below the finite-difference
    /// rounding floor; their relative error is noise over noise.
    pub flat: usize,
    /// The rounding floor `64·ε·max(1, |L|)/h` used to classify them.
    pub noise_floor: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares analytic gradients against central differences of `loss`.
///
/// Each parameter array with at most 10^4 entries is checked on every
/// coordinate; larger arrays on a seeded 1% subsample. The relative error of
/// a coordinate is `|g_ad − g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
///
/// A central difference of a loss of size `|L|` carries rounding noise of
/// order `ε·|L|/h`. Coordinates where both `|g_ad|` and `|g_fd|` are below
/// `64·ε·max(1, |L|)/h` (typically exact zeros from a symmetry of the loss)
/// are counted as flat instead of entering the maximum.
pub fn grad_check<F>(loss: F, params: &ParamStore<f64>, analytic: &Grads<f64>, h: f64, seed: u64) -> GradCheckReport
where
    F: Fn(&ParamStore<f64>) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let noise_floor = 64.0 * f64::EPSILON * loss(params).abs().max(1.0) / h;
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, flat: 0, noise_floor, worst: None };

    for (id, p) in params.iter() {
        let n = p.len();
        let coords: Vec<usize> = if n <= FULL_CHECK_LIMIT {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, n.div_ceil(100)).into_vec();
            c.sort_unstable();
            c
        };
        let ad = analytic.get(id);
        for j in coords {
            let g_ad = ad.map_or(0.0, |g| g[j]);
            let g_fd = central_difference(&loss, &mut work, id, j, h);
            report.checked += 1;
            if g_ad.abs() <= noise_floor && g_fd.abs() <= noise_floor {
                report.flat += 1;
                continue;
            }
            let err = (g_ad - g_fd).abs() / (g_ad.abs() + g_fd.abs()).max(1e-8);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((p.name.clone(), j));
            }
        }
    }
    report
}

fn central_difference<F>(loss: &F, work: &mut ParamStore<f64>, id: ParamId, j: usize, h: f64) -> f64
where
    F: Fn(&ParamStore<f64>) -> f64,
{
    let orig = work.get(id).data[j];
    work.get_mut(id).data[j] = orig + h;
    let up = loss(work);
    work.get_mut(id).data[j] = orig - h;
    let down = loss(work);
    work.get_mut(id).data[j] = orig;
    (up - down) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    #[test]
    fn quadratic_is_exact() {
        let mut s = ParamStore::new();
        let w = s.add("w", 1, 4, vec![0.3, -1.2, 2.0, 0.01]);
        let wtw = |store: &ParamStore<f64>| store.get(w).data.iter().map(|x| x * x).sum::<f64>();
        let mut g = Grads::empty(1);
        g.set(w, s.get(w).data.iter().map(|x| 2.0 * x).collect());
        let r = grad_check(wtw, &s, &g, 1e-4, 0);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn tape_composition_passes() {
        let mut s = ParamStore::new();
        let a = s.add("a", 2, 3, vec![0.1, -0.4, 0.7, 0.2, 0.5, -0.3]);
        let b = s.add("b", 3, 1, vec![0.9, -0.2, 0.4]);
        let tau = s.add("tau", 1, 1, vec![1.7]);
        let loss = |store: &ParamStore<f64>| -> (f64, Grads<f64>) {
            let mut t = Tape::new(store);
            let (va, vb, vt) = (t.param(a), t.param(b), t.param(tau));
            let h = t.matmul(va, vb).unwrap();
            let e = t.exp(h).unwrap();
            let sg = t.sigmoid(e).unwrap();
            let d = t.div_clamped(sg, vt, 1e-3).unwrap();
            let c = t.concat(&[d, h]).unwrap();
            let lse = t.logsumexp(c).unwrap();
            let m = t.mean(c).unwrap();
            let pl = t.plackett_luce(h, vec![0..2]).unwrap();
            let bp = t.bpr(d, vec![(1, 0)]).unwrap();
            let l = t.lin_comb(vec![(lse, 1.0), (m, 0.5), (pl, 2.0), (bp, 1.0)]).unwrap();
            (t.scalar(l), t.backward(l).unwrap())
        };
        let (_, g) = loss(&s);
        let r = grad_check(|st| loss(st).0, &s, &g, 1e-4, 0);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    /// A logsumexp over shifted scores is invariant to the shared shift, so
    /// its gradient is exactly zero; that coordinate must not fail the check.
    #[test]
    fn symmetric_zero_gradient_is_flat() {
        let mut s = ParamStore::new();
        let x = s.add("x", 1, 3, vec![0.3f64, -1.1, 0.8]);
        let shift = s.add("shift", 1, 1, vec![0.37]);
        let f = |st: &ParamStore<f64>| {
            let c = st.get(shift).data[0];
            let v: Vec<f64> = st.get(x).data.iter().map(|a| a + c).collect();
            let lse = v.iter().map(|a| a.exp()).sum::<f64>().ln();
            lse - v.iter().sum::<f64>() / 3.0 + 100.0
        };
        let sm: Vec<f64> = {
            let e: Vec<f64> = s.get(x).data.iter().map(|a: &f64| a.exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|a| a / z - 1.0 / 3.0).collect()
        };
        let mut g = Grads::empty(2);
        g.set(x, sm);
        g.set(shift, vec![0.0]);
        let r = grad_check(f, &s, &g, 1e-5, 0);
        assert_eq!(r.flat, 1, "{r:?}");
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn small_wrong_gradient_is_still_caught() {
        let mut s = ParamStore::new();
        let w = s.add("w", 1, 1, vec![0.5]);
        let f = |st: &ParamStore<f64>| 1e-6 * st.get(w).data[0];
        let mut g = Grads::empty(1);
        g.set(w, vec![0.0]);
        let r = grad_check(f, &s, &g, 1e-4, 0);
        assert_eq!(r.flat, 0);
        assert!(r.max_rel_error > 0.9, "{r:?}");
    }
}
