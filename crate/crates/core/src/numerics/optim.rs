use serde::{Deserialize, Serialize};

use super::{Grads, ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// AdamW with bias correction and decoupled weight decay:
/// `p ← p − lr·wd·p − lr·m̂/(√v̂ + eps)`.
///
/// Parameters without a gradient in a step are updated as if their gradient
/// were zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub hyper: AdamWHyper,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(store: &ParamStore<T>, hyper: AdamWHyper) -> Self {
        let zeros = |_| store.iter().map(|(_, p)| vec![T::zero(); p.len()]).collect();
        Self { hyper, step: 0, m: zeros(()), v: zeros(()) }
    }

    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>) {
        self.step += 1;
        let h = self.hyper;
        let t = self.step as i32;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);
        let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - h.beta1), T::of(1.0 - h.beta2));
        let decay = T::of(1.0 - h.lr * h.weight_decay);
        let step_size = T::of(h.lr / bc1);
        let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
        let eps = T::of(h.eps);

        for i in 0..store.len() {
            let id = super::ParamId(i);
            let grad = grads.get(id);
            let p = &mut store.get_mut(id).data;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let g = grad.map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + one_b1 * g;
                v[j] = b2 * v[j] + one_b2 * g * g;
                let denom = v[j].sqrt() * inv_sqrt_bc2 + eps;
                p[j] = p[j] * decay - step_size * m[j] / denom;
            }
        }
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut Grads<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(x: f64) -> (ParamStore<f64>, super::super::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", 1, 1, vec![x]);
        (s, id)
    }

    #[test]
    fn zero_grad_no_decay_leaves_params() {
        let (mut s, id) = one_param(0.75);
        let mut opt = AdamW::new(&s, AdamWHyper { weight_decay: 0.0, ..Default::default() });
        let mut g = Grads::empty(1);
        g.set(id, vec![0.0]);
        opt.update(&mut s, &g);
        assert_eq!(s.get(id).data[0], 0.75);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let (mut s, id) = one_param(0.0);
        let mut opt = AdamW::new(&s, AdamWHyper { weight_decay: 0.0, ..Default::default() });
        let mut g = Grads::empty(1);
        let grad = 0.37;
        g.set(id, vec![grad]);
        opt.update(&mut s, &g);
        // m̂ = g, v̂ = g² at t = 1.
        let want = -1e-3 * grad / (grad + 1e-8);
        assert!((s.get(id).data[0] - want).abs() < 1e-15);
    }

    #[test]
    fn two_step_hand_trace() {
        // g = 1 both steps, lr = 1e-3, wd = 0, starting at p = 0.
        // t=1: m=0.1, v=0.001, m̂=1, v̂=1 → p = −1e-3/(1+1e-8)
        // t=2: m=0.19, v=0.001999, m̂=0.19/0.19=1, v̂=0.001999/0.001999=1
        //      → p = 2·(−1e-3/(1+1e-8))
        let (mut s, id) = one_param(0.0);
        let mut opt = AdamW::new(&s, AdamWHyper { weight_decay: 0.0, ..Default::default() });
        let mut g = Grads::empty(1);
        g.set(id, vec![1.0]);
        opt.update(&mut s, &g);
        let p1 = -1e-3 / (1.0 + 1e-8);
        assert!((s.get(id).data[0] - p1).abs() < 1e-15);
        opt.update(&mut s, &g);
        assert!((s.get(id).data[0] - 2.0 * p1).abs() < 1e-15);
        assert_eq!(opt.step, 2);
    }

    #[test]
    fn decoupled_decay_applies_without_gradient() {
        let (mut s, _) = one_param(2.0);
        let mut opt = AdamW::new(&s, AdamWHyper::default());
        opt.update(&mut s, &Grads::empty(1));
        assert!((s.get(super::super::ParamId(0)).data[0] - 2.0 * (1.0 - 1e-7)).abs() < 1e-15);
    }

    #[test]
    fn clipping() {
        let mut g = Grads::<f64>::empty(2);
        g.set(super::super::ParamId(0), vec![0.6, 0.8]);
        assert!((clip_global_norm(&mut g, 5.0) - 1.0).abs() < 1e-12);
        assert_eq!(g.get(super::super::ParamId(0)).unwrap(), &[0.6, 0.8]);

        g.set(super::super::ParamId(1), vec![30.0, 40.0]);
        g.set(super::super::ParamId(0), vec![0.0, 0.0]);
        clip_global_norm(&mut g, 5.0);
        assert!((g.global_norm() - 5.0).abs() < 1e-6);

        let mut z = Grads::<f64>::empty(1);
        z.set(super::super::ParamId(0), vec![0.0; 3]);
        assert_eq!(clip_global_norm(&mut z, 5.0), 0.0);
        assert!(z.all_finite());
    }
}
