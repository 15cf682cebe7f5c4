//! AdamW with per-parameter learning rates.

use std::collections::BTreeMap;

use crate::params::ParamStore;
use crate::tensor::Tensor;

type LrFn = Box<dyn Fn(&str) -> f64 + Send + Sync>;

pub struct AdamW {
    lr: LrFn,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Multiplies every learning rate; schedules set it before each step.
    pub lr_scale: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamW {
    /// `lr` maps a parameter name to its learning rate.
    pub fn new(lr: impl Fn(&str) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            lr: Box::new(lr),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            lr_scale: 1.0,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn with_constant_lr(lr: f64) -> Self {
        Self::new(move |_| lr)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn lr_for(&self, name: &str) -> f64 {
        (self.lr)(name)
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let Some(p) = store.get_mut(name) else {
                continue;
            };
            let lr = (self.lr)(name) * self.lr_scale;
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.rows(), g.cols()), Tensor::zeros(g.rows(), g.cols())));
            let decay = 1.0 - lr * self.weight_decay;
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv = *pv * decay - lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Half-cosine decay from 1 at `step` 0 towards 0 at `total`.
pub fn cosine_scale(step: usize, total: usize) -> f64 {
    if total == 0 {
        return 1.0;
    }
    0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.values_mut() {
            g.scale_in_place(k);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adamw_descends_a_quadratic() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::row(vec![3.0, -2.0]));
        let mut opt = AdamW::with_constant_lr(0.1);
        opt.weight_decay = 0.0;
        for _ in 0..200 {
            let x = store.get("x").unwrap().clone();
            let g = x.map(|v| 2.0 * v);
            let grads = BTreeMap::from([("x".to_string(), g)]);
            opt.step(&mut store, &grads);
        }
        let x = store.get("x").unwrap();
        assert!(x.data().iter().all(|v| v.abs() < 0.05), "{x:?}");
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut grads = BTreeMap::from([("a".to_string(), Tensor::row(vec![3.0, 4.0]))]);
        let before = clip_grad_norm(&mut grads, 1.0);
        assert!((before - 5.0).abs() < 1e-12);
        let g = &grads["a"];
        assert!((g.data()[0] - 0.6).abs() < 1e-12 && (g.data()[1] - 0.8).abs() < 1e-12);
    }
}
