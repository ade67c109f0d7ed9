//! AdamW and a warmup + reduce-on-plateau learning-rate schedule.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::float::Float;
use crate::params::{ParamId, ParamStore};
use crate::tape::Gradients;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            clip_norm: Some(1.0),
        }
    }
}

/// Decoupled-weight-decay Adam. Decay is skipped for rank-1 tensors (biases, norm affine).
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    state: HashMap<ParamId, (Array<T>, Array<T>)>,
    t: u64,
}

impl<T: Float> AdamW<T> {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            state: HashMap::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. Returns the pre-clip global gradient norm.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> f64 {
        self.t += 1;
        let mut ids: Vec<ParamId> = grads
            .params()
            .map(|(id, _)| id)
            .filter(|&id| store.is_trainable(id))
            .collect();
        ids.sort();
        let norm = ids
            .iter()
            .map(|&id| {
                grads
                    .param(id)
                    .unwrap()
                    .data()
                    .iter()
                    .map(|v| v.to_f64c().powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt();
        let clip = match self.cfg.clip_norm {
            Some(c) if norm > c && norm.is_finite() => c / norm,
            _ => 1.0,
        };
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (T::from_f64c(c.beta1), T::from_f64c(c.beta2));
        let (ob1, ob2) = (T::one() - b1, T::one() - b2);
        let step = T::from_f64c(lr / bc1);
        let inv_sqrt_bc2 = T::from_f64c(1.0 / bc2.sqrt());
        let eps = T::from_f64c(c.eps);
        let clip = T::from_f64c(clip);
        for id in ids {
            let g = grads.param(id).unwrap();
            let p = store.get_mut(id);
            let decay = if p.ndim() > 1 && p.len() > 1 {
                T::from_f64c(1.0 - lr * c.weight_decay)
            } else {
                T::one()
            };
            let (m, v) = self
                .state
                .entry(id)
                .or_insert_with(|| (Array::zeros(g.shape()), Array::zeros(g.shape())));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gv = gv * clip;
                *mv = b1 * *mv + ob1 * gv;
                *vv = b2 * *vv + ob2 * gv * gv;
                *pv = *pv * decay - step * *mv / ((*vv).sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        norm
    }
}

/// Linear warmup followed by a constant rate that is cut by `factor`
/// after validation loss fails to improve for `patience` evaluations in a row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_steps: u64,
    pub factor: f64,
    pub patience: u32,
    pub min_lr: f64,
    scale: f64,
    best: f64,
    bad: u32,
}

impl LrSchedule {
    pub fn new(base: f64, warmup_steps: u64, factor: f64, patience: u32) -> Self {
        Self {
            base,
            warmup_steps,
            factor,
            patience,
            min_lr: base * 1e-3,
            scale: 1.0,
            best: f64::INFINITY,
            bad: 0,
        }
    }

    /// Rate for the 0-based optimizer step `step`.
    pub fn lr(&self, step: u64) -> f64 {
        let w = if self.warmup_steps == 0 || step >= self.warmup_steps {
            1.0
        } else {
            (step + 1) as f64 / self.warmup_steps as f64
        };
        (self.base * self.scale).max(self.min_lr) * w
    }

    /// Reports a validation loss; returns true when the rate was reduced.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best * (1.0 - 1e-4) {
            self.best = val_loss;
            self.bad = 0;
            return false;
        }
        self.bad += 1;
        if self.bad >= self.patience {
            self.scale *= self.factor;
            self.bad = 0;
            return true;
        }
        false
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn adamw_minimizes_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Array::from_vec(&[2, 2], vec![3.0, -2.0, 1.0, 4.0]));
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            clip_norm: None,
            ..Default::default()
        });
        for _ in 0..2000 {
            let tape = Tape::new();
            let w = tape.param(id, store.rc(id), true);
            let loss = w.square().sum();
            let g = tape.backward(loss);
            opt.step(&mut store, &g, 0.01);
        }
        assert!(store.get(id).max_abs() < 1e-2, "{:?}", store.get(id).data());
    }

    #[test]
    fn schedule_warmup_and_plateau() {
        let mut s = LrSchedule::new(1e-3, 10, 0.5, 2);
        assert!((s.lr(0) - 1e-4).abs() < 1e-12);
        assert!((s.lr(9) - 1e-3).abs() < 1e-12);
        assert!(!s.observe(1.0));
        assert!(!s.observe(1.0));
        assert!(s.observe(1.0));
        assert!((s.lr(100) - 5e-4).abs() < 1e-12);
        assert!(!s.observe(0.5));
    }
}
