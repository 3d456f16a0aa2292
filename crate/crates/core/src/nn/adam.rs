use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use super::NnError;

/// AdamW with linear warmup to a constant learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.98, eps: 1e-9, weight_decay: 0.0, warmup_steps: 100, clip_norm: Some(1.0) }
    }
}

impl AdamConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: usize,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.ids().map(|id| Array2::zeros(store.get(id).raw_dim())).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    /// Applies one update and returns the learning rate used.
    pub fn update(&mut self, store: &mut ParamStore, grads: &Grads) -> f64 {
        let c = self.config;
        let lr = c.lr_at(self.step);
        let clip = match c.clip_norm {
            Some(max) => {
                let norm = grads.global_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads.get(id);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g * clip;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *p);
            });
        }
        lr
    }

    pub fn write_state<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        w.write_all(&(self.step as u64).to_le_bytes())?;
        for buf in self.m.iter().chain(&self.v) {
            for x in buf.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_state<R: Read>(&mut self, mut r: R) -> Result<(), NnError> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        self.step = u64::from_le_bytes(word) as usize;
        for buf in self.m.iter_mut().chain(self.v.iter_mut()) {
            for x in buf.iter_mut() {
                r.read_exact(&mut word)?;
                *x = f64::from_le_bytes(word);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut store = ParamStore::default();
        let id = store.add("w", array![[1.0, -2.0]]);
        let mut grads = Grads::zeros_like(&store);
        grads.accumulate(id, &array![[0.5, 0.5]]);
        let mut adam = Adam::new(AdamConfig { lr: 0.0, weight_decay: 0.01, ..Default::default() }, &store);
        adam.update(&mut store, &grads);
        assert_eq!(store.get(id), &array![[1.0, -2.0]]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::default();
        let id = store.add("w", array![[3.0, -4.0]]);
        let mut adam = Adam::new(AdamConfig { lr: 0.1, warmup_steps: 0, clip_norm: None, ..Default::default() }, &store);
        for _ in 0..500 {
            let mut grads = Grads::zeros_like(&store);
            let g = store.get(id) * 2.0;
            grads.accumulate(id, &g);
            adam.update(&mut store, &grads);
        }
        assert!(store.get(id).iter().all(|x| x.abs() < 1e-2));
    }
}
