use std::collections::BTreeMap;

use crate::autodiff::{ParamId, ParamStore};
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept per parameter, indexed like the store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(store: &ParamStore<F>, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        Adam { config, step: 0, first: zeros(), second: zeros() }
    }

    /// Restores a saved state; moment shapes must match the store.
    pub fn from_parts(
        store: &ParamStore<F>,
        config: AdamConfig,
        step: u64,
        first: Vec<Tensor<F>>,
        second: Vec<Tensor<F>>,
    ) -> Result<Self> {
        if first.len() != store.len() || second.len() != store.len() {
            return Err(invalid("optimizer state does not match the parameter count"));
        }
        for ((id, name, p), (m, v)) in store.iter().zip(first.iter().zip(&second)) {
            if m.shape() != p.shape() || v.shape() != p.shape() {
                return Err(shape_err("adam", format!("moments of {name} ({id:?}) do not match {:?}", p.shape())));
            }
        }
        Ok(Adam { config, step, first, second })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor<F>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<F>] {
        &self.second
    }

    /// One update. Parameters without an entry in `grads` are treated as having zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &BTreeMap<ParamId, Tensor<F>>) -> Result<()> {
        for (id, g) in grads {
            if !g.all_finite() {
                return Err(Error::Diverged(format!("non-finite gradient for {}", store.name(*id))));
            }
            if g.shape() != store.get(*id).shape() {
                return Err(shape_err("adam", format!("gradient {:?} for {}", g.shape(), store.name(*id))));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let correct1 = 1.0 - c.beta1.powi(t);
        let correct2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (F::from_f64_lossy(c.beta1), F::from_f64_lossy(c.beta2));
        let (one, eps) = (F::one(), F::from_f64_lossy(c.eps));
        let lr = F::from_f64_lossy(c.lr);
        let (k1, k2) = (F::from_f64_lossy(1.0 / correct1), F::from_f64_lossy(1.0 / correct2));
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let m = &mut self.first[id.0];
            let v = &mut self.second[id.0];
            let p = store.get_mut(id);
            let g = grads.get(&id);
            for i in 0..p.len() {
                let gi = g.map_or(F::zero(), |g| g.data()[i]);
                let mi = b1 * m.data()[i] + (one - b1) * gi;
                let vi = b2 * v.data()[i] + (one - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let update = lr * (mi * k1) / ((vi * k2).sqrt() + eps);
                p.data_mut()[i] = p.data()[i] - update;
            }
        }
        Ok(())
    }
}

/// Global L2 norm over all gradient tensors.
pub fn global_norm<F: Scalar>(grads: &BTreeMap<ParamId, Tensor<F>>) -> f64 {
    grads
        .values()
        .map(|g| g.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients by `max_norm / norm` when the global norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradient_norm<F: Scalar>(grads: &mut BTreeMap<ParamId, Tensor<F>>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = F::from_f64_lossy(max_norm / norm);
        for g in grads.values_mut() {
            g.scale_assign(s);
        }
    }
    norm
}

/// Outcome of one epoch under [`PlateauSchedule`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleStep {
    pub lr: f64,
    pub improved: bool,
    /// The learning rate was just decayed; the best checkpoint should be restored.
    pub reload_best: bool,
}

/// Decays the learning rate when the dev score has not improved for
/// `patience` epochs; each decay restarts the window.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauSchedule {
    pub patience: usize,
    pub factor: f64,
    lr: f64,
    best: Option<f64>,
    stale: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, patience: usize, factor: f64) -> Self {
        PlateauSchedule { patience, factor, lr, best: None, stale: 0 }
    }

    pub fn restore(lr: f64, patience: usize, factor: f64, best: Option<f64>, stale: usize) -> Self {
        PlateauSchedule { patience, factor, lr, best, stale }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn stale(&self) -> usize {
        self.stale
    }

    pub fn observe(&mut self, score: f64) -> ScheduleStep {
        let improved = self.best.map_or(true, |b| score > b);
        let mut reload_best = false;
        if improved {
            self.best = Some(score);
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= self.factor;
                self.stale = 0;
                reload_best = true;
            }
        }
        ScheduleStep { lr: self.lr, improved, reload_best }
    }
}
