use std::collections::BTreeMap;

use super::graph::Gradients;
use super::params::{AdamState, ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use super::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW) weight decay; 0 gives plain Adam.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self { weight_decay, ..Self::adam(lr) }
    }
}

/// One bias-corrected Adam step on raw slices. `decay` enables the decoupled
/// weight-decay term.
pub fn adam_update<T: Real>(value: &mut [T], grad: &[T], state: &mut AdamState<T>, cfg: &AdamConfig, decay: bool) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let wd = if decay { cfg.lr * cfg.weight_decay } else { 0.0 };
    for (((w, &g), m), v) in value.iter_mut().zip(grad).zip(state.m.data_mut()).zip(state.v.data_mut()) {
        let g = g.f64();
        let mn = b1 * m.f64() + (1.0 - b1) * g;
        let vn = b2 * v.f64() + (1.0 - b2) * g * g;
        *m = T::lit(mn);
        *v = T::lit(vn);
        let step = cfg.lr * (mn / bc1) / ((vn / bc2).sqrt() + cfg.eps);
        *w = T::lit(w.f64() - wd * w.f64() - step);
    }
}

/// Adam / AdamW over a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Apply one update. Gradients of parameters bound more than once are
    /// summed. A non-finite gradient aborts before any parameter changes.
    pub fn step<T: Real>(&self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        let mut merged: BTreeMap<ParamId, Tensor<T>> = BTreeMap::new();
        for (id, g) in grads.params() {
            match merged.get_mut(&id) {
                Some(acc) => acc.add_assign(g),
                None => {
                    merged.insert(id, g.clone());
                }
            }
        }
        for (&id, g) in &merged {
            if !g.is_finite() {
                return Err(NnError::NonFiniteGradient(store.param(id).name.clone()));
            }
        }
        for (id, g) in merged {
            if !store.param(id).trainable {
                continue;
            }
            let shape = store.get(id).shape().to_vec();
            let p = store.param_mut(id);
            let decay = p.decay;
            let mut state = p.adam.take().unwrap_or_else(|| AdamState::new(&shape));
            adam_update(store.value_mut(id).data_mut(), g.data(), &mut state, &self.cfg, decay);
            store.param_mut(id).adam = Some(state);
        }
        Ok(())
    }
}

/// One-cycle schedule: linear warmup from `peak/25` to `peak` over the first
/// 30% of steps, then cosine decay to `peak/1e4`.
pub fn one_cycle_lr(step: usize, total_steps: usize, peak: f64) -> f64 {
    let start = peak / 25.0;
    let end = peak / 1e4;
    if total_steps == 0 {
        return peak;
    }
    let step = step.min(total_steps) as f64;
    let warm = 0.3 * total_steps as f64;
    if step <= warm {
        if warm == 0.0 {
            return peak;
        }
        return start + (peak - start) * step / warm;
    }
    let progress = (step - warm) / (total_steps as f64 - warm);
    end + (peak - end) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
