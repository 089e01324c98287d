use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Module;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction; state is keyed by parameter name so several
/// modules can share one optimizer under distinct prefixes.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter of `module`.
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M, prefix: &str, lr: f64) {
        self.step += 1;
        self.apply(module, prefix, lr, self.step);
    }

    /// Updates `module` using the step counter of the last [`Adam::step`],
    /// for optimizers shared across several modules within one iteration.
    pub fn step_more<M: Module + ?Sized>(&mut self, module: &mut M, prefix: &str, lr: f64) {
        let t = self.step.max(1);
        self.apply(module, prefix, lr, t);
    }

    fn apply<M: Module + ?Sized>(&mut self, module: &mut M, prefix: &str, lr: f64, t: u64) {
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(t as i32);
        let c2 = 1.0 - beta2.powi(t as i32);
        let state = &mut self.state;
        module.visit_mut(prefix, &mut |name, p| {
            if !p.trainable {
                return;
            }
            let s = state.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
            });
            for i in 0..p.value.len() {
                let g = p.grad[i];
                s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g;
                s.v[i] = beta2 * s.v[i] + (1.0 - beta2) * g * g;
                let m_hat = s.m[i] / c1;
                let v_hat = s.v[i] / c2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
}
