use serde::{Deserialize, Serialize};

use crate::neural::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    Sgd,
    #[default]
    Adam,
}

/// Descends a loss gradient with plain SGD or Adam (beta1 0.9, beta2 0.999,
/// eps 1e-8).
#[derive(Debug, Clone)]
pub struct Optimizer {
    rule: StepRule,
    learning_rate: f64,
    t: u64,
    m: ParamStore,
    v: ParamStore,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(rule: StepRule, learning_rate: f64, like: &ParamStore) -> Self {
        Self {
            rule,
            learning_rate,
            t: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    /// Applies one step to every parameter for which `frozen` is false.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore, frozen: impl Fn(ParamId) -> bool) {
        self.t += 1;
        let lr = self.learning_rate;
        let ids: Vec<ParamId> = params.ids().collect();
        match self.rule {
            StepRule::Sgd => {
                for id in ids.into_iter().filter(|&id| !frozen(id)) {
                    let g = grads.get(id).data();
                    params
                        .get_mut(id)
                        .data_mut()
                        .iter_mut()
                        .zip(g)
                        .for_each(|(p, g)| *p -= lr * g);
                }
            }
            StepRule::Adam => {
                let c1 = 1.0 - BETA1.powi(self.t as i32);
                let c2 = 1.0 - BETA2.powi(self.t as i32);
                for id in ids.into_iter().filter(|&id| !frozen(id)) {
                    let g = grads.get(id).data();
                    let m = self.m.get_mut(id).data_mut();
                    let v = self.v.get_mut(id).data_mut();
                    let p = params.get_mut(id).data_mut();
                    for k in 0..p.len() {
                        m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                        v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                        p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + EPS);
                    }
                }
            }
        }
    }
}
