use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            clip_norm: Some(5.0),
            steps: 2000,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

fn check_finite(grads: &Grads, step: usize) -> Result<()> {
    if grads.is_finite() {
        Ok(())
    } else {
        Err(Error::Training {
            step,
            message: "non-finite gradient".into(),
        })
    }
}

fn clip_factor(grads: &Grads, clip: Option<f64>) -> f64 {
    match clip {
        Some(c) => {
            let n = grads.norm();
            if n > c {
                c / n
            } else {
                1.0
            }
        }
        None => 1.0,
    }
}

/// Plain gradient descent: `theta -= lr * g`.
pub fn sgd_step(store: &mut ParamStore, grads: &Grads, learning_rate: f64, step: usize) -> Result<()> {
    check_finite(grads, step)?;
    for (id, g) in store.ids().collect::<Vec<_>>().into_iter().zip(grads.iter()) {
        store.value_mut(id).scaled_add(-learning_rate, g);
    }
    Ok(())
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    first: Grads,
    second: Grads,
    t: i32,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: &OptimizerConfig) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: cfg.clip_norm,
            first: Grads::zeros_like(store),
            second: Grads::zeros_like(store),
            t: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, step: usize) -> Result<()> {
        check_finite(grads, step)?;
        let factor = clip_factor(grads, self.clip_norm);
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let g = grads.get(id);
            let mut m = self.first.get(id).clone();
            let mut v = self.second.get(id).clone();
            ndarray::Zip::from(&mut m)
                .and(&mut v)
                .and(g)
                .for_each(|m, v, &g| {
                    let g = g * factor;
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                });
            let (lr, eps) = (self.learning_rate, self.eps);
            ndarray::Zip::from(store.value_mut(id))
                .and(&m)
                .and(&v)
                .for_each(|p, &m, &v| *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps));
            *self.first.get_mut(id) = m;
            *self.second.get_mut(id) = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{Graph, Init};
    use ndarray::array;

    fn bowl() -> (ParamStore, crate::diff::ParamId) {
        let mut s = ParamStore::new(0);
        let id = s.add("theta", (1, 3), Init::Zeros);
        s.set(id, array![[2.0, -1.0, 0.5]]);
        (s, id)
    }

    fn loss_and_grad(s: &ParamStore, id: crate::diff::ParamId) -> (f64, Grads) {
        let mut g = Graph::new(s);
        let t = g.param(id);
        let sq = g.square(t);
        let l = g.sum(sq);
        let mut grads = Grads::zeros_like(s);
        g.backward(l, &mut grads);
        (g.scalar(l), grads)
    }

    #[test]
    fn sgd_decreases_quadratic_monotonically() {
        let (mut s, id) = bowl();
        let mut last = f64::INFINITY;
        for step in 0..100 {
            let (l, g) = loss_and_grad(&s, id);
            assert!(l < last);
            last = l;
            sgd_step(&mut s, &g, 0.05, step).unwrap();
        }
    }

    #[test]
    fn adam_decreases_quadratic_monotonically() {
        let (mut s, id) = bowl();
        let mut opt = Adam::new(&s, &OptimizerConfig { learning_rate: 0.01, ..OptimizerConfig::default() });
        let mut last = f64::INFINITY;
        for step in 0..100 {
            let (l, g) = loss_and_grad(&s, id);
            assert!(l < last, "step {step}: {l} >= {last}");
            last = l;
            opt.step(&mut s, &g, step).unwrap();
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, id) = bowl();
        let before = s.value(id).clone();
        let zero = Grads::zeros_like(&s);
        sgd_step(&mut s, &zero, 0.1, 0).unwrap();
        assert_eq!(s.value(id), &before);
    }

    #[test]
    fn non_finite_gradient_reports_step() {
        let (mut s, id) = bowl();
        let mut g = Grads::zeros_like(&s);
        g.accumulate(id, &array![[f64::NAN, 0.0, 0.0]]);
        let err = Adam::new(&s, &OptimizerConfig::default()).step(&mut s, &g, 17).unwrap_err();
        assert!(matches!(err, Error::Training { step: 17, .. }));
    }

    #[test]
    fn trajectories_are_reproducible() {
        let run = || {
            let (mut s, id) = bowl();
            let mut opt = Adam::new(&s, &OptimizerConfig::default());
            let mut traj = Vec::new();
            for step in 0..20 {
                let (_, g) = loss_and_grad(&s, id);
                opt.step(&mut s, &g, step).unwrap();
                traj.push(s.value(id).clone());
            }
            traj
        };
        assert_eq!(run(), run());
    }
}
