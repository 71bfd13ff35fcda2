use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Adam, Graph, Grads, Init, Linear, Mlp, OptimizerConfig, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::model::{draw_noise, StepRecord, SIGMA_FLOOR};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub kl_weight: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            hidden: 64,
            layers: 2,
            kl_weight: 1.0,
            seed: 0,
        }
    }
}

/// Diagonal-Gaussian VAE over flat rows.
#[derive(Debug, Clone)]
pub struct Vae {
    pub config: VaeConfig,
    pub input: usize,
    pub params: ParamStore,
    encoder: Mlp,
    mu: Linear,
    sigma: Linear,
    decoder: Mlp,
    logvar: ParamId,
}

pub struct VaeVars {
    pub total: Var,
    pub nll: Var,
    pub kl: Var,
}

impl Vae {
    pub fn new(config: &VaeConfig, input: usize) -> Result<Self> {
        if config.latent_dim == 0 || input == 0 {
            return Err(Error::Config("VAE needs positive latent and input dims".into()));
        }
        let mut params = ParamStore::new(config.seed);
        let hidden = vec![config.hidden; config.layers];
        let trunk_out = if config.layers == 0 { input } else { config.hidden };
        let encoder = Mlp::new(&mut params, "vae.encoder", input, &hidden[..hidden.len().saturating_sub(1)], trunk_out);
        let mu = Linear::new(&mut params, "vae.mu", trunk_out, config.latent_dim, true);
        let sigma = Linear::new(&mut params, "vae.sigma", trunk_out, config.latent_dim, true);
        let decoder = Mlp::new(&mut params, "vae.decoder", config.latent_dim, &hidden, input);
        let logvar = params.add("vae.logvar", (1, input), Init::Zeros);
        Ok(Self {
            config: config.clone(),
            input,
            params,
            encoder,
            mu,
            sigma,
            decoder,
            logvar,
        })
    }

    /// `(mu, sigma)` handles for rows `x`.
    pub fn encode_vars(&self, g: &mut Graph, x: Var) -> (Var, Var) {
        let h = self.encoder.forward(g, x);
        let h = if self.config.layers == 0 { h } else { g.gelu(h) };
        let mu = self.mu.forward(g, h);
        let s = self.sigma.forward(g, h);
        let s = g.softplus(s);
        (mu, g.add_scalar(s, SIGMA_FLOOR))
    }

    pub fn loss(&self, g: &mut Graph, x: &Array2<f64>, eps: &Array2<f64>) -> Result<VaeVars> {
        if x.ncols() != self.input || eps.dim() != (x.nrows(), self.config.latent_dim) {
            return Err(Error::Shape("VAE input or noise has the wrong shape".into()));
        }
        let (n, d) = x.dim();
        let xv = g.input(x.clone());
        let (mu, sigma) = self.encode_vars(g, xv);
        let e = g.input(eps.clone());
        let se = g.mul(sigma, e);
        let z = g.add(mu, se);
        let pred = self.decoder.forward(g, z);

        let logvar = g.param(self.logvar);
        let diff = g.sub(xv, pred);
        let sq = g.square(diff);
        let neg = g.scale(logvar, -1.0);
        let prec = g.exp(neg);
        let weighted = g.mul_row(sq, prec);
        let fit = g.sum(weighted);
        let lv = g.sum(logvar);
        let lv = g.scale(lv, n as f64);
        let nll = g.add(fit, lv);
        let nll = g.add_scalar(nll, (n * d) as f64 * LN_2PI);
        let nll = g.scale(nll, 0.5);

        let mu2 = g.square(mu);
        let s2 = g.square(sigma);
        let ln_s2 = g.ln(s2);
        let a = g.add(mu2, s2);
        let a = g.sub(a, ln_s2);
        let a = g.add_scalar(a, -1.0);
        let kl = g.sum(a);
        let kl = g.scale(kl, 0.5);
        let wkl = g.scale(kl, self.config.kl_weight);
        let total = g.add(nll, wkl);
        Ok(VaeVars { total, nll, kl })
    }

    /// Latent means and standard deviations for rows `x`.
    pub fn encode(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        if x.ncols() != self.input {
            return Err(Error::Shape(format!("VAE expects {} columns, got {}", self.input, x.ncols())));
        }
        let mut g = Graph::new(&self.params);
        let xv = g.input(x.clone());
        let (mu, sigma) = self.encode_vars(&mut g, xv);
        let (mu, sigma) = (g.value(mu).clone(), g.value(sigma).clone());
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::Inference("non-finite VAE encoding".into()));
        }
        Ok((mu, sigma))
    }

    pub fn decode(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.config.latent_dim {
            return Err(Error::Shape(format!("VAE expects {}-dim latents", self.config.latent_dim)));
        }
        let mut g = Graph::new(&self.params);
        let zv = g.input(z.clone());
        let out = self.decoder.forward(&mut g, zv);
        Ok(g.value(out).clone())
    }

    /// Trains on `x` where `units[u]` lists the rows forming one sampling
    /// unit; each step draws `batch_size` units with replacement.
    pub fn fit(
        &mut self,
        x: &Array2<f64>,
        units: &[Vec<usize>],
        opt: &OptimizerConfig,
        mut on_step: impl FnMut(&StepRecord),
    ) -> Result<Vec<StepRecord>> {
        opt.validate()?;
        if units.is_empty() || units.iter().all(Vec::is_empty) {
            return Err(Error::Config("VAE training needs at least one nonempty unit".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
        let mut adam = Adam::new(&self.params, opt);
        let mut grads = Grads::zeros_like(&self.params);
        let mut history = Vec::with_capacity(opt.steps);
        for step in 0..opt.steps {
            let mut rows = Vec::new();
            for _ in 0..opt.batch_size {
                rows.extend_from_slice(&units[rng.random_range(0..units.len())]);
            }
            let batch = x.select(ndarray::Axis(0), &rows);
            let eps = draw_noise(&mut rng, rows.len(), self.config.latent_dim);
            grads.zero();
            let mut g = Graph::new(&self.params);
            let vars = self.loss(&mut g, &batch, &eps)?;
            let loss = g.scalar(vars.total);
            if !loss.is_finite() {
                return Err(Error::Training {
                    step,
                    message: "non-finite VAE loss".into(),
                });
            }
            g.backward(vars.total, &mut grads);
            let inv = 1.0 / opt.batch_size as f64;
            let rec = StepRecord {
                step,
                loss: loss * inv,
                kl: g.scalar(vars.kl) * inv,
                nll: vec![g.scalar(vars.nll) * inv],
            };
            drop(g);
            grads.scale(inv);
            on_step(&rec);
            history.push(rec);
            adam.step(&mut self.params, &grads, step)?;
        }
        self.params.round_to_f32();
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::grad_check;

    fn data(n: usize) -> Array2<f64> {
        // Points near a 1-D curve in 4-D.
        Array2::from_shape_fn((n, 4), |(i, j)| {
            let t = i as f64 / n as f64 * 4.0 - 2.0;
            [t, t * t * 0.5, -t, 0.3 * t][j]
        })
    }

    #[test]
    fn zero_noise_encoding_is_deterministic() {
        let v = Vae::new(&VaeConfig::default(), 4).unwrap();
        let x = data(10);
        assert_eq!(v.encode(&x).unwrap(), v.encode(&x).unwrap());
        assert!(v.encode(&x).unwrap().1.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn kl_vanishes_at_standard_normal() {
        let mut v = Vae::new(&VaeConfig::default(), 4).unwrap();
        // Zero the encoder heads so mu = 0 and softplus(b) + floor = 1.
        for name in ["vae.mu.weight", "vae.mu.bias", "vae.sigma.weight"] {
            let id = v.params.id(name).unwrap();
            v.params.value_mut(id).fill(0.0);
        }
        let b = v.params.id("vae.sigma.bias").unwrap();
        v.params.value_mut(b).fill((f64::exp(1.0 - SIGMA_FLOOR) - 1.0).ln());
        let x = data(5);
        let mut g = Graph::new(&v.params);
        let vars = v.loss(&mut g, &x, &Array2::zeros((5, 2))).unwrap();
        assert!(g.scalar(vars.kl).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = VaeConfig {
            hidden: 8,
            ..VaeConfig::default()
        };
        let v = Vae::new(&cfg, 4).unwrap();
        let x = data(6);
        let eps = draw_noise(&mut ChaCha8Rng::seed_from_u64(1), 6, 2);
        let r = grad_check(&v.params, |g| Ok(v.loss(g, &x, &eps)?.total), 1e-3, 200, 0).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn training_reduces_loss() {
        let mut v = Vae::new(&VaeConfig::default(), 4).unwrap();
        let x = data(64);
        let units: Vec<Vec<usize>> = (0..64).map(|i| vec![i]).collect();
        let opt = OptimizerConfig {
            steps: 300,
            batch_size: 16,
            learning_rate: 3e-3,
            ..Default::default()
        };
        let h = v.fit(&x, &units, &opt, |_| {}).unwrap();
        let head: f64 = h[..30].iter().map(|r| r.loss).sum();
        let tail: f64 = h[h.len() - 30..].iter().map(|r| r.loss).sum();
        assert!(tail < head);
    }
}
