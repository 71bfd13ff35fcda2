use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::checkpoint::ModelCheckpoint;
use super::config::ModelConfig;
use crate::dataset::{MultiScaleDataset, ScanGroup};
use crate::diff::{Adam, Graph, Grads, OptimizerConfig};
use crate::error::{Error, Result};

/// Batch means of the loss terms at one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub kl: f64,
    /// Unweighted negative log-likelihood per scale, coarsest first.
    pub nll: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub history: Vec<StepRecord>,
}

/// Standard-normal noise of the given shape.
pub fn draw_noise(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Loss terms and gradient accumulation for one group.
fn group_step(ckpt: &ModelCheckpoint, group: &ScanGroup, eps: &Array2<f64>, grads: &mut Grads, step: usize) -> Result<StepRecord> {
    let mut g = Graph::new(&ckpt.params);
    let vars = ckpt.net().elbo(&mut g, group, &ckpt.norms, eps)?;
    let loss = g.scalar(vars.total);
    if !loss.is_finite() {
        return Err(Error::Training {
            step,
            message: format!("non-finite loss for group {}", group.root_index()),
        });
    }
    g.backward(vars.total, grads);
    Ok(StepRecord {
        step,
        loss,
        kl: g.scalar(vars.kl),
        nll: vars.nll.iter().map(|v| v.map(|v| g.scalar(v)).unwrap_or(0.0)).collect(),
    })
}

/// Stochastic variational inference over scan groups. Each step draws
/// `batch_size` groups uniformly with replacement and one noise draw per
/// base member, averages gradients and takes one Adam step. `on_step` sees
/// every record as it is produced, so a diverging run still leaves its log.
pub fn train_with(
    ds: &MultiScaleDataset,
    cfg: &ModelConfig,
    opt: &OptimizerConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    opt.validate()?;
    ds.validate().into_result()?;
    let mut ckpt = ModelCheckpoint::initialize(ds, cfg)?;
    let groups = ds.scan_groups()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut adam = Adam::new(&ckpt.params, opt);
    let mut grads = Grads::zeros_like(&ckpt.params);
    let mut history = Vec::with_capacity(opt.steps);
    let levels = ds.scales.len();

    for step in 0..opt.steps {
        grads.zero();
        let mut rec = StepRecord {
            step,
            loss: 0.0,
            kl: 0.0,
            nll: vec![0.0; levels],
        };
        for _ in 0..opt.batch_size {
            let group = &groups[rng.random_range(0..groups.len())];
            let k = group.base_members().len();
            let eps = draw_noise(&mut rng, k, cfg.latent_dim);
            let r = group_step(&ckpt, group, &eps, &mut grads, step)?;
            rec.loss += r.loss;
            rec.kl += r.kl;
            for (a, b) in rec.nll.iter_mut().zip(&r.nll) {
                *a += b;
            }
        }
        let inv = 1.0 / opt.batch_size as f64;
        grads.scale(inv);
        rec.loss *= inv;
        rec.kl *= inv;
        rec.nll.iter_mut().for_each(|v| *v *= inv);
        on_step(&rec);
        history.push(rec);
        adam.step(&mut ckpt.params, &grads, step)?;
    }
    let params = ckpt.params.clone();
    ckpt.set_params(params);
    Ok(TrainOutcome { checkpoint: ckpt, history })
}

pub fn train(ds: &MultiScaleDataset, cfg: &ModelConfig, opt: &OptimizerConfig) -> Result<TrainOutcome> {
    train_with(ds, cfg, opt, |_| {})
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}
