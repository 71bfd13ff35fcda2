use ndarray::{Array2, Axis};
use rayon::prelude::*;

use super::checkpoint::ModelCheckpoint;
use crate::dataset::{MultiScaleDataset, ScanGroup};
use crate::diff::Graph;
use crate::error::Result;

/// Deterministic (zero-noise) outputs for one scan group.
#[derive(Debug, Clone)]
pub struct GroupOutput {
    pub root_index: usize,
    /// Base indices of the rows of `mu`, `sigma` and `base_pred`.
    pub members: Vec<usize>,
    pub mu: Array2<f64>,
    pub sigma: Array2<f64>,
    /// Base predictions in original units.
    pub base_pred: Array2<f64>,
    /// (level, record index, prediction in original units) for every coarse node.
    pub coarse_pred: Vec<(usize, usize, Vec<f64>)>,
}

/// Per-layer predictions for a whole dataset.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// One matrix per scale, coarsest first, one row per record. Records no
    /// group reaches hold the scale's training mean and are flagged in `coverage`.
    pub layers: Vec<Array2<f64>>,
    pub coverage: Vec<Vec<bool>>,
    /// Latent means per base record, averaged over the groups containing it.
    pub latents: Array2<f64>,
    pub groups: Vec<GroupOutput>,
}

impl Reconstruction {
    pub fn base(&self) -> &Array2<f64> {
        self.layers.last().expect("at least one scale")
    }
}

pub fn reconstruct_group(ckpt: &ModelCheckpoint, group: &ScanGroup) -> Result<GroupOutput> {
    let net = ckpt.net();
    let base = net.base_level();
    let mut g = Graph::new(&ckpt.params);
    let enc = net.encode(&mut g, group, &ckpt.norms)?;
    let mu = g.value(enc.mu).clone();
    let sigma = g.value(enc.sigma).clone();
    let base_pred = ckpt.decode_base_batch(&mu)?;

    let coarse_nodes: Vec<_> = group.root.preorder().into_iter().filter(|n| n.level < base).collect();
    let mut coarse_pred = Vec::with_capacity(coarse_nodes.len());
    for (node, (level, _, rows)) in coarse_nodes.iter().zip(&enc.aggregates) {
        let zs: Vec<Vec<f64>> = rows.iter().map(|&r| mu.row(r).to_vec()).collect();
        coarse_pred.push((*level, node.index, ckpt.decode_aggregate_at(&zs, *level)?));
    }
    Ok(GroupOutput {
        root_index: group.root_index(),
        members: enc.members,
        mu,
        sigma,
        base_pred,
        coarse_pred,
    })
}

/// Running per-record sums for overlap averaging.
struct Accumulator {
    sum: Array2<f64>,
    count: Vec<usize>,
}

impl Accumulator {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            sum: Array2::zeros((rows, cols)),
            count: vec![0; rows],
        }
    }

    fn add(&mut self, row: usize, values: impl IntoIterator<Item = f64>) {
        for (s, v) in self.sum.row_mut(row).iter_mut().zip(values) {
            *s += v;
        }
        self.count[row] += 1;
    }

    fn finish(mut self, fill: &[f64]) -> (Array2<f64>, Vec<bool>) {
        for (i, mut row) in self.sum.axis_iter_mut(Axis(0)).enumerate() {
            let c = self.count[i];
            if c == 0 {
                row.iter_mut().zip(fill).for_each(|(r, f)| *r = *f);
            } else {
                row.mapv_inplace(|v| v / c as f64);
            }
        }
        (self.sum, self.count.iter().map(|&c| c > 0).collect())
    }
}

/// Encodes every scan group with zero noise and decodes every layer.
/// Records reached through several groups get the arithmetic mean of their
/// per-group predictions.
pub fn reconstruct_dataset(ds: &MultiScaleDataset, ckpt: &ModelCheckpoint) -> Result<Reconstruction> {
    ckpt.check_dataset(ds)?;
    let groups = ds.scan_groups()?;
    let outputs = groups
        .par_iter()
        .map(|g| reconstruct_group(ckpt, g))
        .collect::<Result<Vec<_>>>()?;

    let base = ds.base_level();
    let mut accs: Vec<Accumulator> = ds.scales.iter().map(|s| Accumulator::new(s.len(), s.dim())).collect();
    let mut lat = Accumulator::new(ds.base().len(), ckpt.latent_dim());
    for out in &outputs {
        for (r, &m) in out.members.iter().enumerate() {
            accs[base].add(m, out.base_pred.row(r).iter().copied());
            lat.add(m, out.mu.row(r).iter().copied());
        }
        for (level, index, pred) in &out.coarse_pred {
            accs[*level].add(*index, pred.iter().copied());
        }
    }
    let mut layers = Vec::with_capacity(accs.len());
    let mut coverage = Vec::with_capacity(accs.len());
    for (l, acc) in accs.into_iter().enumerate() {
        let fill: Vec<f64> = ckpt.norms[l].mean.iter().map(|&m| m as f64).collect();
        let (m, c) = acc.finish(&fill);
        layers.push(m);
        coverage.push(c);
    }
    let (latents, _) = lat.finish(&vec![0.0; ckpt.latent_dim()]);
    Ok(Reconstruction {
        layers,
        coverage,
        latents,
        groups: outputs,
    })
}
