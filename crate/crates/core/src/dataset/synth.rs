//! Deterministic synthetic two-scale dataset with known per-pixel classes.
//!
//! Pixels sit on a regular grid. Each pixel takes the class of the nearest of
//! `classes` seeded sites, giving piecewise-constant grains. Pixel records are
//! the class prototype plus Gaussian noise. Coarse records sit on a centred
//! grid; each is the member-count weighted mean of its pixels' coarse-scale
//! prototypes plus noise.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{build_nesting_from_coords, DataScale, GroupNode, MultiScaleDataset, ScanGroup};
use crate::error::{Error, Result};

pub const PARENT_SCALE: &str = "quant";
pub const BASE_SCALE: &str = "pixel";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Pixel pitch in microns.
    pub pitch: f64,
    pub classes: usize,
    pub base_dim: usize,
    pub parent_dim: usize,
    /// Spacing of the coarse grid in microns.
    pub parent_spacing: f64,
    /// Nesting radius in microns.
    pub radius: f64,
    pub base_noise: f64,
    pub parent_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            pitch: 15.0,
            classes: 5,
            base_dim: 16,
            parent_dim: 8,
            parent_spacing: 120.0,
            radius: 75.0,
            base_noise: 0.1,
            parent_noise: 0.05,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: MultiScaleDataset,
    /// Ground-truth class of every base record.
    pub labels: Vec<u32>,
    pub base_prototypes: Array2<f32>,
    pub parent_prototypes: Array2<f32>,
    pub config: SynthConfig,
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    if cfg.classes == 0 {
        return Err(Error::Config("class count must be at least 1".into()));
    }
    if cfg.width == 0 || cfg.height == 0 {
        return Err(Error::Config("grid is empty".into()));
    }
    if cfg.base_dim == 0 || cfg.parent_dim == 0 {
        return Err(Error::Config("scale dims must be positive".into()));
    }
    if !(cfg.pitch > 0.0 && cfg.parent_spacing > 0.0 && cfg.radius > 0.0) {
        return Err(Error::Config("pitch, parent spacing and radius must be positive".into()));
    }
    if cfg.base_noise < 0.0 || cfg.parent_noise < 0.0 {
        return Err(Error::Config("noise levels must be non-negative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base_prototypes = gaussian_matrix(&mut rng, cfg.classes, cfg.base_dim);
    let parent_prototypes = gaussian_matrix(&mut rng, cfg.classes, cfg.parent_dim);

    let extent_x = (cfg.width - 1) as f64 * cfg.pitch;
    let extent_y = (cfg.height - 1) as f64 * cfg.pitch;
    let sites: Vec<(f64, f64)> = (0..cfg.classes)
        .map(|_| (rng.random::<f64>() * extent_x, rng.random::<f64>() * extent_y))
        .collect();

    let n_pix = cfg.width * cfg.height;
    let mut labels = Vec::with_capacity(n_pix);
    let mut pix_coords = Array2::<f32>::zeros((n_pix, 2));
    let mut pix_records = Array2::<f32>::zeros((n_pix, cfg.base_dim));
    for row in 0..cfg.height {
        for col in 0..cfg.width {
            let i = row * cfg.width + col;
            let (x, y) = (col as f64 * cfg.pitch, row as f64 * cfg.pitch);
            let class = nearest_site(&sites, x, y);
            labels.push(class as u32);
            pix_coords[[i, 0]] = x as f32;
            pix_coords[[i, 1]] = y as f32;
            for d in 0..cfg.base_dim {
                let noise: f64 = rng.sample(StandardNormal);
                pix_records[[i, d]] = (base_prototypes[[class, d]] as f64 + cfg.base_noise * noise) as f32;
            }
        }
    }

    let xs = centred_axis(extent_x, cfg.parent_spacing);
    let ys = centred_axis(extent_y, cfg.parent_spacing);
    let n_par = xs.len() * ys.len();
    let mut par_coords = Array2::<f32>::zeros((n_par, 2));
    for (r, &y) in ys.iter().enumerate() {
        for (c, &x) in xs.iter().enumerate() {
            let i = r * xs.len() + c;
            par_coords[[i, 0]] = x as f32;
            par_coords[[i, 1]] = y as f32;
        }
    }

    let base = DataScale::new(BASE_SCALE, pix_records, Some(pix_coords))?;
    let placeholder = DataScale::new(PARENT_SCALE, Array2::zeros((n_par, cfg.parent_dim)), Some(par_coords))?;
    let nesting = build_nesting_from_coords(&placeholder, &base, cfg.radius).map_err(|e| match e {
        Error::Validation(m) => Error::Config(format!("radius covers no pixels: {m}")),
        other => other,
    })?;

    let mut parent = placeholder;
    for (p, members) in nesting.edges.iter().enumerate() {
        let mut counts = vec![0usize; cfg.classes];
        for &m in members {
            counts[labels[m] as usize] += 1;
        }
        let values = mixture_record(&parent_prototypes, &counts, cfg.parent_noise, &mut rng);
        for (d, v) in values.into_iter().enumerate() {
            parent.records[[p, d]] = v;
        }
    }
    parent.meta.insert("role".into(), "coarse".into());
    let mut base = base;
    base.meta.insert("role".into(), "base".into());

    let dataset = MultiScaleDataset::new(format!("synthetic-seed{}", cfg.seed), vec![parent, base], vec![nesting])?;
    Ok(SyntheticDataset {
        dataset,
        labels,
        base_prototypes,
        parent_prototypes,
        config: cfg.clone(),
    })
}

impl SyntheticDataset {
    /// Draws a fresh scan group outside the dataset: `class_counts[k]` pixels of
    /// class `k`, noised like the generator, with a matching coarse record.
    /// Returns the group and the class of each base member in order.
    pub fn mixture_group(&self, class_counts: &[usize], seed: u64) -> Result<(ScanGroup, Vec<u32>)> {
        if class_counts.len() != self.config.classes || class_counts.iter().sum::<usize>() == 0 {
            return Err(Error::Config("class counts must cover every class and be nonempty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut children = Vec::new();
        let mut labels = Vec::new();
        for (class, &count) in class_counts.iter().enumerate() {
            for _ in 0..count {
                let values = (0..self.config.base_dim)
                    .map(|d| {
                        let noise: f64 = rng.sample(StandardNormal);
                        (self.base_prototypes[[class, d]] as f64 + self.config.base_noise * noise) as f32
                    })
                    .collect();
                children.push(GroupNode::leaf(1, children.len(), values));
                labels.push(class as u32);
            }
        }
        let root_values = mixture_record(&self.parent_prototypes, class_counts, self.config.parent_noise, &mut rng);
        let root = GroupNode {
            level: 0,
            index: 0,
            values: root_values,
            coord: None,
            children,
        };
        Ok((ScanGroup { root }, labels))
    }
}

fn mixture_record(prototypes: &Array2<f32>, counts: &[usize], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let total = counts.iter().sum::<usize>() as f64;
    (0..prototypes.ncols())
        .map(|d| {
            let mean: f64 = counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(k, &c)| (c as f64 / total) * prototypes[[k, d]] as f64)
                .sum();
            let n: f64 = rng.sample(StandardNormal);
            (mean + noise * n) as f32
        })
        .collect()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f32> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal) as f32)
}

fn nearest_site(sites: &[(f64, f64)], x: f64, y: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, &(sx, sy)) in sites.iter().enumerate() {
        let d = (sx - x).powi(2) + (sy - y).powi(2);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Positions `offset + i * spacing` covering `[0, extent]`, centred so the
/// margins on both sides are equal.
fn centred_axis(extent: f64, spacing: f64) -> Vec<f64> {
    let n = (extent / spacing).floor() as usize + 1;
    let offset = (extent - (n - 1) as f64 * spacing) / 2.0;
    (0..n).map(|i| offset + i as f64 * spacing).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_group_sizes() {
        let s = generate_synthetic(&SynthConfig::default()).unwrap();
        let nest = &s.dataset.nestings[0];
        assert_eq!(nest.edges.len(), 64);
        let sizes: Vec<usize> = nest.edges.iter().map(Vec::len).collect();
        // Discs of radius 5 pitches around half-lattice centres hold 80 pixels;
        // the outermost ring of discs is clipped by the grid edge.
        assert_eq!(*sizes.iter().max().unwrap(), 80);
        assert_eq!(*sizes.iter().min().unwrap(), 72);
        assert_eq!(sizes.iter().filter(|&&s| s == 80).count(), 36);
        assert_eq!(sizes.iter().sum::<usize>(), 4992);
        assert!(s.dataset.validate().warnings.is_empty());
        assert_eq!(s.dataset.root().dim(), 8);
        assert_eq!(s.dataset.base().dim(), 16);
    }

    #[test]
    fn degenerate_single_class_noise_free() {
        let cfg = SynthConfig {
            classes: 1,
            base_noise: 0.0,
            parent_noise: 0.0,
            ..SynthConfig::default()
        };
        let s = generate_synthetic(&cfg).unwrap();
        for row in s.dataset.base().records.outer_iter() {
            assert_eq!(row, s.base_prototypes.row(0));
        }
        for row in s.dataset.root().records.outer_iter() {
            assert_eq!(row, s.parent_prototypes.row(0));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_synthetic(&SynthConfig::default()).unwrap();
        let b = generate_synthetic(&SynthConfig::default()).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.labels, b.labels);
        let c = generate_synthetic(&SynthConfig {
            seed: 7,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_ne!(a.dataset.base().records, c.dataset.base().records);
    }

    #[test]
    fn config_errors() {
        let bad = [
            SynthConfig {
                classes: 0,
                ..SynthConfig::default()
            },
            SynthConfig {
                width: 0,
                ..SynthConfig::default()
            },
            SynthConfig {
                radius: 1.0,
                ..SynthConfig::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn mixture_group_layout() {
        let s = generate_synthetic(&SynthConfig::default()).unwrap();
        let (g, labels) = s.mixture_group(&[3, 0, 2, 0, 0], 1).unwrap();
        assert_eq!(g.node_count(), 6);
        assert_eq!(labels, vec![0, 0, 0, 2, 2]);
        assert_eq!(g.base_members(), vec![0, 1, 2, 3, 4]);
    }
}
