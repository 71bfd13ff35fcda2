use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::regions::{LatentPoint, RegionSelection};
use crate::dataset::MultiScaleDataset;
use crate::error::{Error, Result};

pub const VIZ_FORMAT_VERSION: &str = "1";
pub const DEFAULT_BINS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub bins: usize,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    /// `counts[row][col]`: row follows the second latent axis, column the first.
    pub counts: Vec<Vec<u64>>,
}

fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
}

/// Equal-width 2-D histogram over the bounding box of `points` (`n x 2`).
pub fn latent_heatmap(points: &Array2<f64>, bins: usize) -> Result<Heatmap> {
    if points.ncols() != 2 {
        return Err(Error::Unsupported(format!("heatmaps need 2-D latents, got {}-D", points.ncols())));
    }
    if bins == 0 || points.nrows() == 0 {
        return Err(Error::Config("heatmap needs points and at least one bin".into()));
    }
    let range = |c: usize| {
        let col = points.column(c);
        [col.fold(f64::INFINITY, |a, &b| a.min(b)), col.fold(f64::NEG_INFINITY, |a, &b| a.max(b))]
    };
    let (xr, yr) = (range(0), range(1));
    let mut counts = vec![vec![0u64; bins]; bins];
    for p in points.rows() {
        counts[bin_of(p[1], yr[0], yr[1], bins)][bin_of(p[0], xr[0], xr[1], bins)] += 1;
    }
    Ok(Heatmap {
        bins,
        x_range: xr,
        y_range: yr,
        counts,
    })
}

/// Viridis sampled at nine evenly spaced stops.
const VIRIDIS: [[f64; 3]; 9] = [
    [0.267, 0.005, 0.329],
    [0.283, 0.141, 0.458],
    [0.254, 0.265, 0.530],
    [0.207, 0.372, 0.553],
    [0.164, 0.471, 0.558],
    [0.128, 0.567, 0.551],
    [0.135, 0.659, 0.518],
    [0.267, 0.749, 0.441],
    [0.993, 0.906, 0.144],
];

/// Corner colours of the 2-D map at (min,min), (max,min), (min,max), (max,max).
const CORNERS: [[f64; 3]; 4] = [[0.1, 0.1, 0.9], [0.9, 0.1, 0.1], [0.1, 0.9, 0.2], [0.95, 0.9, 0.1]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ColorMapping {
    /// One latent: colour = piecewise-linear ramp through `stops` at t = (z - min) / (max - min).
    Ramp { min: Vec<f64>, max: Vec<f64>, stops: Vec<[f64; 3]> },
    /// Two latents: bilinear blend of `corners` at the min-max scaled coordinates.
    Bilinear { min: Vec<f64>, max: Vec<f64>, corners: Vec<[f64; 3]> },
    /// Three latents: each min-max scaled channel is one of red, green, blue.
    Rgb { min: Vec<f64>, max: Vec<f64> },
}

fn unit(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] * (1.0 - t) + b[i] * t)
}

impl ColorMapping {
    pub fn fit(latents: &Array2<f64>) -> Result<Self> {
        let d = latents.ncols();
        let min: Vec<f64> = latents.columns().into_iter().map(|c| c.fold(f64::INFINITY, |a, &b| a.min(b))).collect();
        let max: Vec<f64> = latents.columns().into_iter().map(|c| c.fold(f64::NEG_INFINITY, |a, &b| a.max(b))).collect();
        match d {
            1 => Ok(Self::Ramp {
                min,
                max,
                stops: VIRIDIS.to_vec(),
            }),
            2 => Ok(Self::Bilinear {
                min,
                max,
                corners: CORNERS.to_vec(),
            }),
            3 => Ok(Self::Rgb { min, max }),
            _ => Err(Error::Unsupported(format!("colour export supports 1 to 3 latent dims, got {d}"))),
        }
    }

    pub fn color(&self, z: &[f64]) -> [f64; 3] {
        match self {
            Self::Ramp { min, max, stops } => {
                let t = unit(z[0], min[0], max[0]) * (stops.len() - 1) as f64;
                let i = (t.floor() as usize).min(stops.len() - 2);
                lerp(stops[i], stops[i + 1], t - i as f64)
            }
            Self::Bilinear { min, max, corners } => {
                let u = unit(z[0], min[0], max[0]);
                let v = unit(z[1], min[1], max[1]);
                lerp(lerp(corners[0], corners[1], u), lerp(corners[2], corners[3], u), v)
            }
            Self::Rgb { min, max } => [0, 1, 2].map(|i| unit(z[i], min[i], max[i])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialRecord {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub latent: Vec<f64>,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialExport {
    pub records: Vec<SpatialRecord>,
    pub color_mapping: ColorMapping,
}

/// Averages latents per base record (a record may be encoded in several
/// groups) and colours each covered record. `encodings` pairs base indices
/// with latents.
pub fn spatial_color_export(ds: &MultiScaleDataset, encodings: &[(usize, Vec<f64>)]) -> Result<SpatialExport> {
    let base = ds.base();
    let coords = base
        .coords
        .as_ref()
        .ok_or_else(|| Error::Format(format!("base scale '{}' has no coordinates", base.id)))?;
    let dim = encodings
        .first()
        .map(|e| e.1.len())
        .ok_or_else(|| Error::Validation("no encodings to export".into()))?;
    let mut sum = Array2::<f64>::zeros((base.len(), dim));
    let mut count = vec![0usize; base.len()];
    for (i, z) in encodings {
        if *i >= base.len() || z.len() != dim {
            return Err(Error::Shape(format!("encoding for record {i} does not fit the base scale")));
        }
        sum.row_mut(*i).iter_mut().zip(z).for_each(|(s, v)| *s += v);
        count[*i] += 1;
    }
    let covered: Vec<usize> = (0..base.len()).filter(|&i| count[i] > 0).collect();
    let latents = Array2::from_shape_fn((covered.len(), dim), |(r, d)| sum[[covered[r], d]] / count[covered[r]] as f64);
    let mapping = ColorMapping::fit(&latents)?;
    let records = covered
        .iter()
        .zip(latents.rows())
        .map(|(&i, z)| {
            let z = z.to_vec();
            SpatialRecord {
                index: i,
                x: coords[[i, 0]] as f64,
                y: coords[[i, 1]] as f64,
                color: mapping.color(&z),
                latent: z,
            }
        })
        .collect();
    Ok(SpatialExport {
        records,
        color_mapping: mapping,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSample {
    /// Total number of latent points before subsampling.
    pub total: usize,
    pub subsampled: bool,
    pub seed: u64,
    pub indices: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

/// Keeps at most `cap` rows of `points`, chosen uniformly with `seed`, in
/// ascending order.
pub fn subsample(indices: &[usize], points: &Array2<f64>, cap: usize, seed: u64) -> LatentSample {
    let n = points.nrows();
    let mut keep: Vec<usize> = if n > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, n, cap).into_vec()
    } else {
        (0..n).collect()
    };
    keep.sort_unstable();
    LatentSample {
        total: n,
        subsampled: n > cap,
        seed,
        indices: keep.iter().map(|&i| indices[i]).collect(),
        values: keep.iter().map(|&i| points.row(i).to_vec()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationSettings {
    pub projections: usize,
    pub seed: u64,
}

/// The single document handed to the viewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VizExport {
    pub version: String,
    pub model: String,
    pub dataset: String,
    pub latent_dim: usize,
    /// Raw latent points for client-side binning.
    pub latent_points: LatentSample,
    pub heatmap: Option<Heatmap>,
    pub spatial: Vec<SpatialRecord>,
    pub color_mapping: ColorMapping,
    pub regions: Vec<RegionSelection>,
    pub separation: SeparationSettings,
}

impl VizExport {
    /// Points that region selections and separations operate on.
    pub fn region_points(&self) -> Vec<LatentPoint> {
        spatial_points(&self.spatial)
    }
}

pub fn spatial_points(spatial: &[SpatialRecord]) -> Vec<LatentPoint> {
    spatial
        .iter()
        .map(|r| LatentPoint {
            index: r.index,
            x: r.x,
            y: r.y,
            latent: r.latent.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DataScale, NestingMap};
    use ndarray::array;

    fn ds() -> MultiScaleDataset {
        let p = DataScale::new("p", array![[0.0f32], [1.0]], None).unwrap();
        let c = DataScale::new("c", array![[0.0f32], [1.0], [2.0]], Some(array![[0.0f32, 0.0], [1.0, 0.0], [2.0, 0.0]])).unwrap();
        MultiScaleDataset::new("t", vec![p, c], vec![NestingMap::new("p", "c", vec![vec![0, 1], vec![1, 2]])]).unwrap()
    }

    #[test]
    fn heatmap_conserves_counts() {
        let one = latent_heatmap(&array![[0.5, -1.0]], 300).unwrap();
        let total: u64 = one.counts.iter().flatten().sum();
        assert_eq!(total, 1);
        assert_eq!(one.counts.iter().flatten().filter(|&&c| c > 0).count(), 1);
        let pts = Array2::from_shape_fn((1000, 2), |(i, j)| ((i * 7919 + j * 104729) % 997) as f64 / 13.0);
        let h = latent_heatmap(&pts, 37).unwrap();
        assert_eq!(h.counts.len(), 37);
        assert_eq!(h.counts.iter().flatten().sum::<u64>(), 1000);
        // The extremes land in the first and last bins.
        assert!(h.counts[0].iter().sum::<u64>() > 0 && h.counts[36].iter().sum::<u64>() > 0);
        assert!(latent_heatmap(&array![[1.0, 2.0, 3.0]], 10).is_err());
    }

    #[test]
    fn colour_modes() {
        let constant = ColorMapping::fit(&array![[2.0], [2.0]]).unwrap();
        assert_eq!(constant.color(&[2.0]), constant.color(&[2.0]));
        let rgb = ColorMapping::fit(&array![[0.0, -1.0, 5.0], [1.0, 1.0, 6.0]]).unwrap();
        assert_eq!(rgb.color(&[0.0, -1.0, 5.0]), [0.0, 0.0, 0.0]);
        assert_eq!(rgb.color(&[1.0, 1.0, 6.0]), [1.0, 1.0, 1.0]);
        let ramp = ColorMapping::fit(&array![[0.0], [1.0]]).unwrap();
        assert_eq!(ramp.color(&[0.0]), VIRIDIS[0]);
        assert_eq!(ramp.color(&[1.0]), VIRIDIS[8]);
        let bi = ColorMapping::fit(&array![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert_eq!(bi.color(&[1.0, 0.0]), CORNERS[1]);
        assert!(ColorMapping::fit(&Array2::zeros((2, 4))).is_err());
    }

    #[test]
    fn overlapping_records_are_averaged_before_colouring() {
        let enc = vec![(0, vec![0.0, 0.0]), (1, vec![1.0, 3.0]), (1, vec![3.0, 1.0]), (2, vec![4.0, 4.0])];
        let out = spatial_color_export(&ds(), &enc).unwrap();
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.records[1].latent, vec![2.0, 2.0]);
        assert_eq!(out.records[1].color, out.color_mapping.color(&[2.0, 2.0]));
        assert_eq!((out.records[2].x, out.records[2].y), (2.0, 0.0));
        let mut no_coords = ds();
        no_coords.scales[1].coords = None;
        assert!(spatial_color_export(&no_coords, &enc).is_err());
    }

    #[test]
    fn subsampling_is_seeded() {
        let pts = Array2::from_shape_fn((50, 2), |(i, j)| (i * 2 + j) as f64);
        let idx: Vec<usize> = (0..50).map(|i| i + 1000).collect();
        let a = subsample(&idx, &pts, 10, 3);
        assert_eq!(a, subsample(&idx, &pts, 10, 3));
        assert_eq!(a.values.len(), 10);
        assert!(a.subsampled && a.indices.windows(2).all(|w| w[0] < w[1]));
        assert!(!subsample(&idx, &pts, 50, 3).subsampled);
    }
}
