use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of projection directions for sliced distances.
pub const DEFAULT_PROJECTIONS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitScore {
    pub r2: f64,
    pub sse: f64,
    pub sst: f64,
    pub count: usize,
}

/// Pooled coefficient of determination with one mean per column.
pub fn fit_score(truth: ArrayView2<'_, f64>, pred: ArrayView2<'_, f64>) -> Result<FitScore> {
    if truth.dim() != pred.dim() {
        return Err(Error::Shape(format!("truth {:?} vs prediction {:?}", truth.dim(), pred.dim())));
    }
    if truth.nrows() == 0 {
        return Err(Error::UndefinedMetric("R² of an empty layer".into()));
    }
    let mean = truth.mean_axis(Axis(0)).expect("nonempty");
    let mut sse = 0.0;
    let mut sst = 0.0;
    for (t_row, p_row) in truth.rows().into_iter().zip(pred.rows()) {
        for ((t, p), m) in t_row.iter().zip(p_row).zip(&mean) {
            sse += (t - p) * (t - p);
            sst += (t - m) * (t - m);
        }
    }
    if sst == 0.0 {
        return Err(Error::UndefinedMetric("R² undefined for a constant layer".into()));
    }
    Ok(FitScore {
        r2: 1.0 - sse / sst,
        sse,
        sst,
        count: truth.len(),
    })
}

pub fn r_squared(truth: &Array2<f64>, pred: &Array2<f64>) -> Result<f64> {
    Ok(fit_score(truth.view(), pred.view())?.r2)
}

/// Exact W1 between two equal-weight empirical distributions on the line:
/// the integral over `t` in (0, 1) of the gap between the quantile functions.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "wasserstein_1d needs nonempty samples");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    sorted_w1(&a, &b)
}

/// Quantile breakpoints sit at `i / n` and `j / m`; in units of `1 / (n m)`
/// they are the integers `i m` and `j n`, so the walk is exact.
fn sorted_w1(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as u64, b.len() as u64);
    let (mut i, mut j, mut pos, mut sum) = (0usize, 0usize, 0u64, 0.0);
    while i < a.len() && j < b.len() {
        let next_a = (i as u64 + 1) * m;
        let next_b = (j as u64 + 1) * n;
        let next = next_a.min(next_b);
        sum += (next - pos) as f64 * (a[i] - b[j]).abs();
        pos = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    sum / (n * m) as f64
}

/// Unit directions drawn uniformly from the sphere. In one dimension the
/// only direction used is `+1`.
pub fn projection_directions(dim: usize, count: usize, seed: u64) -> Array2<f64> {
    if dim == 1 {
        return Array2::ones((count, 1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = Array2::<f64>::zeros((count, dim));
    for mut row in dirs.rows_mut() {
        loop {
            row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row /= norm;
                break;
            }
        }
    }
    dirs
}

/// Mean 1-D W1 of the projections of `a` and `b` (rows are points) onto each
/// row of `directions`.
pub fn sliced_wasserstein_with(a: &Array2<f64>, b: &Array2<f64>, directions: &Array2<f64>) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Validation("sliced Wasserstein needs two nonempty sets".into()));
    }
    if a.ncols() != b.ncols() || directions.ncols() != a.ncols() || directions.nrows() == 0 {
        return Err(Error::Shape("point sets and directions must share a positive dimension".into()));
    }
    let pa = a.dot(&directions.t());
    let pb = b.dot(&directions.t());
    let total: f64 = pa
        .columns()
        .into_iter()
        .zip(pb.columns())
        .map(|(x, y)| wasserstein_1d(&x.to_vec(), &y.to_vec()))
        .sum();
    Ok(total / directions.nrows() as f64)
}

pub fn sliced_wasserstein(a: &Array2<f64>, b: &Array2<f64>, projections: usize, seed: u64) -> Result<f64> {
    if projections == 0 || a.ncols() == 0 {
        return Err(Error::Config("need at least one projection and one dimension".into()));
    }
    sliced_wasserstein_with(a, b, &projection_directions(a.ncols(), projections, seed))
}
