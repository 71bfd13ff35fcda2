use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are null directions.
const NULL_TOLERANCE: f64 = 1e-10;

/// Centred truncated principal-component projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `k x D`, orthonormal rows, by decreasing variance.
    pub components: Array2<f64>,
    /// Sample variance along each component.
    pub variances: Vec<f64>,
    /// Requested code width; codes are zero-padded when the data has lower rank.
    pub latent_dim: usize,
}

impl Pca {
    pub fn fit(x: &Array2<f64>, latent_dim: usize) -> Result<Self> {
        let (m, d) = x.dim();
        if latent_dim == 0 {
            return Err(Error::Config("latent dim must be at least 1".into()));
        }
        if m <= latent_dim {
            return Err(Error::Config(format!("PCA needs more rows ({m}) than latent dims ({latent_dim})")));
        }
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let centred = x - &mean;
        let mat = DMatrix::from_fn(m, d, |i, j| centred[[i, j]]);
        let svd = mat.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let top = order.first().map(|&i| svd.singular_values[i]).unwrap_or(0.0);
        let kept: Vec<usize> = order
            .into_iter()
            .filter(|&i| svd.singular_values[i] > NULL_TOLERANCE * top.max(f64::MIN_POSITIVE))
            .take(latent_dim)
            .collect();
        let components = Array2::from_shape_fn((kept.len(), d), |(r, j)| v_t[(kept[r], j)]);
        let variances = kept
            .iter()
            .map(|&i| svd.singular_values[i].powi(2) / (m - 1) as f64)
            .collect();
        Ok(Self {
            mean,
            components,
            variances,
            latent_dim,
        })
    }

    pub fn rank(&self) -> usize {
        self.components.nrows()
    }

    /// Codes (`n x latent_dim`); columns past the data rank stay zero.
    pub fn encode(&self, x: &Array2<f64>) -> Array2<f64> {
        let proj = (x - &self.mean).dot(&self.components.t());
        let mut out = Array2::zeros((x.nrows(), self.latent_dim));
        out.slice_mut(ndarray::s![.., ..self.rank()]).assign(&proj);
        out
    }

    pub fn decode(&self, codes: &Array2<f64>) -> Array2<f64> {
        let used = codes.slice(ndarray::s![.., ..self.rank()]);
        used.dot(&self.components) + &self.mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(m: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((m, d), || rng.random_range(-1.0..1.0))
    }

    fn sse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        (a - b).iter().map(|v| v * v).sum()
    }

    #[test]
    fn exact_line_is_reconstructed() {
        let x = Array2::from_shape_fn((20, 3), |(i, j)| (i as f64) * [1.0, -2.0, 0.5][j] + 3.0);
        let p = Pca::fit(&x, 1).unwrap();
        assert!(sse(&x, &p.decode(&p.encode(&x))) < 1e-20);
    }

    #[test]
    fn full_rank_is_lossless() {
        let x = random(30, 4, 1);
        let p = Pca::fit(&x, 4).unwrap();
        let back = p.decode(&p.encode(&x));
        assert!((&x - &back).iter().all(|v| v.abs() <= 1e-5));
    }

    #[test]
    fn residual_equals_discarded_eigenvalues() {
        let x = random(50, 5, 2);
        let p = Pca::fit(&x, 2).unwrap();
        let centred = &x - &x.mean_axis(Axis(0)).unwrap();
        let cov = centred.t().dot(&centred) / 49.0;
        let eig = SymmetricEigen::new(DMatrix::from_fn(5, 5, |i, j| cov[[i, j]]));
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        let discarded: f64 = vals[2..].iter().sum();
        let err = sse(&x, &p.decode(&p.encode(&x)));
        assert!((err - discarded * 49.0).abs() < 1e-9 * err.max(1.0));
        assert!((p.variances[0] - vals[0]).abs() < 1e-10);
    }

    #[test]
    fn error_non_increasing_in_latent_dim() {
        let x = random(40, 6, 3);
        let mut prev = f64::INFINITY;
        for k in 1..=6 {
            let p = Pca::fit(&x, k).unwrap();
            let e = sse(&x, &p.decode(&p.encode(&x)));
            assert!(e <= prev + 1e-12);
            prev = e;
        }
    }

    #[test]
    fn encode_decode_is_idempotent_on_range() {
        let x = random(25, 5, 4);
        let p = Pca::fit(&x, 2).unwrap();
        let once = p.decode(&p.encode(&x));
        let twice = p.decode(&p.encode(&once));
        assert!((&once - &twice).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn null_directions_are_dropped() {
        let mut x = random(20, 3, 5);
        x.column_mut(2).fill(7.0);
        let p = Pca::fit(&x, 3).unwrap();
        assert_eq!(p.rank(), 2);
        assert_eq!(p.encode(&x).ncols(), 3);
        assert!(sse(&x, &p.decode(&p.encode(&x))) < 1e-20);
        assert!(Pca::fit(&x, 20).is_err());
    }
}
