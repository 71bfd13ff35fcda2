use ndarray::{Array2, ArrayView1};

/// Per-column z-scoring. Statistics are rounded to `f32` at fit time so the
/// checkpointed values are exactly the ones used in training.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

/// Columns whose spread falls below this are treated as constant (std 1).
const MIN_STD: f64 = 1e-8;

impl Standardizer {
    pub fn fit(data: &Array2<f32>) -> Self {
        let n = data.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(data.ncols());
        let mut std = Vec::with_capacity(data.ncols());
        for col in data.columns() {
            let m = col.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = col.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            mean.push(m as f32);
            std.push(if s > MIN_STD { s as f32 } else { 1.0 });
        }
        Self { mean, std }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: ArrayView1<'_, f32>) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| (v as f64 - m as f64) / s as f64)
            .collect()
    }

    pub fn normalize_slice(&self, x: &[f32]) -> Vec<f64> {
        self.normalize(ArrayView1::from(x))
    }

    pub fn normalize_matrix(&self, x: &Array2<f32>) -> Array2<f64> {
        Array2::from_shape_fn(x.dim(), |(i, j)| (x[[i, j]] as f64 - self.mean[j] as f64) / self.std[j] as f64)
    }

    pub fn denormalize_matrix(&self, z: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(z.dim(), |(i, j)| z[[i, j]] * self.std[j] as f64 + self.mean[j] as f64)
    }
}
