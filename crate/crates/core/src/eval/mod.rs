//! Reconstruction fidelity, Wasserstein separations between latent regions,
//! latent heatmaps and the spatial colour export.

mod metrics;
mod regions;
mod viz;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub use metrics::{
    fit_score, projection_directions, r_squared, sliced_wasserstein, sliced_wasserstein_with, wasserstein_1d, FitScore,
    DEFAULT_PROJECTIONS,
};
pub use regions::{region_separation, LatentPoint, RegionComparison, RegionSelection, RegionShape};
pub use viz::{
    latent_heatmap, spatial_color_export, spatial_points, subsample, ColorMapping, Heatmap, LatentSample,
    SeparationSettings, SpatialExport, SpatialRecord, VizExport, DEFAULT_BINS, VIZ_FORMAT_VERSION,
};

use crate::baselines::BaselineReconstruction;
use crate::dataset::MultiScaleDataset;
use crate::error::{Error, Result};
use crate::model::Reconstruction;

/// Per-layer predictions in original units, whatever model produced them.
#[derive(Debug, Clone)]
pub struct LayerPredictions {
    pub layers: Vec<Array2<f64>>,
    pub coverage: Vec<Vec<bool>>,
    /// Parent predictions per flattened row with their parent index, for
    /// models that predict a parent several times.
    pub row_parents: Option<(Vec<usize>, Array2<f64>)>,
}

impl From<&Reconstruction> for LayerPredictions {
    fn from(r: &Reconstruction) -> Self {
        Self {
            layers: r.layers.clone(),
            coverage: r.coverage.clone(),
            row_parents: None,
        }
    }
}

impl From<&BaselineReconstruction> for LayerPredictions {
    fn from(r: &BaselineReconstruction) -> Self {
        Self {
            layers: r.layers.clone(),
            coverage: r.coverage.clone(),
            row_parents: r.row_parents.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub scale: String,
    /// Records scored; records no group reaches are left out.
    pub records: usize,
    #[serde(flatten)]
    pub score: FitScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub dataset: String,
    pub latent_dim: usize,
    /// Base (finest) layer.
    pub r2_p: f64,
    /// Parent (coarsest) layer.
    pub r2_q: f64,
    /// "per-record", or "per-row" when each flattened row predicts its parent.
    pub r2_q_method: String,
    /// Parent-layer R² after averaging each parent's row predictions.
    pub r2_q_parent_mean: Option<f64>,
    pub layers: Vec<LayerReport>,
    pub separations: Vec<RegionComparison>,
    pub latent_units: String,
}

fn covered_rows(m: &Array2<f64>, mask: &[bool]) -> Array2<f64> {
    let rows: Vec<usize> = (0..m.nrows()).filter(|&i| mask[i]).collect();
    m.select(Axis(0), &rows)
}

/// Scores every layer over its covered records with the pooled R².
pub fn evaluate(ds: &MultiScaleDataset, model: &str, latent_dim: usize, preds: &LayerPredictions) -> Result<EvalReport> {
    if preds.layers.len() != ds.scales.len() || preds.coverage.len() != ds.scales.len() {
        return Err(Error::Validation(format!(
            "predictions cover {} layers, dataset has {}",
            preds.layers.len(),
            ds.scales.len()
        )));
    }
    let mut layers = Vec::with_capacity(ds.scales.len());
    for (l, scale) in ds.scales.iter().enumerate() {
        let pred = &preds.layers[l];
        if pred.dim() != scale.records.dim() {
            return Err(Error::Validation(format!(
                "predictions for '{}' have shape {:?}, records {:?}",
                scale.id,
                pred.dim(),
                scale.records.dim()
            )));
        }
        let truth = scale.records.mapv(|v| v as f64);
        let mask = &preds.coverage[l];
        let score = fit_score(covered_rows(&truth, mask).view(), covered_rows(pred, mask).view())?;
        layers.push(LayerReport {
            scale: scale.id.clone(),
            records: mask.iter().filter(|&&c| c).count(),
            score,
        });
    }
    let parent_mean = layers[0].score.r2;
    let (r2_q, method, r2_q_parent_mean) = match &preds.row_parents {
        Some((parents, rows)) => {
            let truth = ds.root().records.mapv(|v| v as f64).select(Axis(0), parents);
            (fit_score(truth.view(), rows.view())?.r2, "per-row", Some(parent_mean))
        }
        None => (parent_mean, "per-record", None),
    };
    Ok(EvalReport {
        model: model.into(),
        dataset: ds.name.clone(),
        latent_dim,
        r2_p: layers.last().expect("nonempty").score.r2,
        r2_q,
        r2_q_method: method.into(),
        r2_q_parent_mean,
        layers,
        separations: Vec::new(),
        latent_units: "raw".into(),
    })
}

/// Latent points of covered base records, with coordinates.
pub fn base_latent_points(ds: &MultiScaleDataset, latents: &Array2<f64>, covered: &[bool]) -> Result<Vec<LatentPoint>> {
    let enc: Vec<(usize, Vec<f64>)> = (0..latents.nrows())
        .filter(|&i| covered[i])
        .map(|i| (i, latents.row(i).to_vec()))
        .collect();
    Ok(spatial_points(&spatial_color_export(ds, &enc)?.records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DataScale, NestingMap};
    use ndarray::array;

    fn ds() -> MultiScaleDataset {
        let p = DataScale::new("p", array![[0.0f32], [2.0]], None).unwrap();
        let c = DataScale::new("c", array![[1.0f32], [2.0], [3.0], [9.0]], None).unwrap();
        MultiScaleDataset::new("t", vec![p, c], vec![NestingMap::new("p", "c", vec![vec![0, 1], vec![1, 2]])]).unwrap()
    }

    #[test]
    fn uncovered_records_are_skipped() {
        let preds = LayerPredictions {
            layers: vec![array![[0.0], [2.0]], array![[1.0], [2.0], [4.0], [0.0]]],
            coverage: vec![vec![true, true], vec![true, true, true, false]],
            row_parents: None,
        };
        let r = evaluate(&ds(), "m", 2, &preds).unwrap();
        assert_eq!(r.r2_q, 1.0);
        assert_eq!(r.r2_p, 0.5);
        assert_eq!(r.layers[1].records, 3);
        assert!(r.r2_q_parent_mean.is_none());
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("r2_p").is_some() && json.get("r2_q").is_some());
    }

    #[test]
    fn per_row_parent_scores() {
        let preds = LayerPredictions {
            layers: vec![array![[0.5], [1.5]], array![[1.0], [2.0], [3.0], [9.0]]],
            coverage: vec![vec![true, true], vec![true; 4]],
            row_parents: Some((vec![0, 0, 1, 1], array![[0.0], [1.0], [1.0], [2.0]])),
        };
        let r = evaluate(&ds(), "m", 2, &preds).unwrap();
        assert_eq!(r.r2_q_method, "per-row");
        // Rows: truth 0,0,2,2; SSE 0+1+1+0 = 2, SST 4.
        assert_eq!(r.r2_q, 0.5);
        // Means 0.5, 1.5: SSE 0.5, SST 2.
        assert_eq!(r.r2_q_parent_mean, Some(0.75));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let preds = LayerPredictions {
            layers: vec![array![[0.0]]],
            coverage: vec![vec![true]],
            row_parents: None,
        };
        assert!(evaluate(&ds(), "m", 2, &preds).is_err());
    }
}
