use std::path::Path;

use ndarray::Array2;
use nested_fusion::baselines::{baseline_reconstructions, BaselineModel, FlattenMode, BASELINE_KIND};
use nested_fusion::container::Container;
use nested_fusion::eval::LayerPredictions;
use nested_fusion::model::{reconstruct_dataset, ModelCheckpoint, MODEL_KIND};
use nested_fusion::{Error, MultiScaleDataset, Result};

/// Any checkpoint the CLI can train, evaluate or export.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Fusion(ModelCheckpoint),
    Baseline(BaselineModel),
}

/// Latents of a dataset as the viewer sees them.
#[derive(Debug, Clone)]
pub struct DatasetLatents {
    /// One row per latent the model produces (per base record, or per parent for joint models).
    pub points: Array2<f64>,
    /// Record index of each row of `points` at the scale it belongs to.
    pub point_indices: Vec<usize>,
    /// Per base record, averaged over every latent covering it.
    pub base: Array2<f64>,
    pub covered: Vec<bool>,
}

impl AnyModel {
    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        match c.kind.as_str() {
            MODEL_KIND => Ok(Self::Fusion(ModelCheckpoint::from_container(&c)?)),
            BASELINE_KIND => Ok(Self::Baseline(BaselineModel::from_container(&c)?)),
            other => Err(Error::Format(format!("unknown checkpoint kind '{other}'"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            Self::Fusion(m) => m.save(path),
            Self::Baseline(m) => m.save(path),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Fusion(_) => "nested-fusion",
            Self::Baseline(m) => m.kind.name(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Self::Fusion(m) => m.latent_dim(),
            Self::Baseline(m) => m.latent_dim(),
        }
    }

    pub fn predictions(&self, ds: &MultiScaleDataset) -> Result<LayerPredictions> {
        match self {
            Self::Fusion(m) => Ok((&reconstruct_dataset(ds, m)?).into()),
            Self::Baseline(m) => Ok((&baseline_reconstructions(ds, m)?).into()),
        }
    }

    pub fn latents(&self, ds: &MultiScaleDataset) -> Result<DatasetLatents> {
        match self {
            Self::Fusion(m) => {
                let rec = reconstruct_dataset(ds, m)?;
                let covered = rec.coverage.last().expect("base layer").clone();
                let idx: Vec<usize> = (0..covered.len()).filter(|&i| covered[i]).collect();
                Ok(DatasetLatents {
                    points: rec.latents.select(ndarray::Axis(0), &idx),
                    point_indices: idx,
                    base: rec.latents,
                    covered,
                })
            }
            Self::Baseline(m) => {
                let rec = baseline_reconstructions(ds, m)?;
                let covered = rec.coverage[1].clone();
                let (points, point_indices) = match m.spec.mode {
                    FlattenMode::Joint => (rec.codes.clone(), rec.rows.iter().map(|r| r.parent).collect()),
                    FlattenMode::Concatenative => {
                        let idx: Vec<usize> = (0..covered.len()).filter(|&i| covered[i]).collect();
                        (rec.base_latents.select(ndarray::Axis(0), &idx), idx)
                    }
                };
                Ok(DatasetLatents {
                    points,
                    point_indices,
                    base: rec.base_latents,
                    covered,
                })
            }
        }
    }
}
