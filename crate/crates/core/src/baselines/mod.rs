//! Flattening baselines: the joint view (one row, and one latent, per
//! parent) and the concatenative view (each child row carrying a copy of its
//! parent), each modelled by PCA or by a VAE.

mod flatten;
mod pca;
mod vae;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub use flatten::{flatten, flatten_with, FlattenMode, FlattenSpec, FlattenedView, RowSource};
pub use pca::Pca;
pub use vae::{Vae, VaeConfig, VaeVars};

use crate::container::{Blob, Container};
use crate::dataset::{MultiScaleDataset, ScanGroup};
use crate::diff::OptimizerConfig;
use crate::error::{Error, Result};
use crate::model::{StepRecord, Standardizer};

pub const BASELINE_KIND: &str = "baseline";
pub const BASELINE_FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    #[serde(rename = "joint-pca")]
    JointPca,
    #[serde(rename = "joint-vae")]
    JointVae,
    #[serde(rename = "concat-pca")]
    ConcatPca,
    #[serde(rename = "concat-vae")]
    ConcatVae,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [Self::JointPca, Self::JointVae, Self::ConcatPca, Self::ConcatVae];

    pub fn name(self) -> &'static str {
        match self {
            Self::JointPca => "joint-pca",
            Self::JointVae => "joint-vae",
            Self::ConcatPca => "concat-pca",
            Self::ConcatVae => "concat-vae",
        }
    }

    pub fn mode(self) -> FlattenMode {
        match self {
            Self::JointPca | Self::JointVae => FlattenMode::Joint,
            Self::ConcatPca | Self::ConcatVae => FlattenMode::Concatenative,
        }
    }

    pub fn is_vae(self) -> bool {
        matches!(self, Self::JointVae | Self::ConcatVae)
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub latent_dim: usize,
    /// Joint child slots; `None` uses the largest child count.
    pub budget: Option<usize>,
    pub hidden: usize,
    pub layers: usize,
    pub kl_weight: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            budget: None,
            hidden: 64,
            layers: 2,
            kl_weight: 1.0,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    fn vae(&self) -> VaeConfig {
        VaeConfig {
            latent_dim: self.latent_dim,
            hidden: self.hidden,
            layers: self.layers,
            kl_weight: self.kl_weight,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub enum BaselineInner {
    Pca(Pca),
    Vae(Box<Vae>),
}

/// A fitted baseline. Rows are z-scored per column before modelling.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    pub config: BaselineConfig,
    pub spec: FlattenSpec,
    pub scaler: Standardizer,
    pub inner: BaselineInner,
}

impl PartialEq for BaselineModel {
    fn eq(&self, other: &Self) -> bool {
        let inner = match (&self.inner, &other.inner) {
            (BaselineInner::Pca(a), BaselineInner::Pca(b)) => a == b,
            (BaselineInner::Vae(a), BaselineInner::Vae(b)) => a.params == b.params && a.config == b.config,
            _ => false,
        };
        inner && self.kind == other.kind && self.config == other.config && self.spec == other.spec && self.scaler == other.scaler
    }
}

/// Per-layer predictions of a baseline over a whole dataset.
#[derive(Debug, Clone)]
pub struct BaselineReconstruction {
    /// Parent then child predictions in original units, one row per record.
    /// Concatenative parent rows are the mean over that parent's flattened rows.
    pub layers: Vec<Array2<f64>>,
    pub coverage: Vec<Vec<bool>>,
    /// Concatenative only: the parent part of every flattened row, and its parent.
    pub row_parents: Option<(Vec<usize>, Array2<f64>)>,
    /// Latent means per flattened row.
    pub codes: Array2<f64>,
    pub rows: Vec<RowSource>,
    /// Latent means per child record, averaged over the rows that hold it.
    pub base_latents: Array2<f64>,
}

fn units(rows: &[RowSource], parents: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); parents];
    for (r, src) in rows.iter().enumerate() {
        out[src.parent].push(r);
    }
    out.retain(|u| !u.is_empty());
    out
}

fn to_f32(m: &Array2<f64>) -> Array2<f32> {
    m.mapv(|v| v as f32)
}

/// Fits a baseline. VAE steps draw `opt.batch_size` parents, so each step
/// sees the same data as a fusion-model step; PCA ignores `opt`.
pub fn fit_baseline(
    ds: &MultiScaleDataset,
    kind: BaselineKind,
    cfg: &BaselineConfig,
    opt: &OptimizerConfig,
    on_step: impl FnMut(&StepRecord),
) -> Result<(BaselineModel, Vec<StepRecord>)> {
    ds.validate().into_result()?;
    let view = flatten(ds, kind.mode(), cfg.budget)?;
    let scaler = Standardizer::fit(&to_f32(&view.matrix));
    let x = scaler.normalize_matrix(&to_f32(&view.matrix));
    let (inner, history) = if kind.is_vae() {
        let mut vae = Vae::new(&cfg.vae(), view.spec.width())?;
        let h = vae.fit(&x, &units(&view.rows, ds.root().len()), opt, on_step)?;
        (BaselineInner::Vae(Box::new(vae)), h)
    } else {
        let mut pca = Pca::fit(&x, cfg.latent_dim)?;
        // Round to the stored precision so reloads match exactly.
        pca.mean.mapv_inplace(|v| v as f32 as f64);
        pca.components.mapv_inplace(|v| v as f32 as f64);
        pca.variances.iter_mut().for_each(|v| *v = *v as f32 as f64);
        (BaselineInner::Pca(pca), Vec::new())
    };
    Ok((
        BaselineModel {
            kind,
            config: cfg.clone(),
            spec: view.spec,
            scaler,
            inner,
        },
        history,
    ))
}

impl BaselineModel {
    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Latent means for flattened rows in original units.
    pub fn encode_rows(&self, rows: &Array2<f64>) -> Result<Array2<f64>> {
        let x = self.scaler.normalize_matrix(&to_f32(rows));
        match &self.inner {
            BaselineInner::Pca(p) => Ok(p.encode(&x)),
            BaselineInner::Vae(v) => Ok(v.encode(&x)?.0),
        }
    }

    /// Flattened rows in original units.
    pub fn decode_rows(&self, codes: &Array2<f64>) -> Result<Array2<f64>> {
        let y = match &self.inner {
            BaselineInner::Pca(p) => p.decode(codes),
            BaselineInner::Vae(v) => v.decode(codes)?,
        };
        Ok(self.scaler.denormalize_matrix(&y))
    }

    /// One code per flattened row of `group`, with the children of each row.
    pub fn encode_group(&self, group: &ScanGroup) -> Result<Vec<(Vec<f64>, Vec<usize>)>> {
        let rows = self.spec.group_rows(group)?;
        let flat: Vec<f64> = rows.iter().flat_map(|(r, _)| r.iter().copied()).collect();
        let m = Array2::from_shape_vec((rows.len(), self.spec.width()), flat).expect("row widths");
        let codes = self.encode_rows(&m)?;
        Ok(rows
            .into_iter()
            .zip(codes.rows())
            .map(|((_, children), c)| (c.to_vec(), children))
            .collect())
    }

    pub fn to_container(&self) -> Result<Container> {
        let header = serde_json::json!({
            "format_version": BASELINE_FORMAT_VERSION,
            "model": self.kind,
            "config": self.config,
            "flatten": self.spec,
        });
        let mut c = Container::new(BASELINE_KIND, header);
        c.push(Blob::from_vec("scaler.mean", self.scaler.mean.clone()));
        c.push(Blob::from_vec("scaler.std", self.scaler.std.clone()));
        match &self.inner {
            BaselineInner::Pca(p) => {
                c.push(Blob::from_vec("pca.mean", p.mean.iter().map(|&v| v as f32).collect()));
                c.push(Blob::from_f64("pca.components", &p.components));
                c.push(Blob::from_vec("pca.variances", p.variances.iter().map(|&v| v as f32).collect()));
            }
            BaselineInner::Vae(v) => {
                for id in v.params.ids() {
                    c.push(Blob::from_f64(v.params.name(id), v.params.value(id)));
                }
            }
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != BASELINE_KIND {
            return Err(Error::Format(format!("expected a '{BASELINE_KIND}' checkpoint, found '{}'", c.kind)));
        }
        let field = |k: &str| {
            c.config
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Format(format!("baseline checkpoint lacks '{k}'")))
        };
        let bad = |e: serde_json::Error| Error::Format(format!("bad baseline header: {e}"));
        let version: String = serde_json::from_value(field("format_version")?).map_err(bad)?;
        if version != BASELINE_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported baseline format '{version}'")));
        }
        let kind: BaselineKind = serde_json::from_value(field("model")?).map_err(bad)?;
        let config: BaselineConfig = serde_json::from_value(field("config")?).map_err(bad)?;
        let spec: FlattenSpec = serde_json::from_value(field("flatten")?).map_err(bad)?;
        let scaler = Standardizer {
            mean: c.blob("scaler.mean")?.data.clone(),
            std: c.blob("scaler.std")?.data.clone(),
        };
        let inner = if kind.is_vae() {
            let mut vae = Vae::new(&config.vae(), spec.width())?;
            let ids: Vec<_> = vae.params.ids().collect();
            for id in ids {
                let value = c.blob(vae.params.name(id))?.to_f64();
                if value.dim() != vae.params.value(id).dim() {
                    return Err(Error::Format(format!("blob '{}' has wrong shape", vae.params.name(id))));
                }
                vae.params.set(id, value);
            }
            BaselineInner::Vae(Box::new(vae))
        } else {
            let components = c.blob("pca.components")?.to_f64();
            BaselineInner::Pca(Pca {
                mean: c.blob("pca.mean")?.data.iter().map(|&v| v as f64).collect(),
                variances: c.blob("pca.variances")?.data.iter().map(|&v| v as f64).collect(),
                latent_dim: config.latent_dim,
                components,
            })
        };
        Ok(Self {
            kind,
            config,
            spec,
            scaler,
            inner,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Running per-record sums for overlap averaging.
struct Mean {
    sum: Array2<f64>,
    count: Vec<usize>,
}

impl Mean {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            sum: Array2::zeros((rows, cols)),
            count: vec![0; rows],
        }
    }

    fn add(&mut self, row: usize, values: ndarray::ArrayView1<'_, f64>) {
        let mut r = self.sum.row_mut(row);
        r += &values;
        self.count[row] += 1;
    }

    /// Uncovered rows are filled from `fill`.
    fn finish(mut self, fill: &[f64]) -> (Array2<f64>, Vec<bool>) {
        for (i, mut row) in self.sum.axis_iter_mut(Axis(0)).enumerate() {
            match self.count[i] {
                0 => row.iter_mut().zip(fill).for_each(|(r, f)| *r = *f),
                c => row.mapv_inplace(|v| v / c as f64),
            }
        }
        (self.sum, self.count.iter().map(|&c| c > 0).collect())
    }
}

/// Encodes every flattened row with its latent mean, decodes it and maps the
/// rows back onto the dataset's layers. Padded joint slots are dropped and
/// children held by several rows get the mean of their predictions.
pub fn baseline_reconstructions(ds: &MultiScaleDataset, model: &BaselineModel) -> Result<BaselineReconstruction> {
    let view = flatten_with(ds, &model.spec)?;
    let codes = model.encode_rows(&view.matrix)?;
    let pred = model.decode_rows(&codes)?;
    let (pd, cd) = (model.spec.parent_dim, model.spec.child_dim);
    let mut parents = Mean::new(ds.root().len(), pd);
    let mut children = Mean::new(ds.base().len(), cd);
    let mut latents = Mean::new(ds.base().len(), model.latent_dim());
    for (r, src) in view.rows.iter().enumerate() {
        let row = pred.row(r);
        parents.add(src.parent, row.slice(ndarray::s![..pd]));
        for (slot, &child) in src.children.iter().enumerate() {
            let start = pd + slot * cd;
            children.add(child, row.slice(ndarray::s![start..start + cd]));
            latents.add(child, codes.row(r));
        }
    }
    let mean_of = |l: usize| -> Vec<f64> {
        let recs = &ds.scales[l].records;
        let n = recs.nrows() as f64;
        recs.columns().into_iter().map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / n).collect()
    };
    let (parent_layer, parent_cov) = parents.finish(&mean_of(0));
    let (child_layer, child_cov) = children.finish(&mean_of(1));
    let (base_latents, _) = latents.finish(&vec![0.0; model.latent_dim()]);
    let row_parents = (model.spec.mode == FlattenMode::Concatenative).then(|| {
        (
            view.rows.iter().map(|s| s.parent).collect(),
            pred.slice(ndarray::s![.., ..pd]).to_owned(),
        )
    });
    Ok(BaselineReconstruction {
        layers: vec![parent_layer, child_layer],
        coverage: vec![parent_cov, child_cov],
        row_parents,
        codes,
        rows: view.rows,
        base_latents,
    })
}
