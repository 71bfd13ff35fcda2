use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::FusionNet;
use super::normalize::Standardizer;
use crate::container::{Blob, Container};
use crate::dataset::{MultiScaleDataset, ScanGroup};
use crate::diff::{Graph, ParamStore};
use crate::error::{Error, Result};

pub const MODEL_KIND: &str = "nested-fusion";
pub const MODEL_FORMAT_VERSION: &str = "1";

/// Latent distribution of one base-scale record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEncoding {
    pub base_index: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sample: Vec<f64>,
}

/// Per-term breakdown of the negative ELBO for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub total: f64,
    /// Unweighted negative log-likelihood per scale, coarsest first.
    pub nll: Vec<f64>,
    pub kl: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: String,
    model: ModelConfig,
    scales: Vec<ScaleHeader>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScaleHeader {
    id: String,
    dim: usize,
}

/// Architecture, parameters and normalisation statistics of a fusion model.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub norms: Vec<Standardizer>,
    pub params: ParamStore,
    net: FusionNet,
}

impl PartialEq for ModelCheckpoint {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.norms == other.norms
            && self.params == other.params
            && self.net.scale_ids == other.net.scale_ids
            && self.net.scale_dims == other.net.scale_dims
    }
}

impl ModelCheckpoint {
    /// Fresh model for `ds`: normalisation fitted to its scales, parameters
    /// seeded from `config.seed`.
    pub fn initialize(ds: &MultiScaleDataset, config: &ModelConfig) -> Result<Self> {
        let norms = ds.scales.iter().map(|s| Standardizer::fit(&s.records)).collect();
        let ids: Vec<String> = ds.scales.iter().map(|s| s.id.clone()).collect();
        let dims: Vec<usize> = ds.scales.iter().map(|s| s.dim()).collect();
        Self::with_norms(config, &ids, &dims, norms)
    }

    pub fn with_norms(config: &ModelConfig, scale_ids: &[String], scale_dims: &[usize], norms: Vec<Standardizer>) -> Result<Self> {
        if norms.len() != scale_dims.len() || norms.iter().zip(scale_dims).any(|(n, &d)| n.dim() != d) {
            return Err(Error::Shape("normalisation statistics do not match scale dims".into()));
        }
        let mut params = ParamStore::new(config.seed);
        let net = FusionNet::new(&mut params, config, scale_ids, scale_dims)?;
        Ok(Self {
            config: config.clone(),
            norms,
            params,
            net,
        })
    }

    pub fn net(&self) -> &FusionNet {
        &self.net
    }

    pub fn scale_ids(&self) -> &[String] {
        &self.net.scale_ids
    }

    pub fn scale_dims(&self) -> &[usize] {
        &self.net.scale_dims
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn check_dataset(&self, ds: &MultiScaleDataset) -> Result<()> {
        let ids: Vec<&str> = ds.scales.iter().map(|s| s.id.as_str()).collect();
        let dims: Vec<usize> = ds.scales.iter().map(|s| s.dim()).collect();
        if ids != self.scale_ids().iter().map(String::as_str).collect::<Vec<_>>() || dims != self.scale_dims() {
            return Err(Error::Validation(format!(
                "checkpoint scales {:?} {:?} do not match dataset {:?} {:?}",
                self.scale_ids(),
                self.scale_dims(),
                ids,
                dims
            )));
        }
        Ok(())
    }

    /// Token matrix (`nodes x token_dim`) for a group, in sequence order.
    pub fn tokenize(&self, group: &ScanGroup) -> Result<Array2<f64>> {
        let mut g = Graph::new(&self.params);
        let t = self.net.tokens(&mut g, group, &self.norms)?;
        Ok(g.value(t).clone())
    }

    /// One encoding per distinct base member. `noise` (`members x latent_dim`)
    /// drives `sample = mu + sigma * noise`; `None` means zero noise.
    pub fn encode(&self, group: &ScanGroup, noise: Option<&Array2<f64>>) -> Result<Vec<LatentEncoding>> {
        let mut g = Graph::new(&self.params);
        let enc = self.net.encode(&mut g, group, &self.norms)?;
        let mu = g.value(enc.mu);
        let sigma = g.value(enc.sigma);
        let dz = self.latent_dim();
        if let Some(e) = noise {
            if e.dim() != (enc.members.len(), dz) {
                return Err(Error::Shape(format!(
                    "noise shape {:?}, expected ({}, {dz})",
                    e.dim(),
                    enc.members.len()
                )));
            }
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Inference(format!(
                "non-finite encoder output for group {}",
                group.root_index()
            )));
        }
        Ok(enc
            .members
            .iter()
            .enumerate()
            .map(|(r, &base_index)| {
                let mu_r: Vec<f64> = mu.row(r).to_vec();
                let sigma_r: Vec<f64> = sigma.row(r).to_vec();
                let sample = match noise {
                    Some(e) => (0..dz).map(|d| mu_r[d] + sigma_r[d] * e[[r, d]]).collect(),
                    None => mu_r.clone(),
                };
                LatentEncoding {
                    base_index,
                    mu: mu_r,
                    sigma: sigma_r,
                    sample,
                }
            })
            .collect())
    }

    /// Base-scale predictions in original units, one row per latent row.
    pub fn decode_base_batch(&self, zs: &Array2<f64>) -> Result<Array2<f64>> {
        if zs.ncols() != self.latent_dim() {
            return Err(Error::Shape(format!("latents have {} dims, model uses {}", zs.ncols(), self.latent_dim())));
        }
        if zs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Inference("non-finite latent".into()));
        }
        let mut g = Graph::new(&self.params);
        let z = g.input(zs.clone());
        let y = self.net.decode_base(&mut g, z);
        let base = self.net.base_level();
        Ok(self.norms[base].denormalize_matrix(g.value(y)))
    }

    pub fn decode_base(&self, z: &[f64]) -> Result<Vec<f64>> {
        let zs = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row");
        Ok(self.decode_base_batch(&zs)?.into_raw_vec_and_offset().0)
    }

    /// Prediction for a coarse record at `scale_id` from the set of latents it covers.
    pub fn decode_aggregate(&self, zs: &[Vec<f64>], scale_id: &str) -> Result<Vec<f64>> {
        let level = self
            .scale_ids()
            .iter()
            .position(|s| s == scale_id)
            .ok_or_else(|| Error::InvalidReference(format!("unknown scale '{scale_id}'")))?;
        self.decode_aggregate_at(zs, level)
    }

    pub fn decode_aggregate_at(&self, zs: &[Vec<f64>], level: usize) -> Result<Vec<f64>> {
        if zs.is_empty() {
            return Err(Error::Shape("aggregate decoding needs at least one latent".into()));
        }
        let dz = self.latent_dim();
        if zs.iter().any(|z| z.len() != dz) {
            return Err(Error::Shape(format!("latents must have {dz} dims")));
        }
        let flat: Vec<f64> = zs.iter().flatten().copied().collect();
        let mut g = Graph::new(&self.params);
        let z = g.input(Array2::from_shape_vec((zs.len(), dz), flat).expect("rows"));
        let y = self.net.decode_aggregate(&mut g, z, level)?;
        Ok(self.norms[level].denormalize_matrix(g.value(y)).into_raw_vec_and_offset().0)
    }

    pub fn elbo(&self, group: &ScanGroup, eps: &Array2<f64>) -> Result<ElboTerms> {
        let mut g = Graph::new(&self.params);
        let vars = self.net.elbo(&mut g, group, &self.norms, eps)?;
        let total = g.scalar(vars.total);
        if !total.is_finite() {
            return Err(Error::Training {
                step: 0,
                message: format!("non-finite loss for group {}", group.root_index()),
            });
        }
        Ok(ElboTerms {
            total,
            nll: vars.nll.iter().map(|v| v.map(|v| g.scalar(v)).unwrap_or(0.0)).collect(),
            kl: g.scalar(vars.kl),
        })
    }

    /// Replaces the parameters, rounding them to `f32` so the checkpoint
    /// file holds them exactly.
    pub fn set_params(&mut self, mut params: ParamStore) {
        params.round_to_f32();
        assert_eq!(params.len(), self.params.len(), "parameter layout mismatch");
        self.params = params;
    }

    pub fn to_container(&self) -> Result<Container> {
        let header = Header {
            format_version: MODEL_FORMAT_VERSION.into(),
            model: self.config.clone(),
            scales: self
                .scale_ids()
                .iter()
                .zip(self.scale_dims())
                .map(|(id, &dim)| ScaleHeader { id: id.clone(), dim })
                .collect(),
        };
        let mut c = Container::new(MODEL_KIND, serde_json::to_value(header)?);
        for (l, n) in self.norms.iter().enumerate() {
            c.push(Blob::from_vec(format!("norm.{l}.mean"), n.mean.clone()));
            c.push(Blob::from_vec(format!("norm.{l}.std"), n.std.clone()));
        }
        for id in self.params.ids() {
            c.push(Blob::from_f64(self.params.name(id), self.params.value(id)));
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != MODEL_KIND {
            return Err(Error::Format(format!("expected a '{MODEL_KIND}' checkpoint, found '{}'", c.kind)));
        }
        let header: Header = serde_json::from_value(c.config.clone())
            .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
        if header.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model format '{}'", header.format_version)));
        }
        let ids: Vec<String> = header.scales.iter().map(|s| s.id.clone()).collect();
        let dims: Vec<usize> = header.scales.iter().map(|s| s.dim).collect();
        let norms = (0..dims.len())
            .map(|l| {
                Ok(Standardizer {
                    mean: c.blob(&format!("norm.{l}.mean"))?.data.clone(),
                    std: c.blob(&format!("norm.{l}.std"))?.data.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut model = Self::with_norms(&header.model, &ids, &dims, norms)?;
        let pids: Vec<_> = model.params.ids().collect();
        for id in pids {
            let blob = c.blob(model.params.name(id))?;
            let value = blob.to_f64();
            if value.dim() != model.params.value(id).dim() {
                return Err(Error::Format(format!("blob '{}' has wrong shape", blob.name)));
            }
            model.params.set(id, value);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}
