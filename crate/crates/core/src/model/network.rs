//! Parameter layout and graph construction for the fusion model.

use std::collections::BTreeMap;

use ndarray::Array2;

use super::config::ModelConfig;
use super::normalize::Standardizer;
use crate::dataset::{GroupNode, ScanGroup};
use crate::diff::{sinusoidal_positions, AttentionBlock, Graph, Init, LayerNorm, Linear, Mlp, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// Floor added to softplus outputs for latent standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-4;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Order-invariant decoder from a set of latents to one coarse record:
/// per-latent embedding, attention blocks without positions, mean pool, MLP.
#[derive(Debug, Clone)]
pub struct SetDecoder {
    embed: Linear,
    blocks: Vec<AttentionBlock>,
    norm: LayerNorm,
    head: Mlp,
}

impl SetDecoder {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, output: usize) -> Result<Self> {
        let embed = Linear::new(store, &format!("{name}.embed"), cfg.latent_dim, cfg.set_width, true);
        let blocks = (0..cfg.set_layers)
            .map(|i| AttentionBlock::new(store, &format!("{name}.block{i}"), cfg.set_width, cfg.heads, cfg.decoder_hidden))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(store, &format!("{name}.norm"), cfg.set_width);
        let head = Mlp::new(store, &format!("{name}.head"), cfg.set_width, &[cfg.decoder_hidden], output);
        Ok(Self {
            embed,
            blocks,
            norm,
            head,
        })
    }

    /// `zs` is `n x latent_dim`; returns `1 x output` in normalised units.
    pub fn forward(&self, g: &mut Graph, zs: Var) -> Result<Var> {
        let mut h = self.embed.forward(g, zs);
        for b in &self.blocks {
            h = b.forward(g, h)?;
        }
        let h = self.norm.forward(g, h);
        let pooled = g.mean_rows(h);
        Ok(self.head.forward(g, pooled))
    }
}

#[derive(Debug, Clone)]
pub struct FusionNet {
    pub config: ModelConfig,
    pub scale_ids: Vec<String>,
    pub scale_dims: Vec<usize>,
    pub token_dim: usize,
    token_maps: Vec<Linear>,
    type_embed: Vec<ParamId>,
    encoder: Vec<AttentionBlock>,
    encoder_norm: LayerNorm,
    mu_head: Linear,
    sigma_head: Linear,
    base_decoder: Mlp,
    set_decoders: Vec<SetDecoder>,
    obs_logvar: Vec<ParamId>,
}

/// Graph handles for one encoded group.
#[derive(Debug, Clone)]
pub struct EncodedGroup {
    /// `k x latent_dim`, one row per distinct base member.
    pub mu: Var,
    pub sigma: Var,
    /// Base-scale indices of the rows of `mu`/`sigma`.
    pub members: Vec<usize>,
    /// For each non-base node in sequence order: (level, node values, member rows of its base descendants).
    pub aggregates: Vec<(usize, Vec<f32>, Vec<usize>)>,
}

/// Scalar graph handles of the negative ELBO and its parts.
#[derive(Debug, Clone)]
pub struct ElboVars {
    pub total: Var,
    /// Negative log-likelihood per level (coarsest first), before weighting.
    pub nll: Vec<Option<Var>>,
    pub kl: Var,
}

impl FusionNet {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, scale_ids: &[String], scale_dims: &[usize]) -> Result<Self> {
        config.validate(scale_dims)?;
        if scale_ids.len() != scale_dims.len() || scale_dims.is_empty() {
            return Err(Error::Config("scale ids and dims must align and be nonempty".into()));
        }
        let token_dim = config.resolved_token_dim(scale_dims);
        let base = scale_dims.len() - 1;
        let mut token_maps = Vec::new();
        let mut type_embed = Vec::new();
        for (l, &d) in scale_dims.iter().enumerate() {
            token_maps.push(Linear::new(store, &format!("token.{l}"), d, token_dim, false));
            type_embed.push(store.add(format!("token.{l}.type"), (1, token_dim), Init::Uniform(0.1)));
        }
        let encoder = (0..config.encoder_layers)
            .map(|i| AttentionBlock::new(store, &format!("encoder.block{i}"), token_dim, config.heads, config.encoder_hidden))
            .collect::<Result<Vec<_>>>()?;
        let encoder_norm = LayerNorm::new(store, "encoder.norm", token_dim);
        let mu_head = Linear::new(store, "encoder.mu", token_dim, config.latent_dim, true);
        let sigma_head = Linear::new(store, "encoder.sigma", token_dim, config.latent_dim, true);
        let hidden = vec![config.decoder_hidden; config.decoder_layers];
        let base_decoder = Mlp::new(store, "decoder.base", config.latent_dim, &hidden, scale_dims[base]);
        let set_decoders = (0..base)
            .map(|l| SetDecoder::new(store, &format!("decoder.set{l}"), config, scale_dims[l]))
            .collect::<Result<Vec<_>>>()?;
        let obs_logvar = scale_dims
            .iter()
            .enumerate()
            .map(|(l, &d)| store.add(format!("obs.{l}.logvar"), (1, d), Init::Zeros))
            .collect();
        Ok(Self {
            config: config.clone(),
            scale_ids: scale_ids.to_vec(),
            scale_dims: scale_dims.to_vec(),
            token_dim,
            token_maps,
            type_embed,
            encoder,
            encoder_norm,
            mu_head,
            sigma_head,
            base_decoder,
            set_decoders,
            obs_logvar,
        })
    }

    pub fn base_level(&self) -> usize {
        self.scale_dims.len() - 1
    }

    fn check_node(&self, node: &GroupNode) -> Result<()> {
        let dim = self.scale_dims.get(node.level).ok_or_else(|| {
            Error::Shape(format!("node at level {} but model has {} scales", node.level, self.scale_dims.len()))
        })?;
        if node.values.len() != *dim {
            return Err(Error::Shape(format!(
                "record {} at scale '{}' has {} values, expected {dim}",
                node.index,
                self.scale_ids[node.level],
                node.values.len()
            )));
        }
        Ok(())
    }

    /// Token sequence in nested order: each record's token followed by the
    /// sequences of its children. Token = linear map of the normalised
    /// record plus a learned per-scale type vector.
    pub fn tokens(&self, g: &mut Graph, group: &ScanGroup, norms: &[Standardizer]) -> Result<Var> {
        let nodes = group.root.preorder();
        for n in &nodes {
            self.check_node(n)?;
        }
        let levels = self.scale_dims.len();
        let mut per_level: Vec<Vec<f64>> = vec![Vec::new(); levels];
        let mut counts = vec![0usize; levels];
        let mut slot = Vec::with_capacity(nodes.len());
        for n in &nodes {
            slot.push((n.level, counts[n.level]));
            counts[n.level] += 1;
            per_level[n.level].extend(norms[n.level].normalize_slice(&n.values));
        }
        let mut blocks = Vec::new();
        let mut offsets = vec![0usize; levels];
        let mut at = 0;
        for l in 0..levels {
            offsets[l] = at;
            if counts[l] == 0 {
                continue;
            }
            let x = Array2::from_shape_vec((counts[l], self.scale_dims[l]), std::mem::take(&mut per_level[l]))
                .expect("rows match counts");
            let x = g.input(x);
            let t = self.token_maps[l].forward(g, x);
            let ty = g.param(self.type_embed[l]);
            blocks.push(g.add_row(t, ty));
            at += counts[l];
        }
        let stacked = if blocks.len() == 1 { blocks[0] } else { g.concat_rows(&blocks) };
        let order: Vec<usize> = slot.iter().map(|&(l, j)| offsets[l] + j).collect();
        let seq = g.gather_rows(stacked, &order);
        if self.config.encoder_positions {
            let pos = g.input(sinusoidal_positions(order.len(), self.token_dim));
            Ok(g.add(seq, pos))
        } else {
            Ok(seq)
        }
    }

    pub fn encode(&self, g: &mut Graph, group: &ScanGroup, norms: &[Standardizer]) -> Result<EncodedGroup> {
        let base = self.base_level();
        let seq = self.tokens(g, group, norms)?;
        let nodes = group.root.preorder();

        let mut member_row: BTreeMap<usize, usize> = BTreeMap::new();
        let mut members = Vec::new();
        let mut positions = Vec::new();
        for (p, n) in nodes.iter().enumerate() {
            if n.level == base && !member_row.contains_key(&n.index) {
                member_row.insert(n.index, members.len());
                members.push(n.index);
                positions.push(p);
            }
        }
        if members.is_empty() {
            return Err(Error::Inference(format!(
                "group rooted at {} has no base-scale members",
                group.root_index()
            )));
        }

        let mut h = seq;
        for b in &self.encoder {
            h = b.forward(g, h)?;
        }
        let h = self.encoder_norm.forward(g, h);
        let hb = g.gather_rows(h, &positions);
        let mu = self.mu_head.forward(g, hb);
        let s = self.sigma_head.forward(g, hb);
        let s = g.softplus(s);
        let sigma = g.add_scalar(s, SIGMA_FLOOR);

        let aggregates = nodes
            .iter()
            .filter(|n| n.level < base)
            .map(|n| {
                let mut rows: Vec<usize> = descendants_at(n, base).iter().map(|i| member_row[i]).collect();
                rows.sort_unstable();
                rows.dedup();
                (n.level, n.values.clone(), rows)
            })
            .collect();
        Ok(EncodedGroup {
            mu,
            sigma,
            members,
            aggregates,
        })
    }

    /// `z` is `n x latent_dim`; output `n x base_dim` in normalised units.
    pub fn decode_base(&self, g: &mut Graph, z: Var) -> Var {
        self.base_decoder.forward(g, z)
    }

    pub fn decode_aggregate(&self, g: &mut Graph, zs: Var, level: usize) -> Result<Var> {
        let dec = self.set_decoders.get(level).ok_or_else(|| {
            Error::InvalidReference(format!("level {level} has no aggregate decoder (base or out of range)"))
        })?;
        if g.shape(zs).0 == 0 {
            return Err(Error::Shape("aggregate decoder needs at least one latent".into()));
        }
        dec.forward(g, zs)
    }

    /// Gaussian negative log-likelihood of normalised rows `x` (`n x d`)
    /// under mean `mean` and the learned per-dimension log-variance of `level`.
    fn gaussian_nll(&self, g: &mut Graph, x: Var, mean: Var, level: usize) -> Var {
        let (n, d) = g.shape(x);
        let logvar = g.param(self.obs_logvar[level]);
        let diff = g.sub(x, mean);
        let sq = g.square(diff);
        let neg = g.scale(logvar, -1.0);
        let prec = g.exp(neg);
        let weighted = g.mul_row(sq, prec);
        let fit = g.sum(weighted);
        let lv = g.sum(logvar);
        let lv = g.scale(lv, n as f64);
        let total = g.add(fit, lv);
        let total = g.add_scalar(total, (n * d) as f64 * LN_2PI);
        g.scale(total, 0.5)
    }

    /// Negative ELBO of one group for reparameterisation noise `eps`
    /// (`members x latent_dim`).
    pub fn elbo(&self, g: &mut Graph, group: &ScanGroup, norms: &[Standardizer], eps: &Array2<f64>) -> Result<ElboVars> {
        let enc = self.encode(g, group, norms)?;
        let k = enc.members.len();
        if eps.dim() != (k, self.config.latent_dim) {
            return Err(Error::Shape(format!(
                "noise shape {:?}, expected ({k}, {})",
                eps.dim(),
                self.config.latent_dim
            )));
        }
        let base = self.base_level();
        let e = g.input(eps.clone());
        let se = g.mul(enc.sigma, e);
        let z = g.add(enc.mu, se);

        let mut base_rows = Vec::with_capacity(k * self.scale_dims[base]);
        let nodes = group.root.preorder();
        for &m in &enc.members {
            let node = nodes
                .iter()
                .find(|n| n.level == base && n.index == m)
                .expect("member present");
            base_rows.extend(norms[base].normalize_slice(&node.values));
        }
        let xb = g.input(Array2::from_shape_vec((k, self.scale_dims[base]), base_rows).expect("base rows"));
        let pred = self.decode_base(g, z);
        let base_nll = self.gaussian_nll(g, xb, pred, base);

        let mut nll: Vec<Option<Var>> = vec![None; self.scale_dims.len()];
        nll[base] = Some(base_nll);
        for (level, values, rows) in &enc.aggregates {
            let zs = g.gather_rows(z, rows);
            let pred = self.decode_aggregate(g, zs, *level)?;
            let x = g.input(
                Array2::from_shape_vec((1, values.len()), norms[*level].normalize_slice(values)).expect("row"),
            );
            let term = self.gaussian_nll(g, x, pred, *level);
            nll[*level] = Some(match nll[*level] {
                Some(prev) => g.add(prev, term),
                None => term,
            });
        }

        let mu2 = g.square(enc.mu);
        let s2 = g.square(enc.sigma);
        let ln_s2 = g.ln(s2);
        let a = g.add(mu2, s2);
        let a = g.sub(a, ln_s2);
        let a = g.add_scalar(a, -1.0);
        let kl = g.sum(a);
        let kl = g.scale(kl, 0.5);

        let mut total = g.scale(kl, self.config.kl_weight);
        for (level, term) in nll.iter().enumerate() {
            if let Some(t) = term {
                let w = g.scale(*t, self.config.scale_weight(level));
                total = g.add(total, w);
            }
        }
        Ok(ElboVars { total, nll, kl })
    }
}

fn descendants_at(node: &GroupNode, level: usize) -> Vec<usize> {
    if node.level == level {
        return vec![node.index];
    }
    node.children.iter().flat_map(|c| descendants_at(c, level)).collect()
}
